"""Command-line interface: ``python -m transport_samplers <command>``."""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from . import theory
from .distributions import IllConditionedGaussian
from .runner import config as rconfig
from .runner import run_config
from .transport import Bogachev1DMap, FunnelFlow, InterpolatedGaussianFlow, SmoothedBogachev1DMap, tabulate_map


def _cmd_run(args):
    try:
        cfg = rconfig.load(args.config)
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    result = run_config(cfg, args.out, args.trace)
    out = rconfig.output_dir(cfg, args.out)
    print(f"{len(result.rows)} rows written to {out}")
    for f in result.failures:
        print(f"FAILED {f}", file=sys.stderr)
    return 1 if result.failures else 0


def _build_map(args):
    if args.map == "bogachev":
        return Bogachev1DMap(args.a, args.sigma, args.sigma_tilde, args.direction)
    if args.map == "smoothed-bogachev":
        return SmoothedBogachev1DMap(args.a, args.sigma, args.sigma_tilde, direction=args.direction)
    if args.map == "funnel":
        return FunnelFlow.from_beta(1 if args.dim is None else args.dim, args.beta)
    return InterpolatedGaussianFlow(args.t, IllConditionedGaussian(args.dim or 2))


def _cmd_dump_map(args):
    tmap = _build_map(args)
    grid = np.linspace(args.lo, args.hi, args.n)
    if tmap.dim == 1:
        table = tabulate_map(tmap, grid)
    else:
        z = np.zeros((args.n, tmap.dim))
        z[:, 0] = grid
        x, ld = tmap.forward_and_log_det(z)
        table = np.column_stack([grid, x[:, 0], ld])
    print("z,T(z),log_det")
    for row in table:
        print(",".join(repr(float(v)) for v in row))
    return 0


def _cmd_bound_calc(args):
    R = theory.radius_R(args.epsilon, args.beta, args.dim, args.sigma, args.m)
    c_r = args.c_r if args.c_r is not None else theory.c_r_gaussian(R, args.dim, args.lam)
    out = {
        "radius_R": R,
        "C_R": c_r,
        "threshold": theory.bound_condition_threshold(args.m),
        "condition_holds": bool(c_r <= theory.bound_condition_threshold(args.m)),
        "bound": theory.imh_mixing_bound(c_r, args.m, args.epsilon, args.beta),
    }
    print(json.dumps(out, indent=2))
    return 0


def _cmd_grad_check(args):
    from .distributions import StandardNormal
    from .neuralflow import CouplingFlow, grad_forward_kl, grad_reverse_kl_at, forward_kl_loss, reverse_kl_loss

    rng = np.random.default_rng(args.seed)
    flow = CouplingFlow(args.dim, args.blocks, args.hidden, init_scale=0.3, rng=rng)
    target = StandardNormal(args.dim)
    x = rng.standard_normal((16, args.dim)) * 1.3 + 0.2
    z = rng.standard_normal((16, args.dim))
    theta = flow.theta.copy()
    checks = {
        "forward_kl": (lambda th: forward_kl_loss(flow, x, th), grad_forward_kl(flow, x, theta)[1]),
        "reverse_kl": (lambda th: reverse_kl_loss(flow, target, z, th), grad_reverse_kl_at(flow, target, z, theta)[1]),
    }
    worst_all = 0.0
    for name, (f, g) in checks.items():
        worst = 0.0
        for i in range(theta.size):
            e = np.zeros_like(theta)
            e[i] = args.h
            fd = (f(theta + e) - f(theta - e)) / (2 * args.h)
            worst = max(worst, abs(fd - g[i]) / max(abs(fd), abs(g[i]), 1e-8))
        worst_all = max(worst_all, worst)
        print(f"{name}: {theta.size} parameters, max relative error {worst:.3e}")
    return 0 if worst_all < args.tol else 1


def _cmd_list(args):
    for name in rconfig.EXPERIMENTS:
        print(name)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="transport_samplers")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run an experiment configuration (JSON)")
    r.add_argument("config")
    r.add_argument("--out", default=None, help="output directory")
    r.add_argument("--trace", action="store_true", help="write per-step acceptance traces")
    r.set_defaults(func=_cmd_run)

    d = sub.add_parser("dump-map", help="tabulate a transport map on a grid")
    d.add_argument("map", choices=["bogachev", "smoothed-bogachev", "funnel", "gaussian"])
    d.add_argument("--a", type=float, default=2.0)
    d.add_argument("--sigma", type=float, default=1.0)
    d.add_argument("--sigma-tilde", type=float, default=1.0)
    d.add_argument("--direction", choices=["to_gaussian", "to_mixture"], default="to_gaussian")
    d.add_argument("--beta", type=float, default=1.0)
    d.add_argument("--t", type=float, default=0.5)
    d.add_argument("--dim", type=int, default=None)
    d.add_argument("--lo", type=float, default=-5.0)
    d.add_argument("--hi", type=float, default=5.0)
    d.add_argument("--n", type=int, default=101)
    d.set_defaults(func=_cmd_dump_map)

    b = sub.add_parser("bound-calc", help="evaluate the IMH mixing bound")
    b.add_argument("--epsilon", type=float, default=0.1)
    b.add_argument("--beta", type=float, default=2.0)
    b.add_argument("--dim", type=int, default=1)
    b.add_argument("--sigma", type=float, default=1.0, help="proposal scale")
    b.add_argument("--m", type=float, default=1.0, help="strong log-concavity constant")
    b.add_argument("--lam", type=float, default=0.0, help="Gaussian proposal scale offset")
    b.add_argument("--c-r", type=float, default=None, help="use this C_R instead of the Gaussian formula")
    b.set_defaults(func=_cmd_bound_calc)

    g = sub.add_parser("grad-check", help="finite-difference check of flow KL gradients")
    g.add_argument("--dim", type=int, default=2)
    g.add_argument("--blocks", type=int, default=2)
    g.add_argument("--hidden", type=int, default=8)
    g.add_argument("--h", type=float, default=1e-5)
    g.add_argument("--tol", type=float, default=1e-4)
    g.add_argument("--seed", type=int, default=0)
    g.set_defaults(func=_cmd_grad_check)

    ls = sub.add_parser("list-experiments", help="list experiment ids")
    ls.set_defaults(func=_cmd_list)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
