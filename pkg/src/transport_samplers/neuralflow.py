"""A small affine coupling flow with hand-written reverse-mode gradients.

Each block keeps one half of the coordinates fixed and applies
``y_t -> y_t * exp(s) + t`` to the other half, where ``s`` and ``t`` are
tanh perceptrons of the fixed half. Blocks alternate which half is fixed.
The scale output is bounded as ``s = cap * tanh(h)`` with a learnable cap
per block.

All parameters live in one flat vector so that Adam, finite-difference
checks and serialization see a single array.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .distributions import Gaussian, TargetDistribution
from .transport import TransportMap


class FlowNumericalError(FloatingPointError):
    pass


class TrainingDiverged(RuntimeError):
    def __init__(self, message, trace):
        super().__init__(message)
        self.trace = trace


class _MLP:
    """Layer shapes and slices of one perceptron inside the flat parameter vector."""

    def __init__(self, sizes, offset):
        self.sizes = list(sizes)
        self.slices = []
        for n_in, n_out in zip(self.sizes[:-1], self.sizes[1:]):
            w = slice(offset, offset + n_in * n_out)
            offset += n_in * n_out
            b = slice(offset, offset + n_out)
            offset += n_out
            self.slices.append((w, b, (n_out, n_in)))
        self.end = offset

    def weights(self, theta):
        return [(theta[w].reshape(shape), theta[b]) for w, b, shape in self.slices]

    def forward(self, theta, u):
        acts = [u]
        h = u
        layers = self.weights(theta)
        for i, (w, b) in enumerate(layers):
            h = h @ w.T + b
            if i < len(layers) - 1:
                h = np.tanh(h)
            acts.append(h)
        return h, acts

    def backward(self, theta, acts, g_out, grad):
        """Accumulate parameter gradients into ``grad``; return the input gradient."""
        layers = self.weights(theta)
        g = g_out
        for i in range(len(layers) - 1, -1, -1):
            w, _ = layers[i]
            ws, bs, shape = self.slices[i]
            inp = acts[i]
            grad[ws] += (g.T @ inp).ravel()
            grad[bs] += g.sum(axis=0)
            g = g @ w
            if i > 0:
                # acts[i] is the tanh output of the previous layer
                g = g * (1.0 - acts[i] ** 2)
        return g


@dataclass
class _BlockTape:
    cond: np.ndarray
    trans_in: np.ndarray
    trans_out: np.ndarray
    s: np.ndarray
    tanh_s: np.ndarray
    t: np.ndarray
    s_acts: list
    t_acts: list


class CouplingFlow(TransportMap):
    """Stack of affine coupling blocks with a Gaussian base distribution.

    Args:
        dim: Dimension (at least 2).
        n_blocks: Number of coupling blocks.
        hidden: Width of the hidden layers.
        n_layers: Linear layers per perceptron (``n_layers - 1`` tanh hidden layers).
        base: Gaussian base distribution, standard normal by default.
        init_scale: Standard deviation of the initial weights. Biases start
            at zero, so tiny values make the initial flow close to identity.
        rng: Generator for the weight initialization.
    """

    def __init__(self, dim: int, n_blocks: int = 4, hidden: int = 32, n_layers: int = 2,
                 base: Gaussian | None = None, init_scale: float = 1e-6,
                 rng: np.random.Generator | None = None):
        if dim < 2:
            raise ValueError("coupling flows need dim >= 2")
        if n_layers < 1 or n_blocks < 1 or hidden < 1:
            raise ValueError("n_blocks, hidden and n_layers must be positive")
        super().__init__(dim)
        self.n_blocks, self.hidden, self.n_layers = int(n_blocks), int(hidden), int(n_layers)
        self.base = base if base is not None else Gaussian(cov=np.eye(dim))
        if self.base.dim != dim:
            raise ValueError("base dimension does not match the flow")
        half = dim // 2
        first, second = np.arange(half), np.arange(half, dim)
        self.blocks = []
        offset = 0
        for k in range(self.n_blocks):
            cond, trans = (first, second) if k % 2 == 0 else (second, first)
            sizes = [len(cond)] + [self.hidden] * (self.n_layers - 1) + [len(trans)]
            s_net = _MLP(sizes, offset)
            t_net = _MLP(sizes, s_net.end)
            cap = t_net.end
            offset = cap + 1
            self.blocks.append((cond, trans, s_net, t_net, cap))
        self.n_params = offset
        self.theta = np.zeros(offset)
        rng = np.random.default_rng(0) if rng is None else rng
        for _, _, s_net, t_net, cap in self.blocks:
            for net in (s_net, t_net):
                for w, _, _ in net.slices:
                    self.theta[w] = init_scale * rng.standard_normal(w.stop - w.start)
            self.theta[cap] = 1.0

    def mask(self, k: int) -> np.ndarray:
        """Binary mask of block ``k``; 1 marks the coordinates left unchanged."""
        m = np.zeros(self.dim, dtype=int)
        m[self.blocks[k][0]] = 1
        return m

    def _nets(self, k, cond_vals, theta):
        _, _, s_net, t_net, cap = self.blocks[k]
        hs, s_acts = s_net.forward(theta, cond_vals)
        t, t_acts = t_net.forward(theta, cond_vals)
        tanh_s = np.tanh(hs)
        return theta[cap] * tanh_s, tanh_s, t, s_acts, t_acts

    @staticmethod
    def _finite(arr, k):
        if not np.all(np.isfinite(arr)):
            raise FlowNumericalError(f"non-finite values in coupling block {k}")

    # -- passes with tapes --------------------------------------------------

    def forward_with_tape(self, z, theta=None):
        """Map latent ``z`` to data space; returns ``(x, log_det, tapes)``."""
        theta = self.theta if theta is None else theta
        y = np.array(self._check(z), dtype=float)
        batch = y.shape[:-1]
        y = y.reshape(-1, self.dim)
        ld = np.zeros(y.shape[0])
        tapes = []
        for k, (cond, trans, *_rest) in enumerate(self.blocks):
            c = y[:, cond]
            s, tanh_s, t, s_acts, t_acts = self._nets(k, c, theta)
            u = y[:, trans]
            out = u * np.exp(s) + t
            self._finite(out, k)
            tapes.append(_BlockTape(c, u, out, s, tanh_s, t, s_acts, t_acts))
            y[:, trans] = out
            ld += s.sum(axis=1)
        return y.reshape(batch + (self.dim,)), ld.reshape(batch), tapes

    def inverse_with_tape(self, x, theta=None):
        """Map data ``x`` to latent space; returns ``(z, log_det_inverse, tapes)``.

        Tapes are listed in the order the blocks were applied (last block first).
        """
        theta = self.theta if theta is None else theta
        y = np.array(self._check(x), dtype=float)
        batch = y.shape[:-1]
        y = y.reshape(-1, self.dim)
        ld = np.zeros(y.shape[0])
        tapes = []
        for k in range(self.n_blocks - 1, -1, -1):
            cond, trans = self.blocks[k][0], self.blocks[k][1]
            c = y[:, cond]
            s, tanh_s, t, s_acts, t_acts = self._nets(k, c, theta)
            v = y[:, trans]
            out = (v - t) * np.exp(-s)
            self._finite(out, k)
            tapes.append(_BlockTape(c, v, out, s, tanh_s, t, s_acts, t_acts))
            y[:, trans] = out
            ld -= s.sum(axis=1)
        return y.reshape(batch + (self.dim,)), ld.reshape(batch), tapes

    def _net_backward(self, k, tape, g_s, g_t, theta, grad):
        _, _, s_net, t_net, cap = self.blocks[k]
        grad[cap] += np.sum(g_s * tape.tanh_s)
        g_hs = g_s * theta[cap] * (1.0 - tape.tanh_s**2)
        g_c = s_net.backward(theta, tape.s_acts, g_hs, grad)
        g_c = g_c + t_net.backward(theta, tape.t_acts, g_t, grad)
        return g_c

    def backward_forward(self, tapes, g_x, g_ld, theta=None):
        """Reverse pass through ``forward_with_tape``.

        Args:
            tapes: Tapes from ``forward_with_tape``.
            g_x: Loss gradient with respect to the output, shape ``(n, d)``.
            g_ld: Loss gradient with respect to the per-sample log-det, shape ``(n,)``.

        Returns:
            ``(parameter gradient, input gradient)``.
        """
        theta = self.theta if theta is None else theta
        grad = np.zeros(self.n_params)
        g = np.array(g_x, dtype=float).reshape(-1, self.dim)
        g_ld = np.broadcast_to(np.asarray(g_ld, dtype=float).reshape(-1, 1), (g.shape[0], 1))
        for k in range(self.n_blocks - 1, -1, -1):
            cond, trans = self.blocks[k][0], self.blocks[k][1]
            tape = tapes[k]
            g_out = g[:, trans]
            e = np.exp(tape.s)
            g_s = g_out * tape.trans_in * e + g_ld
            g_t = g_out
            g_c = self._net_backward(k, tape, g_s, g_t, theta, grad)
            g[:, trans] = g_out * e
            g[:, cond] += g_c
        return grad, g

    def backward_inverse(self, tapes, g_z, g_ld, theta=None):
        """Reverse pass through ``inverse_with_tape``; same conventions as
        ``backward_forward``."""
        theta = self.theta if theta is None else theta
        grad = np.zeros(self.n_params)
        g = np.array(g_z, dtype=float).reshape(-1, self.dim)
        g_ld = np.broadcast_to(np.asarray(g_ld, dtype=float).reshape(-1, 1), (g.shape[0], 1))
        for i in range(self.n_blocks - 1, -1, -1):
            k = self.n_blocks - 1 - i
            tape = tapes[i]
            cond, trans = self.blocks[k][0], self.blocks[k][1]
            g_out = g[:, trans]
            e_neg = np.exp(-tape.s)
            g_s = -g_out * tape.trans_out - g_ld
            g_t = -g_out * e_neg
            g_c = self._net_backward(k, tape, g_s, g_t, theta, grad)
            g[:, trans] = g_out * e_neg
            g[:, cond] += g_c
        return grad, g

    # -- TransportMap contract ---------------------------------------------

    def forward(self, z):
        return self.forward_with_tape(z)[0]

    def inverse(self, x):
        return self.inverse_with_tape(x)[0]

    def forward_and_log_det(self, z):
        x, ld, _ = self.forward_with_tape(z)
        return x, ld

    def inverse_and_log_det(self, x):
        z, ld, _ = self.inverse_with_tape(x)
        return z, ld

    def log_det_forward(self, z):
        return self.forward_with_tape(z)[1]

    def log_det_inverse(self, x):
        return self.inverse_with_tape(x)[1]

    def pullback_score(self, z, v):
        z = self._check(z)
        _, _, tapes = self.forward_with_tape(z)
        n = int(np.prod(z.shape[:-1]))
        _, g = self.backward_forward(tapes, np.asarray(v).reshape(-1, self.dim), np.ones(n))
        return g.reshape(z.shape)

    def vjp(self, z, v):
        z = self._check(z)
        _, _, tapes = self.forward_with_tape(z)
        n = int(np.prod(z.shape[:-1]))
        _, g = self.backward_forward(tapes, np.asarray(v).reshape(-1, self.dim), np.zeros(n))
        return g.reshape(z.shape)

    def grad_log_det_forward(self, z):
        z = self._check(z)
        _, _, tapes = self.forward_with_tape(z)
        n = int(np.prod(z.shape[:-1]))
        _, g = self.backward_forward(tapes, np.zeros((n, self.dim)), np.ones(n))
        return g.reshape(z.shape)

    # -- serialization ------------------------------------------------------

    def to_text(self) -> str:
        lines = [
            "coupling-flow 1",
            f"dim {self.dim}",
            f"blocks {self.n_blocks}",
            f"hidden {self.hidden}",
            f"layers {self.n_layers}",
            "base_mean " + " ".join(repr(float(v)) for v in self.base.mean),
            "base_cov " + " ".join(repr(float(v)) for v in self.base.cov.ravel()),
            f"params {self.n_params}",
        ]
        lines.extend(repr(float(v)) for v in self.theta)
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "CouplingFlow":
        lines = text.splitlines()
        if not lines or lines[0].strip() != "coupling-flow 1":
            raise ValueError("not a serialized coupling flow")
        header = {}
        i = 1
        while i < len(lines):
            key, _, rest = lines[i].partition(" ")
            header[key] = rest
            i += 1
            if key == "params":
                break
        dim = int(header["dim"])
        mean = np.array([float(v) for v in header["base_mean"].split()])
        cov = np.array([float(v) for v in header["base_cov"].split()]).reshape(dim, dim)
        flow = cls(dim, int(header["blocks"]), int(header["hidden"]), int(header["layers"]),
                   base=Gaussian(mean=mean, cov=cov))
        n = int(header["params"])
        values = np.array([float(v) for v in lines[i:i + n]])
        if values.size != flow.n_params:
            raise ValueError("parameter count does not match the architecture")
        flow.theta = values
        return flow

    def save(self, path) -> None:
        with open(path, "w", encoding="ascii") as fh:
            fh.write(self.to_text())

    @classmethod
    def load(cls, path) -> "CouplingFlow":
        with open(path, encoding="ascii") as fh:
            return cls.from_text(fh.read())

    def copy(self) -> "CouplingFlow":
        other = CouplingFlow.__new__(CouplingFlow)
        other.__dict__.update(self.__dict__)
        other.theta = self.theta.copy()
        return other


# ---------------------------------------------------------------------------
# Objectives


def forward_kl_loss(flow: CouplingFlow, x, theta=None) -> float:
    """Negative mean log push-forward density of data ``x``."""
    z, ld, _ = flow.inverse_with_tape(x, theta)
    return float(-np.mean(flow.base.logpdf(z) + ld))


def grad_forward_kl(flow: CouplingFlow, x, theta=None):
    """Loss and exact parameter gradient of ``forward_kl_loss``."""
    x = np.asarray(x, dtype=float)
    if x.shape[0] == 0:
        raise ValueError("empty batch")
    z, ld, tapes = flow.inverse_with_tape(x, theta)
    n = x.shape[0]
    loss = -np.mean(flow.base.logpdf(z) + ld)
    if not np.isfinite(loss):
        raise FlowNumericalError("non-finite forward KL loss")
    g_z = -flow.base.grad_logpdf(z) / n
    grad, _ = flow.backward_inverse(tapes, g_z, np.full(n, -1.0 / n), theta)
    return float(loss), grad


def reverse_kl_loss(flow: CouplingFlow, target: TargetDistribution, z, theta=None) -> float:
    """Mean of ``log rho(z) - log|J_T(z)| - log pi(T(z))`` over latent ``z``."""
    x, ld, _ = flow.forward_with_tape(z, theta)
    return float(np.mean(flow.base.logpdf(z) - ld - target.logpdf(x)))


def grad_reverse_kl_at(flow: CouplingFlow, target: TargetDistribution, z, theta=None):
    """Loss and reparameterized gradient of ``reverse_kl_loss`` at fixed ``z``."""
    z = np.asarray(z, dtype=float)
    n = z.shape[0]
    x, ld, tapes = flow.forward_with_tape(z, theta)
    loss = np.mean(flow.base.logpdf(z) - ld - target.logpdf(x))
    if not np.isfinite(loss):
        raise FlowNumericalError("non-finite reverse KL loss")
    g_x = -target.grad_logpdf(x) / n
    grad, _ = flow.backward_forward(tapes, g_x, np.full(n, -1.0 / n), theta)
    return float(loss), grad


def grad_reverse_kl(flow: CouplingFlow, target: TargetDistribution,
                    rng: np.random.Generator, batch: int, theta=None):
    """Reverse KL gradient with a fresh batch of base draws."""
    return grad_reverse_kl_at(flow, target, flow.base.sample(rng, batch), theta)


# ---------------------------------------------------------------------------
# Optimization


@dataclass
class AdamState:
    lr: float
    m: np.ndarray
    v: np.ndarray
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros(cls, n: int, lr: float) -> "AdamState":
        return cls(lr=lr, m=np.zeros(n), v=np.zeros(n))


def adam_step(state: AdamState, params: np.ndarray, grad: np.ndarray):
    """One bias-corrected Adam update; returns new parameters and mutates ``state``."""
    if grad.shape != params.shape or state.m.shape != params.shape:
        raise ValueError("shape mismatch between parameters, gradient and state")
    state.step += 1
    state.m = state.beta1 * state.m + (1.0 - state.beta1) * grad
    state.v = state.beta2 * state.v + (1.0 - state.beta2) * grad * grad
    m_hat = state.m / (1.0 - state.beta1**state.step)
    v_hat = state.v / (1.0 - state.beta2**state.step)
    return params - state.lr * m_hat / (np.sqrt(v_hat) + state.eps), state


@dataclass
class TrainingConfig:
    """Settings for ``train``.

    ``lr_decay`` multiplies the learning rate when the loss has not improved
    on its best value for ``patience`` consecutive iterations.
    """

    objective: str = "forward_kl"
    batch_size: int = 256
    n_iter: int = 1000
    lr: float = 1e-3
    lr_decay: float = 0.5
    patience: int = 200
    check_every: int = 500

    def __post_init__(self):
        if self.objective not in ("forward_kl", "reverse_kl"):
            raise ValueError(f"unknown objective {self.objective!r}")
        for name in ("batch_size", "n_iter", "lr", "lr_decay", "patience", "check_every"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")


@dataclass
class TrainingResult:
    flow: CouplingFlow
    losses: list = field(default_factory=list)
    lrs: list = field(default_factory=list)
    roundtrip_errors: list = field(default_factory=list)


def train(flow: CouplingFlow, target: TargetDistribution, config: TrainingConfig,
          rng: np.random.Generator, data=None) -> TrainingResult:
    """Fit ``flow`` in place by Adam on the configured KL objective.

    Args:
        flow: Flow to train; its parameters are updated in place.
        target: Target distribution. Forward KL draws exact samples from it
            unless ``data`` is given; reverse KL needs its gradient.
        config: Optimizer and scheduler settings.
        rng: Random stream for batches.
        data: Optional sample pool (array) or callable ``(rng, n) -> samples``
            for forward KL.

    Raises:
        TrainingDiverged: if the loss becomes non-finite.
    """
    state = AdamState.zeros(flow.n_params, config.lr)
    result = TrainingResult(flow)
    best, since_best = math.inf, 0
    for it in range(1, config.n_iter + 1):
        try:
            if config.objective == "forward_kl":
                if data is None:
                    batch = target.sample(rng, config.batch_size)
                elif callable(data):
                    batch = data(rng, config.batch_size)
                else:
                    batch = data[rng.integers(0, len(data), config.batch_size)]
                loss, grad = grad_forward_kl(flow, batch)
            else:
                loss, grad = grad_reverse_kl(flow, target, rng, config.batch_size)
        except FlowNumericalError as exc:
            raise TrainingDiverged(f"training diverged at iteration {it}: {exc}",
                                   result.losses) from exc
        if not (np.isfinite(loss) and np.all(np.isfinite(grad))):
            raise TrainingDiverged(f"training diverged at iteration {it}", result.losses)
        result.losses.append(loss)
        result.lrs.append(state.lr)
        flow.theta, state = adam_step(state, flow.theta, grad)
        if loss < best:
            best, since_best = loss, 0
        else:
            since_best += 1
            if since_best >= config.patience:
                state.lr *= config.lr_decay
                since_best = 0
        if it % config.check_every == 0:
            z = flow.base.sample(rng, 256)
            result.roundtrip_errors.append(float(np.max(np.abs(flow.inverse(flow.forward(z)) - z))))
    return result
