"""Result rows and their CSV/JSON persistence."""

from __future__ import annotations

import csv
import json
import os
from dataclasses import asdict, dataclass

HEADER = ("experiment", "sampler", "param", "metric", "value", "seed", "wall_ms")


@dataclass(frozen=True)
class ResultRow:
    experiment: str
    sampler: str
    param: str
    metric: str
    value: float
    seed: int
    wall_ms: float = 0.0

    def key(self):
        return (self.experiment, self.sampler, self.param, self.metric, self.seed)


def sort_rows(rows):
    return sorted(rows, key=ResultRow.key)


def _fmt(v: float) -> str:
    # repr gives the shortest string that round-trips the double
    return repr(float(v))


def emit_csv(rows, path, record_wall_time: bool = False) -> None:
    """Write rows in canonical order.

    Wall times are written as 0 unless ``record_wall_time`` is set, so that
    reruns with the same seed give identical bytes.
    """
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(HEADER)
        for r in sort_rows(rows):
            wall = r.wall_ms if record_wall_time else 0.0
            w.writerow([r.experiment, r.sampler, r.param, r.metric, _fmt(r.value), r.seed, _fmt(wall)])


def read_csv(path):
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = tuple(next(reader))
        if header != HEADER:
            raise ValueError(f"unexpected header {header}")
        return [ResultRow(e, s, p, m, float(v), int(sd), float(wm)) for e, s, p, m, v, sd, wm in reader]


def emit_json(rows, path, config: dict, extra: dict | None = None) -> None:
    """Rows (with measured wall times) plus the resolved configuration."""
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    payload = {
        "config": config,
        "rows": [asdict(r) for r in sort_rows(rows)],
    }
    if extra:
        payload.update(extra)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True, default=float)
        fh.write("\n")
