"""Wall-time scaling of the inference step against parameter count.

The update cost is supposed to grow linearly in the number of weight
parameters; this measures one forward+inference step on dense nets of
increasing width and fits a straight line.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .inference import ObservationModel, infer_minibatch
from .network import build, parse_config


@dataclass
class ScalingPoint:
    width: int
    param_count: int
    seconds: float


@dataclass
class ScalingReport:
    points: list[ScalingPoint]
    slope: float
    intercept: float
    r_squared: float


def _dense_config(width: int, n_in: int = 64, n_out: int = 10):
    return parse_config(f"""
input {n_in}x1x1
fc {width}x1x1 - - - relu
fc {width}x1x1 - - - relu
fc {width}x1x1 - - - relu
output {n_out}x1x1 - - - -
""", name=f"bench-{width}", output_kind="regression")


def run_scaling(widths=(64, 128, 256, 512), batch: int = 16, repeats: int = 5,
                seed: int = 0) -> ScalingReport:
    """Time forward+inference per width; fit seconds ~ parameter count."""
    rng = np.random.default_rng(seed)
    points = []
    for width in widths:
        cfg = _dense_config(width)
        net, params = build(cfg, seed=seed)
        x = rng.random((batch, net.n_in), dtype=np.float32)
        y = rng.random((batch, net.n_out), dtype=np.float32)
        obs = ObservationModel(1.0)
        infer_minibatch(net, params, x, y, obs)  # warm-up
        times = []
        for _ in range(repeats):
            t0 = time.perf_counter()
            infer_minibatch(net, params, x, y, obs)
            times.append(time.perf_counter() - t0)
        points.append(ScalingPoint(width, params.count, float(np.median(times))))
    counts = np.array([p.param_count for p in points], dtype=np.float64)
    secs = np.array([p.seconds for p in points])
    slope, intercept = np.polyfit(counts, secs, 1)
    fitted = slope * counts + intercept
    ss_res = float(np.sum((secs - fitted) ** 2))
    ss_tot = float(np.sum((secs - secs.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return ScalingReport(points, float(slope), float(intercept), r2)
