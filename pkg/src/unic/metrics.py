"""Evaluation metrics and throughput measurement.

Distances are reported in centimeters; inputs are meters. RMSE pools the
squared vertex displacement norm over every (frame, vertex) pair unless
the per-frame variant is asked for, which averages per-frame RMSEs and
weights short and long frames equally.
"""

import dataclasses
import json
import time

import numpy as np

from .collision import HashGrid, intersection_ratio
from .errors import DimensionError

M_TO_CM = 100.0


def _paired(pred, target):
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape or pred.shape[-1] != 3:
        raise DimensionError(
            f"prediction {pred.shape} and target {target.shape} must match (..., 3)")
    return pred, target


def rmse_cm(pred, target):
    """Pooled RMSE of vertex displacement norms, in cm."""
    pred, target = _paired(pred, target)
    sq = ((pred - target) ** 2).sum(axis=-1)
    return float(np.sqrt(sq.mean())) * M_TO_CM


def frame_rmse_cm(pred, target):
    """Per-frame RMSE, shape (T,); inputs are (T, V, 3)."""
    pred, target = _paired(pred, target)
    if pred.ndim != 3:
        raise DimensionError(f"expected (T, V, 3), got {pred.shape}")
    sq = ((pred - target) ** 2).sum(axis=-1)
    return np.sqrt(sq.mean(axis=1)) * M_TO_CM


def mean_frame_rmse_cm(pred, target):
    return float(frame_rmse_cm(pred, target).mean())


def _directed_hausdorff(src, dst, grid=None):
    if grid is None:
        if len(src) * len(dst) <= 4_000_000:
            d2 = ((src[:, None, :] - dst[None, :, :]) ** 2).sum(-1)
            return float(np.sqrt(d2.min(axis=1).max()))
        span = dst.max(axis=0) - dst.min(axis=0)
        cell = max(float(span.max()) / max(round(len(dst) ** (1 / 3)), 1), 1e-6)
        grid = HashGrid(dst, cell)
    _, d = grid.nearest_with_distance(src)
    return float(d.max())


def hausdorff_cm(a, b):
    """Symmetric Hausdorff distance between two point sets, in cm."""
    a = np.atleast_2d(np.asarray(a, dtype=np.float64))
    b = np.atleast_2d(np.asarray(b, dtype=np.float64))
    return max(_directed_hausdorff(a, b), _directed_hausdorff(b, a)) * M_TO_CM


@dataclasses.dataclass
class BenchResult:
    frames: int
    repeats: int
    fps: float          # median over repeats
    fps_min: float
    fps_max: float
    ms_per_frame: float  # median

    def to_dict(self):
        return dataclasses.asdict(self)


def bench_fps(step_fn, frames, repeats=3, clock=time.perf_counter,
              warmup=1):
    """Time `step_fn(frame_index)` over whole passes of `frames` calls.

    The clock is injectable so the measurement loop itself is testable.
    Returns median/min/max fps across repeats.
    """
    if frames <= 0 or repeats <= 0:
        raise ValueError("frames and repeats must be positive")
    for _ in range(warmup):
        step_fn(0)
    rates = []
    for _ in range(repeats):
        t0 = clock()
        for i in range(frames):
            step_fn(i)
        dt = clock() - t0
        rates.append(frames / dt if dt > 0 else float("inf"))
    rates.sort()
    med = rates[len(rates) // 2] if repeats % 2 else 0.5 * (
        rates[repeats // 2 - 1] + rates[repeats // 2])
    return BenchResult(frames=frames, repeats=repeats, fps=med,
                       fps_min=rates[0], fps_max=rates[-1],
                       ms_per_frame=1000.0 / med)


@dataclasses.dataclass
class EvalReport:
    frames: int
    vertices: int
    pooled_rmse_cm: float
    mean_frame_rmse_cm: float
    max_frame_rmse_cm: float
    hausdorff_cm: float
    intersection_pct: float

    def to_dict(self):
        return dataclasses.asdict(self)

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def table(self):
        rows = [
            ("frames", f"{self.frames}"),
            ("vertices", f"{self.vertices}"),
            ("pooled RMSE (cm)", f"{self.pooled_rmse_cm:.4f}"),
            ("mean frame RMSE (cm)", f"{self.mean_frame_rmse_cm:.4f}"),
            ("max frame RMSE (cm)", f"{self.max_frame_rmse_cm:.4f}"),
            ("max Hausdorff (cm)", f"{self.hausdorff_cm:.4f}"),
            ("frames intersecting (%)", f"{self.intersection_pct:.2f}"),
        ]
        width = max(len(k) for k, _ in rows)
        return "\n".join(f"{k:<{width}}  {v}" for k, v in rows)


def evaluate_rollout(pred, target, bodies=None):
    """Full report for a predicted sequence against ground truth.

    `pred`, `target`: (T, V, 3). `bodies`: optional BodySnapshots for the
    intersection percentage; omitted means the metric reads 0.
    """
    pred, target = _paired(pred, target)
    per_frame = frame_rmse_cm(pred, target)
    haus = max(hausdorff_cm(pred[t], target[t]) for t in range(len(pred)))
    pct = intersection_ratio(pred, bodies) if bodies is not None else 0.0
    return EvalReport(
        frames=int(pred.shape[0]),
        vertices=int(pred.shape[1]),
        pooled_rmse_cm=rmse_cm(pred, target),
        mean_frame_rmse_cm=float(per_frame.mean()),
        max_frame_rmse_cm=float(per_frame.max()),
        hausdorff_cm=haus,
        intersection_pct=float(pct),
    )
