"""Sampling references for tight inclusion boxes and Lipschitz constants.

Both quantities are estimated from below: the sampled box sits inside the
tight inclusion box and sampled difference quotients never exceed the true
local Lipschitz constant.  ``evaluate`` callables take a 2-D array of input
rows and return a 2-D array of output rows.
"""

import itertools
from dataclasses import dataclass

import numpy as np

from .exceptions import DimensionError
from .reachability import IntervalVector

MAX_GRID_DIM = 6
MAX_VERTEX_DIM = 12


@dataclass(frozen=True)
class SamplingPlan:
    strategy: str = "vertices-plus-uniform"
    total_samples: int = 1000
    points_per_dim: int = 5
    seed: int = 0

    def __post_init__(self):
        if self.strategy not in ("grid", "vertices-plus-uniform"):
            raise ValueError(f"unknown sampling strategy {self.strategy!r}")
        if self.total_samples < 2 or self.points_per_dim < 2:
            raise ValueError("sample counts must be at least 2")


def box_vertices(box):
    r = box.dim
    if r > MAX_VERTEX_DIM:
        raise DimensionError(f"refusing to enumerate 2^{r} vertices")
    corners = np.array(list(itertools.product((0, 1), repeat=r)), dtype=bool)
    return np.where(corners, box.hi, box.lo)


def sample_points(box, plan):
    """Deterministic sample set for ``box`` under ``plan``."""
    lo, hi = box.lo, box.hi
    if plan.strategy == "grid":
        if box.dim > MAX_GRID_DIM:
            raise DimensionError(f"grid sampling supports at most {MAX_GRID_DIM} input dimensions")
        axes = [np.linspace(a, b, plan.points_per_dim) for a, b in zip(lo, hi)]
        return np.array(list(itertools.product(*axes))).reshape(-1, box.dim)
    rng = np.random.default_rng(plan.seed)
    parts = []
    if box.dim <= MAX_VERTEX_DIM:
        parts.append(box_vertices(box))
    else:
        # too many corners; draw random ones instead
        pick = rng.integers(0, 2, size=(plan.total_samples, box.dim)).astype(bool)
        parts.append(np.where(pick, hi, lo))
    parts.append(rng.uniform(lo, hi, size=(plan.total_samples, box.dim)))
    return np.vstack(parts)


def sampled_tight_inclusion(evaluate, box, plan=SamplingPlan()):
    """Inner estimate of the tight inclusion box: componentwise min/max over samples."""
    Y = np.atleast_2d(evaluate(sample_points(box, plan)))
    return IntervalVector(Y.min(axis=0), Y.max(axis=0))


def empirical_lipschitz(evaluate, box, plan=SamplingPlan(total_samples=200)):
    """Largest sampled ``||f(x) - f(y)||_inf / ||x - y||_inf`` over sample pairs."""
    X = sample_points(box, plan)
    Y = np.atleast_2d(evaluate(X))
    best = 0.0
    chunk = 256
    for start in range(0, len(X), chunk):
        dx = np.abs(X[start:start + chunk, None, :] - X[None, :, :]).max(axis=2)
        dy = np.abs(Y[start:start + chunk, None, :] - Y[None, :, :]).max(axis=2)
        mask = dx > 0
        if np.any(mask):
            best = max(best, float((dy[mask] / dx[mask]).max()))
    return best
