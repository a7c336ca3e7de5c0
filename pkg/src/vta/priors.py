"""Temporal priors over frame pairings.

Priors are stored as log-densities so that far-off-diagonal entries of long
sequences stay strictly positive instead of underflowing to zero. Frame
indices in the position formulas are 1-based.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DegeneratePriorError, DimensionError, ParamError
from .sinkhorn import TransportPlan


@dataclass(frozen=True, eq=False)
class PriorMatrix:
    log_entries: np.ndarray
    normalized: bool = False

    def __post_init__(self):
        a = np.array(self.log_entries, dtype=np.float64)
        if a.ndim != 2 or a.size == 0:
            raise DimensionError("prior must be a non-empty matrix")
        if np.any(np.isnan(a)) or np.any(a == np.inf):
            raise ParamError("prior log-entries must be < inf and not NaN")
        a.setflags(write=False)
        object.__setattr__(self, "log_entries", a)

    @classmethod
    def from_entries(cls, entries, normalized=False) -> "PriorMatrix":
        p = np.asarray(entries, dtype=np.float64)
        if np.any(p < 0):
            raise ParamError("prior entries must be non-negative")
        with np.errstate(divide="ignore"):
            return cls(np.log(p), normalized)

    @property
    def entries(self) -> np.ndarray:
        return np.exp(self.log_entries)

    @property
    def shape(self):
        return self.log_entries.shape


@dataclass(frozen=True)
class PsiSchedule:
    psi_start: float = 1.0
    psi_end: float = 0.5
    decay_steps: int = 250

    def __post_init__(self):
        if not (0 <= self.psi_end <= self.psi_start <= 1):
            raise ParamError("need 0 <= psi_end <= psi_start <= 1")
        if self.decay_steps < 0:
            raise ParamError("decay_steps must be >= 0")

    @classmethod
    def from_hyperparams(cls, hp) -> "PsiSchedule":
        return cls(hp.psi_start, hp.psi_end, hp.psi_decay_steps)


def psi_at(schedule: PsiSchedule, step: int) -> float:
    """Linear ramp from ``psi_start`` to ``psi_end`` over ``decay_steps``, then flat."""
    if step < 0:
        raise ParamError("step must be >= 0")
    if schedule.decay_steps == 0 or step >= schedule.decay_steps:
        return float(schedule.psi_end)
    frac = step / schedule.decay_steps
    return float(schedule.psi_start + frac * (schedule.psi_end - schedule.psi_start))


def _log_gauss(dist, sigma):
    return -0.5 * (dist / sigma) ** 2 - math.log(sigma * math.sqrt(2 * math.pi))


def consistency_distance(n, m) -> np.ndarray:
    """Distance of each grid cell from the proportional diagonal i/n = j/m."""
    i = np.arange(1, n + 1)[:, None] / n
    j = np.arange(1, m + 1)[None, :] / m
    return np.abs(i - j) / math.sqrt(1.0 / n**2 + 1.0 / m**2)


def consistency_prior(n: int, m: int, sigma: float) -> PriorMatrix:
    if n < 1 or m < 1:
        raise DimensionError("n and m must be >= 1")
    if sigma <= 0:
        raise ParamError("sigma must be > 0")
    return PriorMatrix(_log_gauss(consistency_distance(n, m), sigma))


def argmax_partners(t):
    """Best column per row and best row per column; ties go to the lowest index."""
    t = np.asarray(t)
    return np.argmax(t, axis=1), np.argmax(t, axis=0)


def optimality_distance(t) -> np.ndarray:
    """Mean normalized offset of each cell from the plan's per-row/per-column argmaxes."""
    t = np.asarray(t, dtype=np.float64)
    n, m = t.shape
    j_o, i_o = argmax_partners(t)
    rows = np.arange(n)[:, None]
    cols = np.arange(m)[None, :]
    di = np.abs(rows - i_o[None, :]) / n
    dj = np.abs(cols - j_o[:, None]) / m
    return (di + dj) / (2.0 * math.sqrt(1.0 / n**2 + 1.0 / m**2))


def optimality_prior(plan, sigma: float) -> PriorMatrix:
    """Gaussian prior peaked where the plan's row and column argmaxes meet.

    ``plan`` must be the real-frame view; pass ``plan.real`` for an augmented
    plan so that argmaxes never point at the virtual frame.
    """
    t = plan.entries if isinstance(plan, TransportPlan) else np.asarray(plan, dtype=np.float64)
    if t.ndim != 2 or t.size == 0:
        raise DimensionError("optimality_prior needs a non-empty plan")
    if sigma <= 0:
        raise ParamError("sigma must be > 0")
    return PriorMatrix(_log_gauss(optimality_distance(t), sigma))


def mix_priors(pc: PriorMatrix, po: PriorMatrix, psi: float) -> PriorMatrix:
    """``psi * pc + (1 - psi) * po``, evaluated in log space."""
    if pc.shape != po.shape:
        raise DimensionError(f"prior shapes differ: {pc.shape} vs {po.shape}")
    if not 0 <= psi <= 1:
        raise ParamError("psi must lie in [0, 1]")
    if psi == 1:
        return PriorMatrix(pc.log_entries)
    if psi == 0:
        return PriorMatrix(po.log_entries)
    out = np.logaddexp(math.log(psi) + pc.log_entries, math.log1p(-psi) + po.log_entries)
    return PriorMatrix(out)


def _logmeanexp(a):
    top = np.max(a)
    if top == -np.inf:
        return -np.inf
    return top + math.log(np.mean(np.exp(a - top)))


def augment_and_normalize(p: PriorMatrix) -> PriorMatrix:
    """Add a virtual row/column holding the mean real entry, then normalize to sum 1."""
    a = p.log_entries
    fill = _logmeanexp(a)
    if fill == -np.inf:
        raise DegeneratePriorError("prior is identically zero")
    n, m = a.shape
    out = np.full((n + 1, m + 1), fill)
    out[:n, :m] = a
    top = out.max()
    out = out - (top + math.log(np.sum(np.exp(out - top))))
    return PriorMatrix(out, normalized=True)
