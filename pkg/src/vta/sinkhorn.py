"""Entropy-regularized optimal transport (Sinkhorn-Knopp matrix scaling).

The solver starts with plain kernel scaling. When the kernel would underflow
or a scaling vector leaves ``[1e-100, 1e100]`` it switches to scaling a
stabilized kernel, periodically absorbing the scalings into dual potentials;
full log-sum-exp updates remain as a last resort. Cold starts far below the
cost scale first solve a few warmer problems and carry their potentials down.

Scaling converges linearly at a rate that approaches one as the plan nears a
permutation, so on problems small enough for a dense solve the iterations
switch to damped Newton steps on the dual after a short scaling phase. Each
Newton step counts as one iteration.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DimensionError, ParamError

log = logging.getLogger(__name__)

_SCALE_LO, _SCALE_HI = 1e-100, 1e100
_ABSORB = 30.0  # |log| of a scaling that triggers absorption into the potentials
# exp(-230) ~ 1e-100: beyond this spread the kernel is switched off up front
_MAX_KERNEL_EXPONENT = 230.0
# temperature annealing for cold starts: first stage at spread / 50, then halve
_ANNEAL_START, _ANNEAL_FACTOR, _ANNEAL_TOL = 50.0, 0.5, 1e-4
# Newton steps are used while rows + columns stay below this
_NEWTON_MAX_DIM = 600
_KERNEL_SWEEPS = 200  # plain sweeps tried before Newton steps take over
# relative ridge on the reduced Hessian; its near-null directions carry no marginal error
_NEWTON_RIDGE = 1e-10
_ARMIJO = 1e-4


@dataclass(frozen=True, eq=False)
class TransportPlan:
    entries: np.ndarray
    row_marginal: np.ndarray
    col_marginal: np.ndarray
    augmented: bool = False
    converged: bool = True
    n_iter: int = 0
    marginal_error: float = 0.0
    # dual potentials (f, g) with entries = exp((f_i + g_j - C_ij) / upsilon), when known
    potentials: tuple | None = None

    def __post_init__(self):
        t = np.array(self.entries, dtype=np.float64)
        if t.ndim != 2 or t.size == 0:
            raise DimensionError("transport plan must be a non-empty matrix")
        if t.shape != (len(self.row_marginal), len(self.col_marginal)):
            raise DimensionError("plan shape does not match its marginals")
        t.setflags(write=False)
        object.__setattr__(self, "entries", t)
        object.__setattr__(self, "row_marginal", np.asarray(self.row_marginal, dtype=np.float64))
        object.__setattr__(self, "col_marginal", np.asarray(self.col_marginal, dtype=np.float64))

    @property
    def shape(self):
        return self.entries.shape

    @property
    def real(self) -> np.ndarray:
        """The real-frame block (drops the virtual row/column when augmented)."""
        return self.entries[:-1, :-1] if self.augmented else self.entries

    @classmethod
    def from_array(cls, entries, augmented=False) -> "TransportPlan":
        t = np.asarray(entries, dtype=np.float64)
        return cls(t, t.sum(axis=1), t.sum(axis=0), augmented=augmented)


def _lse(a, axis):
    m = np.max(a, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    out = np.log(np.sum(np.exp(a - m), axis=axis, keepdims=True)) + m
    return np.squeeze(out, axis=axis)


def _check_inputs(cost, row_m, col_m, upsilon):
    C = np.asarray(cost, dtype=np.float64)
    a = np.asarray(row_m, dtype=np.float64)
    b = np.asarray(col_m, dtype=np.float64)
    if C.ndim != 2 or C.shape != (a.size, b.size):
        raise DimensionError(f"cost shape {C.shape} does not match marginals ({a.size}, {b.size})")
    if upsilon <= 0:
        raise ParamError("upsilon must be > 0")
    if np.any(a <= 0) or np.any(b <= 0):
        raise ParamError("marginal entries must be > 0; drop zero-mass frames before solving")
    if not np.all(np.isfinite(C)):
        raise ParamError("cost matrix has non-finite entries")
    return C, a, b


def sinkhorn_solve(cost, row_m, col_m, upsilon, max_iter=1000, tol=1e-6, augmented=False, init=None):
    """Minimize ``<T, C> - upsilon * h(T)`` over couplings of ``row_m`` and ``col_m``.

    Stops once the max-norm row-marginal violation (columns are exact after
    each sweep) drops to ``tol``. Running out of iterations is not an error:
    the returned plan carries ``converged=False``. ``init`` optionally gives
    starting dual potentials ``(f, g)``, e.g. ``plan.potentials`` from a
    previous solve on a similar problem; the answer is the same up to ``tol``.
    """
    C, a, b = _check_inputs(cost, row_m, col_m, upsilon)
    # shifting the cost by a constant leaves the optimal plan unchanged
    shift = C.min()
    C = C - shift
    newton = len(a) + len(b) <= _NEWTON_MAX_DIM
    f = g = None
    it = 0
    err = np.inf
    if init is not None:
        f = np.asarray(init[0], dtype=np.float64) - shift
        g = np.asarray(init[1], dtype=np.float64)
        if f.shape != a.shape or g.shape != b.shape:
            raise DimensionError("initial potentials do not match the marginals")
        if not (np.all(np.isfinite(f)) and np.all(np.isfinite(g))):
            f = g = None
    if f is None and C.max() / upsilon < _MAX_KERNEL_EXPONENT:
        K = np.exp(-C / upsilon)
        u = np.ones_like(a)
        v = np.ones_like(b)
        sweeps = min(max_iter, _KERNEL_SWEEPS) if newton else max_iter
        while it < sweeps:
            with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
                u_new = a / (K @ v)
                v_new = b / (K.T @ u_new)
            lo = min(u_new.min(), v_new.min())
            hi = max(u_new.max(), v_new.max())
            if not (lo > _SCALE_LO and hi < _SCALE_HI):
                log.debug("scaling left safe range at iter %d, switching to stabilized iterations", it)
                break
            u, v = u_new, v_new
            it += 1
            err = np.max(np.abs(u * (K @ v) - a))
            if err <= tol:
                break
        if err <= tol or it >= max_iter:
            T = u[:, None] * K * v[None, :]
            pots = (upsilon * np.log(u) + shift, upsilon * np.log(v))
            return TransportPlan(T, a, b, augmented, bool(err <= tol), it, float(err), pots)
        f, g = upsilon * np.log(u), upsilon * np.log(v)
    if f is None:
        # c-transform start: every row and column of the stabilized kernel holds a 1
        f = C.min(axis=1)
        g = (C - f[:, None]).min(axis=0)
        # at a cold temperature potentials move O(upsilon) per sweep, so approach it in stages;
        # the stages share at most half of the budget
        eps = C.max() / _ANNEAL_START
        anneal_end = max_iter // 2
        while eps > upsilon and it < anneal_end:
            f, g, it, _ = _polish(C, a, b, eps, f, g, it, anneal_end, max(tol, _ANNEAL_TOL), newton)
            eps *= _ANNEAL_FACTOR
    f, g, it, err = _polish(C, a, b, upsilon, f, g, it, max_iter, tol, newton)
    T = np.exp((f[:, None] + g[None, :] - C) / upsilon)
    if not np.all(np.isfinite(T)):
        raise FloatingPointError("sinkhorn produced non-finite plan")
    return TransportPlan(T, a, b, augmented, bool(err <= tol), it, float(err), (f + shift, g))


def _polish(C, a, b, upsilon, f, g, it, max_iter, tol, newton):
    """Newton steps where allowed, then stabilized scaling for whatever budget is left."""
    if newton:
        f, g, it, err = _newton(C, a, b, upsilon, f, g, it, max_iter, tol)
        if err <= tol or it >= max_iter:
            return f, g, it, err
        log.debug("newton steps stalled at iter %d, continuing with scaling", it)
    return _stabilized(C, a, b, upsilon, f, g, it, max_iter, tol)


def _newton(C, a, b, upsilon, f, g, it, max_iter, tol):
    """Damped Newton ascent on the dual, each step followed by an exact column update.

    The step is backtracked on the squared marginal residual, for which the
    Newton direction is always a descent direction. Stops early when no step
    length helps; the caller then falls back to scaling.
    """
    n = len(a)
    log_b = np.log(b)

    def columns(f):
        return upsilon * (log_b - _lse((f[:, None] - C) / upsilon, axis=0))

    def plan(f, g):
        with np.errstate(over="ignore"):
            return np.exp((f[:, None] + g[None, :] - C) / upsilon)

    g = columns(f)
    T = plan(f, g)
    err = np.abs(T.sum(axis=1) - a).max()
    ridge = np.eye(n + len(b) - 1)
    while err > tol and it < max_iter:
        r, c = T.sum(axis=1), T.sum(axis=0)
        resid = np.concatenate([a - r, b - c])
        # the dual is invariant under f + s, g - s: pin the last column potential
        H = np.block([[np.diag(r), T], [T.T, np.diag(c)]])[:-1, :-1]
        try:
            step = np.linalg.solve(H + _NEWTON_RIDGE * np.abs(H).max() * ridge, upsilon * resid[:-1])
        except np.linalg.LinAlgError:
            break
        df, dg = step[:n], np.append(step[n:], 0.0)
        base = resid @ resid
        t = 1.0
        while t > 1e-10:
            fn, gn = f + t * df, g + t * dg
            Tn = plan(fn, gn)
            with np.errstate(over="ignore", invalid="ignore"):
                rn = np.concatenate([a - Tn.sum(axis=1), b - Tn.sum(axis=0)])
                value = rn @ rn
            if np.isfinite(value) and value <= (1 - _ARMIJO * t) * base:
                break
            t *= 0.5
        else:
            break
        f = fn
        g = columns(f)
        T = plan(f, g)
        it += 1
        err = np.abs(T.sum(axis=1) - a).max()
    return f, g, it, err


def _stabilized(C, a, b, upsilon, f, g, it, max_iter, tol):
    """Scaling iterations on ``exp((f + g - C) / upsilon)``, folding the scalings
    into the potentials ``f, g`` whenever they grow large."""
    def kernel():
        return np.exp((f[:, None] + g[None, :] - C) / upsilon)

    K = kernel()
    u = np.ones_like(a)
    v = np.ones_like(b)
    err = np.inf
    big, small = np.exp(_ABSORB), np.exp(-_ABSORB)
    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        while it < max_iter:
            u = a / (K @ v)
            v = b / (K.T @ u)
            lo = min(u.min(), v.min())
            hi = max(u.max(), v.max())
            # NaN fails both comparisons; zero or inf fails one
            if not (lo > 0 and hi < np.inf):
                return _log_domain(C, a, b, upsilon, f, g, it, max_iter, tol)
            it += 1
            if hi > big or lo < small:
                f = f + upsilon * np.log(u)
                g = g + upsilon * np.log(v)
                K = kernel()
                u = np.ones_like(a)
                v = np.ones_like(b)
            err = np.abs(u * (K @ v) - a).max()
            if err <= tol:
                break
    f = f + upsilon * np.log(u)
    g = g + upsilon * np.log(v)
    return f, g, it, err


def _log_domain(C, a, b, upsilon, f, g, it, max_iter, tol):
    log_a, log_b = np.log(a), np.log(b)
    err = np.inf
    while it < max_iter:
        f = upsilon * (log_a - _lse((g[None, :] - C) / upsilon, axis=1))
        g = upsilon * (log_b - _lse((f[:, None] - C) / upsilon, axis=0))
        it += 1
        rows = np.exp(_lse((f[:, None] + g[None, :] - C) / upsilon, axis=1))
        err = np.max(np.abs(rows - a))
        if err <= tol:
            break
    return f, g, it, err


def ot_cost(plan, cost) -> float:
    """Frobenius product ``<T, C>``."""
    t = plan.entries if isinstance(plan, TransportPlan) else np.asarray(plan, dtype=np.float64)
    C = np.asarray(cost, dtype=np.float64)
    if t.shape != C.shape:
        raise DimensionError(f"plan {t.shape} vs cost {C.shape}")
    return float(np.sum(t * C))


def entropy(plan) -> float:
    """``-sum t (log t - 1)``, with zero entries contributing nothing."""
    t = plan.entries if isinstance(plan, TransportPlan) else np.asarray(plan, dtype=np.float64)
    pos = t[t > 0]
    return float(-np.sum(pos * (np.log(pos) - 1.0)))


def marginal_violation(plan) -> float:
    t = plan.entries
    return float(max(np.max(np.abs(t.sum(axis=1) - plan.row_marginal)),
                     np.max(np.abs(t.sum(axis=0) - plan.col_marginal))))


# --- virtual frame ------------------------------------------------------------

def default_virtual_cost(cost) -> float:
    """Cost of sending a real frame to the virtual frame: the median nearest-neighbour distance.

    Mass balance makes rejecting a frame cost about twice this value (its
    mass enters the virtual frame, and an equal amount of mass on the other
    side has to leave through it), so a frame goes virtual once its best
    real partner is roughly twice as far as a typical match.
    """
    C = np.asarray(cost, dtype=np.float64)
    return float(np.median(np.concatenate([C.min(axis=1), C.min(axis=0)])))


def augment_cost(cost, virtual_cost=None) -> np.ndarray:
    """Append the virtual row/column; virtual-to-virtual transport is free."""
    C = np.asarray(cost, dtype=np.float64)
    c_v = default_virtual_cost(C) if virtual_cost is None else float(virtual_cost)
    n, m = C.shape
    out = np.full((n + 1, m + 1), c_v)
    out[:n, :m] = C
    out[n, m] = 0.0
    return out


# --- serialization ------------------------------------------------------------

def write_matrix_csv(matrix, path):
    M = matrix.entries if isinstance(matrix, TransportPlan) else np.asarray(matrix)
    with Path(path).open("w") as fh:
        for row in M:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")


def read_matrix_csv(path) -> np.ndarray:
    return np.loadtxt(path, delimiter=",", ndmin=2)


def write_pgm(matrix, path):
    """Plain (P2) grayscale heatmap; 0 maps to black, the max entry to 255."""
    M = matrix.entries if isinstance(matrix, TransportPlan) else np.asarray(matrix, dtype=np.float64)
    top = M.max()
    px = np.zeros(M.shape, dtype=int) if top <= 0 else np.rint(255.0 * M / top).astype(int)
    lines = ["P2", f"{M.shape[1]} {M.shape[0]}", "255"]
    lines += [" ".join(str(v) for v in row) for row in px]
    Path(path).write_text("\n".join(lines) + "\n")


def read_pgm(path) -> np.ndarray:
    tokens = [t for line in Path(path).read_text().splitlines()
              if not line.startswith("#") for t in line.split()]
    if tokens[0] != "P2":
        raise ValueError("only plain PGM (P2) is supported")
    w, h = int(tokens[1]), int(tokens[2])
    return np.asarray(tokens[4:4 + w * h], dtype=int).reshape(h, w)
