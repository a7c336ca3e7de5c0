"""Training objective: transport cost, temporal-prior terms and contrastive regularizers.

The transport plan is the minimizer of the full prior-regularized objective

    <T, C> - lambda1 * I(T) + lambda2 * KL(T || P) - upsilon * h(T)

over the augmented marginal set. With the per-row/column argmax structure
held fixed this is an ordinary entropic problem with cost
``C - lambda1 * S - lambda2 * log P`` and temperature ``upsilon + lambda2``,
solved with :func:`vta.sinkhorn.sinkhorn_solve`. The argmax structure (for
the optimality prior and the optimality IDM weights) comes from a plain
Sinkhorn pass on the same augmented problem.

Gradients treat the solved plan, the prior and the contrastive pair
selections as constants. For the transport term this is the exact envelope
gradient of the minimized objective.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, replace

import numpy as np

from . import priors
from .errors import DimensionError, ParamError, SupportError
from .seqcore import EmbeddingSequence, Hyperparams, augment_marginals, cost_matrix, uniform_marginals
from .sinkhorn import TransportPlan, augment_cost, default_virtual_cost, sinkhorn_solve


# --- plan statistics ------------------------------------------------------------

def _entries(plan):
    return plan.entries if isinstance(plan, TransportPlan) else np.asarray(plan, dtype=np.float64)


def _is_augmented(plan):
    return plan.augmented if isinstance(plan, TransportPlan) else True


def consistency_weights(rows: int, cols: int) -> np.ndarray:
    """IDM kernel ``1 / ((i/R - j/C)^2 + 1)`` on a 1-based ``rows x cols`` grid."""
    i = np.arange(1, rows + 1)[:, None] / rows
    j = np.arange(1, cols + 1)[None, :] / cols
    return 1.0 / ((i - j) ** 2 + 1.0)


def optimality_weights(t, augmented=True) -> np.ndarray:
    """IDM kernel ``1 / (d_o / 2 + 1)`` around the plan's argmax partners.

    Argmaxes range over real frames only; the virtual row and column still
    get a partner so every cell has a weight.
    """
    t = np.asarray(t, dtype=np.float64)
    R, C = t.shape
    n, m = (R - 1, C - 1) if augmented else (R, C)
    j_o = np.argmax(t[:, :m], axis=1)
    i_o = np.argmax(t[:n, :], axis=0)
    rows = np.arange(R)[:, None]
    cols = np.arange(C)[None, :]
    d_o = ((rows - i_o[None, :]) / R) ** 2 + ((cols - j_o[:, None]) / C) ** 2
    return 1.0 / (0.5 * d_o + 1.0)


def idm_consistency(plan) -> float:
    t = _entries(plan)
    return float(np.sum(t * consistency_weights(*t.shape)))


def idm_optimality(plan) -> float:
    t = _entries(plan)
    return float(np.sum(t * optimality_weights(t, _is_augmented(plan))))


def idm_mixed(plan, psi: float) -> float:
    if not 0 <= psi <= 1:
        raise ParamError("psi must lie in [0, 1]")
    return psi * idm_consistency(plan) + (1.0 - psi) * idm_optimality(plan)


def kl_divergence(plan, prior) -> float:
    """``sum t log(t / p)`` over the support of ``t``."""
    t = _entries(plan)
    log_p = prior.log_entries if isinstance(prior, priors.PriorMatrix) else None
    if log_p is None:
        with np.errstate(divide="ignore"):
            log_p = np.log(np.asarray(prior, dtype=np.float64))
    if t.shape != log_p.shape:
        raise DimensionError(f"plan {t.shape} vs prior {log_p.shape}")
    support = t > 0
    if np.any(np.isneginf(log_p[support])):
        raise SupportError("plan has mass where the prior is zero")
    ts = t[support]
    return float(np.sum(ts * (np.log(ts) - log_p[support])))


# --- contrastive regularizers --------------------------------------------------

def _frames(x):
    return x.frames if isinstance(x, EmbeddingSequence) else np.asarray(x, dtype=np.float64)


def intra_coefficients(dist, delta, lambda3):
    """Per-pair value and d(value)/d(distance) of the intra-video term."""
    n = dist.shape[0]
    gap = np.abs(np.arange(n)[:, None] - np.arange(n)[None, :])
    W = gap.astype(np.float64) ** 2 + 1.0
    near = gap <= delta
    value = np.where(near, W * dist, W * np.maximum(0.0, lambda3 - dist))
    slope = np.where(near, W, np.where(dist < lambda3, -W, 0.0))
    return value, slope


def intra_contrastive(x, delta: int, lambda3: float) -> float:
    """Window/margin contrastive loss of one sequence against itself (full N x N grid)."""
    if delta < 1 or lambda3 <= 0:
        raise ParamError("need delta >= 1 and lambda3 > 0")
    f = _frames(x)
    value, _ = intra_coefficients(cost_matrix(f, f), delta, lambda3)
    return float(value.sum())


def contrastive_selection(plan):
    """Masks of positive (most likely) and negative (least likely) real pairs.

    Each real row contributes its largest and smallest real column, each real
    column its largest and smallest real row. A pair picked twice counts once.
    """
    t = _entries(plan)
    if _is_augmented(plan):
        t = t[:-1, :-1]
    n, m = t.shape
    pos = np.zeros((n, m), dtype=bool)
    neg = np.zeros((n, m), dtype=bool)
    rows = np.arange(n)
    cols = np.arange(m)
    pos[rows, np.argmax(t, axis=1)] = True
    pos[np.argmax(t, axis=0), cols] = True
    neg[rows, np.argmin(t, axis=1)] = True
    neg[np.argmin(t, axis=0), cols] = True
    return pos, neg


def inter_contrastive(x, y, plan) -> float:
    pos, neg = contrastive_selection(plan)
    D = cost_matrix(_frames(x), _frames(y))
    if D.shape != pos.shape:
        raise DimensionError(f"plan real block {pos.shape} vs sequences {D.shape}")
    return float(D[pos].sum() - D[neg].sum())


# --- plan with priors ------------------------------------------------------------

@dataclass(frozen=True)
class LossBreakdown:
    ot_term: float = 0.0
    idm_term: float = 0.0
    kl_term: float = 0.0
    intra_x: float = 0.0
    intra_y: float = 0.0
    inter: float = 0.0
    total: float = 0.0

    def recompose(self, hp: Hyperparams) -> float:
        return (self.ot_term - hp.lambda1 * self.idm_term + hp.lambda2 * self.kl_term
                + hp.gamma * (self.intra_x + self.intra_y + self.inter))

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


@dataclass(frozen=True, eq=False)
class PairState:
    """Everything about a pair that the gradient treats as constant."""

    plan: TransportPlan
    cost: np.ndarray          # augmented cost, virtual entries included
    prior: priors.PriorMatrix  # augmented, normalized
    psi: float
    virtual_cost: float
    pos: np.ndarray
    neg: np.ndarray
    warm: tuple = (None, None)  # solver potentials, for warm-starting the next step


def psi_for(hp: Hyperparams, step) -> float:
    """Mixture weight at ``step``; ``None`` means the end of the schedule."""
    if step is None:
        return float(hp.psi_end)
    return priors.psi_at(priors.PsiSchedule.from_hyperparams(hp), step)


def _solve(cost_aug, a, b, eps, hp, init=None):
    """Sinkhorn on the augmented problem, skipping zero-mass virtual slots.

    Returns the plan and the dual potentials of the problem actually solved,
    which can warm-start the next solve of a similar problem.
    """
    if a[-1] > 0:
        plan = sinkhorn_solve(cost_aug, a, b, eps, hp.sinkhorn_max_iter, hp.sinkhorn_tol,
                              augmented=True, init=init)
        return plan, plan.potentials
    inner = sinkhorn_solve(cost_aug[:-1, :-1], a[:-1], b[:-1], eps,
                           hp.sinkhorn_max_iter, hp.sinkhorn_tol, init=init)
    T = np.zeros(cost_aug.shape)
    T[:-1, :-1] = inner.entries
    return TransportPlan(T, a, b, True, inner.converged, inner.n_iter, inner.marginal_error), inner.potentials


def solve_plan(cost, hp: Hyperparams, psi: float, warm=None):
    """Augmented transport plan under the temporal priors.

    ``warm`` is the ``warm`` field of an earlier :class:`PairState` for the
    same pair; it only changes where the solver starts. Returns
    ``(plan, prior, augmented_cost, virtual_cost, warm)``.
    """
    C = np.asarray(cost, dtype=np.float64)
    n, m = C.shape
    c_v = default_virtual_cost(C) if hp.virtual_cost is None else float(hp.virtual_cost)
    C_aug = augment_cost(C, c_v)
    a = augment_marginals(uniform_marginals(n), hp.rho)
    b = augment_marginals(uniform_marginals(m), hp.rho)
    base_init, plan_init = warm if warm is not None else (None, None)

    S = psi * consistency_weights(n + 1, m + 1)
    prior = priors.consistency_prior(n, m, hp.sigma)
    base_pots = None
    if psi < 1:
        # argmax structure for the optimality terms comes from the prior-free plan
        base, base_pots = _solve(C_aug, a, b, hp.upsilon, hp, base_init)
        S = S + (1.0 - psi) * optimality_weights(base.entries)
        prior = priors.mix_priors(prior, priors.optimality_prior(base.real, hp.sigma), psi)
    prior = priors.augment_and_normalize(prior)

    if hp.lambda1 == 0 and hp.lambda2 == 0:
        if psi < 1:
            plan, pots = base, base_pots
        else:
            plan, pots = _solve(C_aug, a, b, hp.upsilon, hp, plan_init)
    else:
        shaped = C_aug - hp.lambda1 * S - hp.lambda2 * prior.log_entries
        plan, pots = _solve(shaped, a, b, hp.upsilon + hp.lambda2, hp, plan_init)
    if psi < 1 and not base.converged:
        # the plan inherits the argmaxes of an unfinished base solve
        plan = replace(plan, converged=False)
    return plan, prior, C_aug, c_v, (base_pots, pots)


def pair_state(x, y, hp: Hyperparams, step=None, warm=None) -> PairState:
    xf, yf = _frames(x), _frames(y)
    psi = psi_for(hp, step)
    plan, prior, C_aug, c_v, warm = solve_plan(cost_matrix(xf, yf), hp, psi, warm)
    pos, neg = contrastive_selection(plan)
    return PairState(plan, C_aug, prior, psi, c_v, pos, neg, warm)


def vava_loss(x, y, hp: Hyperparams, step=None):
    """Transport cost minus weighted IDM plus weighted KL, and the plan it used."""
    state = pair_state(x, y, hp, step)
    ot = float(np.sum(state.plan.entries * state.cost))
    idm = idm_mixed(state.plan, state.psi)
    kl = kl_divergence(state.plan, state.prior)
    total = ot - hp.lambda1 * idm + hp.lambda2 * kl
    return LossBreakdown(ot_term=ot, idm_term=idm, kl_term=kl, total=total), state.plan


# --- total loss and gradient -------------------------------------------------------

def _dist_grad(a, b, coef):
    """Gradient of ``sum_ij coef_ij ||a_i - b_j||`` w.r.t. ``a`` and ``b``."""
    diff = a[:, None, :] - b[None, :, :]
    dist = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
    with np.errstate(invalid="ignore", divide="ignore"):
        w = np.where(dist > 0, coef / dist, 0.0)
    ga = np.einsum("ij,ijk->ik", w, diff)
    gb = -np.einsum("ij,ijk->jk", w, diff)
    return ga, gb


def surrogate_loss(x, y, state: PairState, hp: Hyperparams) -> LossBreakdown:
    """Total loss with everything in ``state`` held fixed.

    Equals :func:`total_loss` at the embeddings ``state`` was built from; its
    derivative is what :func:`loss_gradient` returns.
    """
    xf, yf = _frames(x), _frames(y)
    t = state.plan.entries
    n, m = xf.shape[0], yf.shape[0]
    D = cost_matrix(xf, yf)
    virtual = state.cost.copy()
    virtual[:n, :m] = 0.0
    ot = float(np.sum(t[:n, :m] * D) + np.sum(t * virtual))
    idm = idm_mixed(state.plan, state.psi)
    kl = kl_divergence(state.plan, state.prior)
    ix = float(intra_coefficients(cost_matrix(xf, xf), hp.delta, hp.lambda3)[0].sum())
    iy = float(intra_coefficients(cost_matrix(yf, yf), hp.delta, hp.lambda3)[0].sum())
    inter = float(D[state.pos].sum() - D[state.neg].sum())
    total = ot - hp.lambda1 * idm + hp.lambda2 * kl + hp.gamma * (ix + iy + inter)
    return LossBreakdown(ot, idm, kl, ix, iy, inter, total)


def surrogate_gradient(x, y, state: PairState, hp: Hyperparams, terms=("ot", "intra", "inter")):
    """Gradient of :func:`surrogate_loss` w.r.t. the frames of ``x`` and ``y``.

    ``terms`` restricts the result to a subset of the differentiable terms
    (the IDM and KL terms depend on the plan only and contribute zero).
    """
    xf, yf = _frames(x), _frames(y)
    n, m = xf.shape[0], yf.shape[0]
    coef = np.zeros((n, m))
    if "ot" in terms:
        coef += state.plan.entries[:n, :m]
    if "inter" in terms:
        coef += hp.gamma * (state.pos.astype(float) - state.neg.astype(float))
    gx, gy = _dist_grad(xf, yf, coef)
    if "intra" in terms and hp.gamma > 0:
        for f, g in ((xf, gx), (yf, gy)):
            _, slope = intra_coefficients(cost_matrix(f, f), hp.delta, hp.lambda3)
            ga, gb = _dist_grad(f, f, hp.gamma * slope)
            g += ga + gb
    return gx, gy


def total_loss(x, y, hp: Hyperparams, step=None) -> LossBreakdown:
    return surrogate_loss(x, y, pair_state(x, y, hp, step), hp)


def loss_and_gradient(x, y, hp: Hyperparams, step=None):
    state = pair_state(x, y, hp, step)
    gx, gy = surrogate_gradient(x, y, state, hp)
    return surrogate_loss(x, y, state, hp), gx, gy, state


def loss_gradient(x, y, hp: Hyperparams, step=None):
    """Stop-gradient derivative of :func:`total_loss` w.r.t. both frame sets."""
    _, gx, gy, _ = loss_and_gradient(x, y, hp, step)
    return gx, gy
