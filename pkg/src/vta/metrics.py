"""Alignment- and representation-quality metrics."""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass

import numpy as np

from .errors import ConfigError, DegenerateError, DimensionError, ParamError, SamplingError
from .seqcore import BACKGROUND, EmbeddingSequence, cost_matrix

log = logging.getLogger(__name__)

VIRTUAL = -1


@dataclass(frozen=True, eq=False)
class LabeledSequence:
    embedding: EmbeddingSequence
    phase: np.ndarray
    progress: np.ndarray | None = None

    def __post_init__(self):
        n = len(self.embedding)
        phase = np.asarray(self.phase, dtype=np.int64)
        if phase.shape != (n,):
            raise DimensionError(f"{phase.shape[0] if phase.ndim else 0} labels for {n} frames")
        object.__setattr__(self, "phase", phase)
        if self.progress is not None:
            prog = np.asarray(self.progress, dtype=np.float64)
            if prog.shape != (n,):
                raise DimensionError("progress length differs from frame count")
            if np.any(prog < 0) or np.any(prog > 1):
                raise ParamError("progress values must lie in [0, 1]")
            object.__setattr__(self, "progress", prog)


# --- Kendall's tau -----------------------------------------------------------

def nearest_neighbors(x, y) -> np.ndarray:
    """Index of the closest frame of ``y`` for every frame of ``x`` (lowest index on ties)."""
    return np.argmin(cost_matrix(x, y), axis=1)


def tau_from_indices(indices) -> float:
    """(concordant - discordant) / pairs; a tie counts as discordant."""
    r = np.asarray(indices)
    n = r.size
    if n < 2:
        raise DegenerateError("need at least two retrieved indices")
    upper = np.triu(np.ones((n, n), dtype=bool), k=1)
    later_bigger = (r[None, :] > r[:, None])[upper]
    concordant = int(np.count_nonzero(later_bigger))
    pairs = n * (n - 1) // 2
    return (concordant - (pairs - concordant)) / pairs


def kendalls_tau(x, y) -> float:
    if len(x) < 2 or len(y) < 2:
        raise DegenerateError("kendalls_tau needs sequences of length >= 2")
    return tau_from_indices(nearest_neighbors(x, y))


# --- linear probes ---------------------------------------------------------------

def _design(X):
    return np.hstack([X, np.ones((X.shape[0], 1))])


def _ridge(X, Y, reg=1e-8):
    A = _design(X)
    gram = A.T @ A
    gram += reg * np.trace(gram) / gram.shape[0] * np.eye(gram.shape[0])
    return np.linalg.solve(gram, A.T @ Y)


def phase_classification(train, test, fraction: float, seed: int = 0) -> float:
    """Per-frame accuracy of a one-vs-rest least-squares probe.

    The probe sees a uniform random ``fraction`` of all training frames.
    Raises :class:`SamplingError` if that subset misses a training phase.
    """
    if not 0 < fraction <= 1:
        raise ParamError("fraction must lie in (0, 1]")
    X = np.vstack([s.embedding.frames for s in train])
    y = np.concatenate([s.phase for s in train])
    if fraction < 1:
        rng = np.random.default_rng(seed)
        k = max(1, int(round(fraction * len(y))))
        keep = np.sort(rng.choice(len(y), size=k, replace=False))
        missing = set(np.unique(y)) - set(np.unique(y[keep]))
        if missing:
            raise SamplingError(f"phases {sorted(missing)} absent from the sampled subset (seed {seed})")
        X, y = X[keep], y[keep]
    classes = np.unique(y)
    targets = np.where(y[:, None] == classes[None, :], 1.0, -1.0)
    coef = _ridge(X, targets)
    Xt = np.vstack([s.embedding.frames for s in test])
    yt = np.concatenate([s.phase for s in test])
    pred = classes[np.argmax(_design(Xt) @ coef, axis=1)]
    return float(np.mean(pred == yt))


def phase_classification_retry(train, test, fraction, seed=0, attempts=20) -> float:
    for k in range(attempts):
        try:
            return phase_classification(train, test, fraction, seed + k)
        except SamplingError:
            continue
    raise SamplingError(f"no seed in [{seed}, {seed + attempts}) covers every phase")


def _r2(y, pred):
    ss_tot = np.sum((y - y.mean()) ** 2)
    if ss_tot == 0:
        return None
    return 1.0 - np.sum((y - pred) ** 2) / ss_tot


def phase_progression(seqs, seed: int = 0) -> float:
    """Mean held-out R^2 of a linear regressor from embedding to progress.

    Sequences are split in half (seeded); with a single sequence its frames
    alternate between train and test. Background frames are ignored. Returns
    0.0, with a warning, when no held-out sequence has varying progress.
    """
    if any(s.progress is None for s in seqs):
        raise ConfigError("phase_progression needs progress values on every sequence")
    if not seqs:
        raise ConfigError("phase_progression needs at least one sequence")

    def usable(s, idx=None):
        keep = s.phase != BACKGROUND
        if idx is not None:
            mask = np.zeros_like(keep)
            mask[idx] = True
            keep &= mask
        return s.embedding.frames[keep], s.progress[keep]

    if len(seqs) == 1:
        n = len(seqs[0].embedding)
        train = [usable(seqs[0], np.arange(0, n, 2))]
        test = [usable(seqs[0], np.arange(1, n, 2))]
    else:
        perm = np.random.default_rng(seed).permutation(len(seqs))
        cut = max(1, len(seqs) // 2)
        train = [usable(seqs[i]) for i in perm[:cut]]
        test = [usable(seqs[i]) for i in perm[cut:]]
    X = np.vstack([f for f, _ in train])
    y = np.concatenate([p for _, p in train])
    coef = _ridge(X, y)
    scores = [r for f, p in test if len(p) and (r := _r2(p, _design(f) @ coef)) is not None]
    if not scores:
        log.warning("phase_progression: held-out progress has zero variance; reporting 0")
        return 0.0
    return float(np.mean(scores))


# --- alignment against ground truth -------------------------------------------------

@dataclass(frozen=True)
class AccuracyReport:
    accuracy: float
    virtual_precision: float
    virtual_recall: float
    frames: int
    correct: int
    predicted_virtual: int
    true_virtual: int
    detected_virtual: int

    def to_dict(self):
        return asdict(self)


def pool_reports(reports) -> AccuracyReport:
    """Micro-average: sum the counts of several reports, then take ratios."""
    frames = sum(r.frames for r in reports)
    correct = sum(r.correct for r in reports)
    n_pred = sum(r.predicted_virtual for r in reports)
    n_true = sum(r.true_virtual for r in reports)
    tp = sum(r.detected_virtual for r in reports)
    return AccuracyReport(
        accuracy=correct / frames if frames else 0.0,
        virtual_precision=tp / n_pred if n_pred else 0.0,
        virtual_recall=tp / n_true if n_true else 0.0,
        frames=frames, correct=correct, predicted_virtual=n_pred,
        true_virtual=n_true, detected_virtual=tp,
    )


def alignment_accuracy(pred, truth) -> AccuracyReport:
    """Frame-match accuracy (same action as the true partner, or both virtual)
    over both sequences, plus precision/recall of virtual assignments."""
    if len(pred.x_to_y) != len(truth.x_partner) or len(pred.y_to_x) != len(truth.y_partner):
        raise DimensionError("prediction and ground truth lengths differ")
    correct = 0
    tp = n_pred = n_true = 0
    sides = ((pred.x_to_y, truth.x_partner, truth.y_action),
             (pred.y_to_x, truth.y_partner, truth.x_action))
    for guess, true, partner_action in sides:
        for g, t in zip(guess, true):
            if t == VIRTUAL or g == VIRTUAL:
                correct += g == t
            else:
                correct += partner_action[g] == partner_action[t]
            n_pred += g == VIRTUAL
            n_true += t == VIRTUAL
            tp += g == VIRTUAL and t == VIRTUAL
    total = len(truth.x_partner) + len(truth.y_partner)
    return AccuracyReport(
        accuracy=correct / total,
        virtual_precision=tp / n_pred if n_pred else 0.0,
        virtual_recall=tp / n_true if n_true else 0.0,
        frames=total,
        correct=int(correct),
        predicted_virtual=int(n_pred),
        true_virtual=int(n_true),
        detected_virtual=int(tp),
    )


def format_table(metrics: dict) -> str:
    """Two-column plain-text rendering of a flat metrics dict."""
    flat = {}

    def walk(prefix, obj):
        if isinstance(obj, dict):
            for k in sorted(obj):
                walk(f"{prefix}.{k}" if prefix else str(k), obj[k])
        else:
            flat[prefix] = obj

    walk("", metrics)
    width = max((len(k) for k in flat), default=0)
    lines = []
    for k, v in flat.items():
        shown = f"{v:.4f}" if isinstance(v, float) else str(v)
        lines.append(f"{k.ljust(width)}  {shown}")
    return "\n".join(lines)


def dump_json(metrics) -> str:
    return json.dumps(metrics, indent=2, sort_keys=True) + "\n"
