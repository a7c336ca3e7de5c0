"""Toy encoder trained by gradient descent on the alignment loss.

The encoder maps raw per-frame features to embeddings, either with one affine
layer or with a tanh hidden layer followed by an affine read-out. Gradients
come from :func:`vta.vavaloss.loss_and_gradient` (plan held fixed) chained
through the encoder by hand.
"""

from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, DimensionError, ParamError, ParseError, TrainingDivergedError
from .seqcore import EmbeddingSequence, Hyperparams
from .vavaloss import LossBreakdown, pair_state, surrogate_gradient, surrogate_loss

log = logging.getLogger(__name__)

LOSS_COLUMNS = ("step", "total", "ot", "idm", "kl", "intra", "inter")


@dataclass(frozen=True, eq=False)
class ToyEncoder:
    """Parameters are ``W1, b1`` (affine) or ``W1, b1, W2, b2`` (tanh hidden layer)."""

    params: dict
    raw_dim: int
    embed_dim: int
    hidden: int = 0
    seed: int = 0

    def __post_init__(self):
        shapes = self.expected_shapes()
        if set(self.params) != set(shapes):
            raise DimensionError(f"encoder needs parameters {sorted(shapes)}, got {sorted(self.params)}")
        frozen = {}
        for name, shape in shapes.items():
            a = np.array(self.params[name], dtype=np.float64)
            if a.shape != shape:
                raise DimensionError(f"{name} has shape {a.shape}, expected {shape}")
            if not np.all(np.isfinite(a)):
                raise ConfigError(f"{name} has non-finite entries")
            a.setflags(write=False)
            frozen[name] = a
        object.__setattr__(self, "params", frozen)

    def expected_shapes(self) -> dict:
        if self.hidden:
            return {"W1": (self.raw_dim, self.hidden), "b1": (self.hidden,),
                    "W2": (self.hidden, self.embed_dim), "b2": (self.embed_dim,)}
        return {"W1": (self.raw_dim, self.embed_dim), "b1": (self.embed_dim,)}

    @classmethod
    def init(cls, raw_dim: int, embed_dim: int, hidden: int = 0, seed: int = 0) -> "ToyEncoder":
        """Gaussian weights scaled by 1/sqrt(fan-in), zero biases."""
        if raw_dim < 1 or embed_dim < 1 or hidden < 0:
            raise ConfigError("need raw_dim >= 1, embed_dim >= 1, hidden >= 0")
        rng = np.random.default_rng(seed)
        if hidden:
            params = {
                "W1": rng.standard_normal((raw_dim, hidden)) / np.sqrt(raw_dim),
                "b1": np.zeros(hidden),
                "W2": rng.standard_normal((hidden, embed_dim)) / np.sqrt(hidden),
                "b2": np.zeros(embed_dim),
            }
        else:
            params = {"W1": rng.standard_normal((raw_dim, embed_dim)) / np.sqrt(raw_dim),
                      "b1": np.zeros(embed_dim)}
        return cls(params, raw_dim, embed_dim, hidden, seed)

    def _forward(self, frames):
        X = np.asarray(frames, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.raw_dim:
            raise DimensionError(f"encoder expects {self.raw_dim} raw features per frame")
        p = self.params
        if self.hidden:
            H = np.tanh(X @ p["W1"] + p["b1"])
            return H @ p["W2"] + p["b2"], (X, H)
        return X @ p["W1"] + p["b1"], (X, None)

    def embed(self, frames) -> np.ndarray:
        return self._forward(frames)[0]

    def encode(self, seq: EmbeddingSequence) -> EmbeddingSequence:
        return EmbeddingSequence(self.embed(seq.frames), seq.source_id)

    def backward(self, cache, grad_out) -> dict:
        """Parameter gradient given d(loss)/d(embedding) for the frames in ``cache``."""
        X, H = cache
        if self.hidden:
            gH = (grad_out @ self.params["W2"].T) * (1.0 - H**2)
            return {"W1": X.T @ gH, "b1": gH.sum(axis=0),
                    "W2": H.T @ grad_out, "b2": grad_out.sum(axis=0)}
        return {"W1": X.T @ grad_out, "b1": grad_out.sum(axis=0)}

    def with_params(self, params) -> "ToyEncoder":
        return ToyEncoder(params, self.raw_dim, self.embed_dim, self.hidden, self.seed)

    def num_params(self) -> int:
        return sum(a.size for a in self.params.values())

    def to_dict(self) -> dict:
        return {
            "raw_dim": self.raw_dim,
            "embed_dim": self.embed_dim,
            "hidden": self.hidden,
            "seed": self.seed,
            "shapes": {k: list(v.shape) for k, v in self.params.items()},
            "params": {k: v.tolist() for k, v in self.params.items()},
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, d) -> "ToyEncoder":
        try:
            params = {k: np.asarray(v, dtype=np.float64) for k, v in d["params"].items()}
            for k, shape in d.get("shapes", {}).items():
                if k in params and list(params[k].shape) != list(shape):
                    raise ParseError(f"{k}: stored shape {shape} does not match its values")
            return cls(params, int(d["raw_dim"]), int(d["embed_dim"]), int(d.get("hidden", 0)),
                       int(d.get("seed", 0)))
        except (KeyError, TypeError, ValueError) as e:
            if isinstance(e, ParseError):
                raise
            raise ParseError(f"malformed encoder: {e}") from e


def write_encoder(encoder: ToyEncoder, path):
    Path(path).write_text(encoder.to_json())


def read_encoder(path) -> ToyEncoder:
    p = Path(path)
    try:
        d = json.loads(p.read_text())
    except FileNotFoundError as e:
        raise ParseError(f"{p}: no such file") from e
    except json.JSONDecodeError as e:
        raise ParseError(f"{p}: invalid JSON ({e})") from e
    return ToyEncoder.from_dict(d)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 3e-5
    steps: int = 500
    batch_pairs: int = 10
    hp: Hyperparams = field(default_factory=Hyperparams)
    seed: int = 0
    embed_dim: int = 4
    hidden: int = 0
    optimizer: str = "gd"  # "gd" or "adam"
    jobs: int = 1

    def __post_init__(self):
        checks = [
            (self.learning_rate >= 0, "learning_rate must be >= 0"),
            (self.steps >= 1, "steps must be >= 1"),
            (self.batch_pairs >= 1, "batch_pairs must be >= 1"),
            (self.embed_dim >= 1, "embed_dim must be >= 1"),
            (self.hidden >= 0, "hidden must be >= 0"),
            (self.optimizer in ("gd", "adam"), "optimizer must be 'gd' or 'adam'"),
            (self.jobs >= 1, "jobs must be >= 1"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ConfigError(msg)

    def replace(self, **changes) -> "TrainConfig":
        d = {k: getattr(self, k) for k in self.__dataclass_fields__}
        d.update(changes)
        return TrainConfig(**d)


def _raw(seq):
    return seq.frames if isinstance(seq, EmbeddingSequence) else np.asarray(seq, dtype=np.float64)


def pair_loss_and_grad(encoder: ToyEncoder, x_raw, y_raw, hp: Hyperparams, step=None, warm=None):
    """Loss breakdown of one pair, its parameter gradient, the solver warm start and convergence."""
    ex, cx = encoder._forward(x_raw)
    ey, cy = encoder._forward(y_raw)
    state = pair_state(ex, ey, hp, step, warm)
    loss = surrogate_loss(ex, ey, state, hp)
    gx, gy = surrogate_gradient(ex, ey, state, hp)
    grads = encoder.backward(cx, gx)
    for k, v in encoder.backward(cy, gy).items():
        grads[k] = grads[k] + v
    return loss, grads, state.warm, state.plan.converged


class LossCurve(list):
    """Per-step mean loss breakdowns plus the number of unconverged pair solves."""

    unconverged = 0


def _mean_breakdown(losses) -> LossBreakdown:
    fields = LossBreakdown.__dataclass_fields__
    return LossBreakdown(**{k: float(np.mean([getattr(l, k) for l in losses])) for k in fields})


def loss_row(step: int, b: LossBreakdown) -> dict:
    return {"step": step, "total": b.total, "ot": b.ot_term, "idm": b.idm_term, "kl": b.kl_term,
            "intra": b.intra_x + b.intra_y, "inter": b.inter}


def batch_loss(encoder: ToyEncoder, pairs, hp: Hyperparams, step=None) -> LossBreakdown:
    """Mean loss breakdown over ``(x_raw, y_raw)`` pairs."""
    out = []
    for x, y in pairs:
        ex, ey = encoder.embed(_raw(x)), encoder.embed(_raw(y))
        out.append(surrogate_loss(ex, ey, pair_state(ex, ey, hp, step), hp))
    return _mean_breakdown(out)


def train(pairs, cfg: TrainConfig, encoder: ToyEncoder | None = None):
    """Fit an encoder on raw ``(x, y)`` pairs.

    Each step draws ``batch_pairs`` pairs (all of them when the dataset is no
    larger), re-solves every plan, averages the pair gradients and takes one
    step. Each solve starts from the pair's dual potentials of its previous
    solve, which saves iterations but not accuracy. Returns
    ``(encoder, curve)`` where ``curve[s]`` is the mean loss breakdown at the
    start of step ``s``. Plans that missed the solver tolerance are used as
    they are and counted in ``curve.unconverged``.
    """
    pairs = [(_raw(x), _raw(y)) for x, y in pairs]
    if not pairs:
        raise ConfigError("train needs at least one pair")
    raw_dim = pairs[0][0].shape[1]
    if encoder is None:
        encoder = ToyEncoder.init(raw_dim, cfg.embed_dim, cfg.hidden, cfg.seed)
    rng = np.random.default_rng(cfg.seed)
    adam_m = {k: np.zeros_like(v) for k, v in encoder.params.items()}
    adam_v = {k: np.zeros_like(v) for k, v in encoder.params.items()}
    curve = LossCurve()
    warm = [None] * len(pairs)
    pool = ThreadPoolExecutor(cfg.jobs) if cfg.jobs > 1 else None
    try:
        for step in range(cfg.steps):
            if cfg.batch_pairs >= len(pairs):
                batch = list(range(len(pairs)))
            else:
                batch = [int(i) for i in np.sort(rng.choice(len(pairs), cfg.batch_pairs, replace=False))]

            def work(i, enc=encoder, s=step):
                return pair_loss_and_grad(enc, pairs[i][0], pairs[i][1], cfg.hp, s, warm[i])

            try:
                results = list(pool.map(work, batch)) if pool else [work(i) for i in batch]
            except (ParamError, FloatingPointError) as e:
                # hyperparameters were validated up front, so this means overflowing embeddings
                raise TrainingDivergedError(step, f"transport solve failed ({e})") from e
            for i, r in zip(batch, results):
                warm[i] = r[2]
            curve.unconverged += sum(not r[3] for r in results)
            mean = _mean_breakdown([r[0] for r in results])
            if not np.isfinite(mean.total):
                raise TrainingDivergedError(step, f"loss became {mean.total}")
            curve.append(mean)
            # fixed summation order keeps runs bit-identical regardless of jobs
            grads = {k: sum(r[1][k] for r in results) / len(results) for k in encoder.params}
            params = {}
            for k, w in encoder.params.items():
                g = grads[k]
                if cfg.optimizer == "adam":
                    adam_m[k] = 0.9 * adam_m[k] + 0.1 * g
                    adam_v[k] = 0.999 * adam_v[k] + 0.001 * g**2
                    mh = adam_m[k] / (1 - 0.9 ** (step + 1))
                    vh = adam_v[k] / (1 - 0.999 ** (step + 1))
                    params[k] = w - cfg.learning_rate * mh / (np.sqrt(vh) + 1e-8)
                else:
                    params[k] = w - cfg.learning_rate * g
            if not all(np.all(np.isfinite(v)) for v in params.values()):
                raise TrainingDivergedError(step, "parameters became non-finite")
            encoder = encoder.with_params(params)
            if step % 50 == 0:
                log.info("step %d total %.6g", step, mean.total)
    finally:
        if pool:
            pool.shutdown()
    return encoder, curve


# --- finite-difference check -----------------------------------------------------

GRAD_TERMS = ("ot", "idm", "kl", "intra", "inter", "total")


def _term_value(b: LossBreakdown, term, hp):
    return {
        "ot": b.ot_term,
        "idm": -hp.lambda1 * b.idm_term,
        "kl": hp.lambda2 * b.kl_term,
        "intra": hp.gamma * (b.intra_x + b.intra_y),
        "inter": hp.gamma * b.inter,
        "total": b.total,
    }[term]


_TERM_SUBSETS = {
    "ot": ("ot",), "idm": (), "kl": (), "intra": ("intra",), "inter": ("inter",),
    "total": ("ot", "intra", "inter"),
}


@dataclass(frozen=True)
class GradCheckReport:
    errors: dict            # term -> max-norm relative error
    max_relative_error: float
    num_params: int

    def to_dict(self):
        return asdict(self)


def relative_error(analytic, numeric) -> float:
    """``max|a - n| / max(max|a|, max|n|)``; zero when both vanish."""
    a = np.asarray(analytic, dtype=np.float64).ravel()
    n = np.asarray(numeric, dtype=np.float64).ravel()
    scale = max(np.max(np.abs(a), initial=0.0), np.max(np.abs(n), initial=0.0))
    diff = np.max(np.abs(a - n), initial=0.0)
    if scale == 0:
        return 0.0 if diff == 0 else float("inf")
    return float(diff / scale)


def grad_check(cfg: TrainConfig, seed: int = 0, n: int = 6, m: int = 7, raw_dim: int = 5,
               pair=None, h: float = 1e-6) -> GradCheckReport:
    """Compare analytic encoder gradients with central differences, term by term.

    The plan, priors and contrastive selections are frozen at the unperturbed
    parameters, matching the convention the analytic gradient uses. ``pair``
    overrides the random raw pair drawn from ``seed``.
    """
    rng = np.random.default_rng(seed)
    if pair is None:
        x_raw = rng.standard_normal((n, raw_dim))
        y_raw = rng.standard_normal((m, raw_dim))
    else:
        x_raw, y_raw = _raw(pair[0]), _raw(pair[1])
    encoder = ToyEncoder.init(x_raw.shape[1], cfg.embed_dim, cfg.hidden, seed)
    hp = cfg.hp
    ex, cx = encoder._forward(x_raw)
    ey, cy = encoder._forward(y_raw)
    state = pair_state(ex, ey, hp, 0)

    def value(enc, term):
        return _term_value(surrogate_loss(enc.embed(x_raw), enc.embed(y_raw), state, hp), term, hp)

    errors = {}
    for term in GRAD_TERMS:
        gx, gy = surrogate_gradient(ex, ey, state, hp, terms=_TERM_SUBSETS[term])
        grads = encoder.backward(cx, gx)
        for k, v in encoder.backward(cy, gy).items():
            grads[k] = grads[k] + v
        analytic, numeric = [], []
        for k, w in encoder.params.items():
            for idx in np.ndindex(w.shape):
                plus, minus = w.copy(), w.copy()
                plus[idx] += h
                minus[idx] -= h
                fp = value(encoder.with_params({**encoder.params, k: plus}), term)
                fm = value(encoder.with_params({**encoder.params, k: minus}), term)
                numeric.append((fp - fm) / (2 * h))
                analytic.append(grads[k][idx])
        errors[term] = relative_error(analytic, numeric)
    return GradCheckReport(errors, max(errors.values()), encoder.num_params())


def write_loss_csv(curve, path):
    lines = [",".join(LOSS_COLUMNS)]
    for s, b in enumerate(curve):
        row = loss_row(s, b)
        lines.append(",".join([str(s)] + [repr(float(row[c])) for c in LOSS_COLUMNS[1:]]))
    Path(path).write_text("\n".join(lines) + "\n")
