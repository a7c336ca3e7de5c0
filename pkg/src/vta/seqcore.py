"""Shared data types, cost/marginal construction and file ingestion.

Cost matrices and weight vectors are plain float64 numpy arrays; the helpers
here validate them at the boundaries.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from .errors import DimensionError, EmptySequenceError, ParamError, ParseError

log = logging.getLogger(__name__)

BACKGROUND = -1


@dataclass(frozen=True, eq=False)
class EmbeddingSequence:
    """An ordered run of per-frame feature vectors, shape ``(N, d)``."""

    frames: np.ndarray
    source_id: str = ""

    def __post_init__(self):
        arr = np.array(self.frames, dtype=np.float64, copy=True)
        if arr.ndim == 1 and arr.size > 0:
            arr = arr[:, None]
        if arr.ndim != 2 or arr.shape[0] < 1:
            raise EmptySequenceError("sequence needs at least one frame")
        if arr.shape[1] < 1:
            raise DimensionError("frames need dimension >= 1")
        if not np.all(np.isfinite(arr)):
            bad = np.flatnonzero(~np.all(np.isfinite(arr), axis=1))
            raise ParseError(f"non-finite values in frames {bad.tolist()[:10]}")
        arr.setflags(write=False)
        object.__setattr__(self, "frames", arr)

    def __len__(self):
        return self.frames.shape[0]

    @property
    def dim(self) -> int:
        return self.frames.shape[1]

    def __eq__(self, other):
        if not isinstance(other, EmbeddingSequence):
            return NotImplemented
        return self.source_id == other.source_id and np.array_equal(self.frames, other.frames)

    __hash__ = None


@dataclass(frozen=True)
class Hyperparams:
    """Every knob of the alignment objective.

    ``virtual_cost`` is the transport cost between a real frame and the
    virtual frame; ``None`` derives it from the cost matrix (see
    :func:`vta.sinkhorn.default_virtual_cost`).
    """

    upsilon: float = 0.05
    sigma: float = 1.0
    psi_start: float = 1.0
    psi_end: float = 0.5
    psi_decay_steps: int = 250
    lambda1: float = 0.5
    lambda2: float = 0.05
    lambda3: float = 10.0
    delta: int = 2
    zeta: float = 0.1
    gamma: float = 0.5
    rho: float = 0.3
    sinkhorn_max_iter: int = 1000
    sinkhorn_tol: float = 1e-6
    virtual_cost: float | None = None

    def __post_init__(self):
        checks = [
            (self.upsilon > 0, "upsilon must be > 0"),
            (self.sigma > 0, "sigma must be > 0"),
            (0 <= self.psi_end <= self.psi_start <= 1, "need 0 <= psi_end <= psi_start <= 1"),
            (self.psi_decay_steps >= 0, "psi_decay_steps must be >= 0"),
            (self.lambda1 >= 0 and self.lambda2 >= 0, "lambda1, lambda2 must be >= 0"),
            (self.lambda3 > 0, "lambda3 must be > 0"),
            (self.delta >= 1, "delta must be >= 1"),
            (0 < self.zeta < 1, "zeta must lie in (0, 1)"),
            (self.gamma >= 0, "gamma must be >= 0"),
            (0 <= self.rho < 1, "rho must lie in [0, 1)"),
            (self.sinkhorn_max_iter >= 1, "sinkhorn_max_iter must be >= 1"),
            (self.sinkhorn_tol > 0, "sinkhorn_tol must be > 0"),
            (self.virtual_cost is None or self.virtual_cost >= 0, "virtual_cost must be >= 0"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ParamError(msg)
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, float) and not math.isfinite(v):
                raise ParamError(f"{f.name} must be finite")

    def replace(self, **changes) -> "Hyperparams":
        d = asdict(self)
        d.update(changes)
        return Hyperparams(**d)


def _as_frames(x) -> np.ndarray:
    return x.frames if isinstance(x, EmbeddingSequence) else np.asarray(x, dtype=np.float64)


def cost_matrix(x, y) -> np.ndarray:
    """Pairwise Euclidean distances, ``C[i, j] = ||x_i - y_j||``."""
    a, b = _as_frames(x), _as_frames(y)
    if a.ndim != 2 or b.ndim != 2 or a.shape[0] == 0 or b.shape[0] == 0:
        raise EmptySequenceError("cost_matrix needs two non-empty 2-D sequences")
    if a.shape[1] != b.shape[1]:
        raise DimensionError(f"dimension mismatch: {a.shape[1]} vs {b.shape[1]}")
    diff = a[:, None, :] - b[None, :, :]
    return np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))


def uniform_marginals(n: int) -> np.ndarray:
    if n < 1:
        raise EmptySequenceError("uniform_marginals needs n >= 1")
    return np.full(n, 1.0 / n)


def check_weights(w, name="weights") -> np.ndarray:
    w = np.asarray(w, dtype=np.float64)
    if w.ndim != 1 or w.size == 0:
        raise DimensionError(f"{name} must be a non-empty vector")
    if np.any(w < 0) or not np.all(np.isfinite(w)):
        raise ParamError(f"{name} must be finite and non-negative")
    if abs(w.sum() - 1.0) > 1e-9:
        raise ParamError(f"{name} must sum to 1 (got {w.sum():.12g})")
    return w


def augment_marginals(w, rho: float) -> np.ndarray:
    """Append a virtual-frame entry of mass ``rho``, scaling real mass by ``1 - rho``."""
    if not 0 <= rho < 1:
        raise ParamError(f"rho must lie in [0, 1), got {rho}")
    w = check_weights(w)
    return np.append(w * (1.0 - rho), rho)


# --- file formats -----------------------------------------------------------

def read_embedding(path) -> EmbeddingSequence:
    """Load a sequence from CSV (one frame per row, '#' header allowed) or JSON."""
    path = Path(path)
    if not path.is_file():
        raise ParseError(f"no such file: {path}")
    if path.suffix.lower() == ".json":
        try:
            obj = json.loads(path.read_text())
            frames = np.asarray(obj["frames"], dtype=np.float64)
        except (ValueError, KeyError, TypeError) as exc:
            raise ParseError(f"{path}: {exc}") from exc
        return EmbeddingSequence(frames, str(obj.get("source_id", path.stem)))
    rows = []
    with path.open(newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), 1):
            if not row or row[0].lstrip().startswith("#"):
                continue
            try:
                rows.append([float(v) for v in row])
            except ValueError as exc:
                raise ParseError(f"{path}:{lineno}: {exc}") from exc
    if not rows:
        raise ParseError(f"{path}: no frames")
    if len({len(r) for r in rows}) != 1:
        raise ParseError(f"{path}: ragged rows")
    try:
        return EmbeddingSequence(np.asarray(rows), path.stem)
    except (ParseError, DimensionError, EmptySequenceError) as exc:
        raise ParseError(f"{path}: {exc}") from exc


def write_embedding(seq: EmbeddingSequence, path):
    path = Path(path)
    if path.suffix.lower() == ".json":
        obj = {"frames": seq.frames.tolist(), "source_id": seq.source_id}
        path.write_text(json.dumps(obj) + "\n")
        return
    with path.open("w", newline="") as fh:
        fh.write("# " + ",".join(f"f{k}" for k in range(seq.dim)) + "\n")
        writer = csv.writer(fh, lineterminator="\n")
        for row in seq.frames:
            writer.writerow([repr(float(v)) for v in row])


def read_labels(path, n: int | None = None) -> np.ndarray:
    """Read ``frame_index,phase_label`` rows into a dense int array."""
    path = Path(path)
    if not path.is_file():
        raise ParseError(f"no such file: {path}")
    pairs = []
    with path.open(newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), 1):
            if not row or row[0].strip().startswith("#") or row[0].strip() == "frame_index":
                continue
            try:
                pairs.append((int(row[0]), int(row[1])))
            except (ValueError, IndexError) as exc:
                raise ParseError(f"{path}:{lineno}: {exc}") from exc
    size = n if n is not None else (max(i for i, _ in pairs) + 1 if pairs else 0)
    labels = np.full(size, BACKGROUND, dtype=np.int64)
    for i, lab in pairs:
        if not 0 <= i < size:
            raise ParseError(f"{path}: frame index {i} out of range")
        labels[i] = lab
    return labels


def write_labels(labels, path):
    with Path(path).open("w", newline="") as fh:
        fh.write("frame_index,phase_label\n")
        for i, lab in enumerate(labels):
            fh.write(f"{i},{int(lab)}\n")
