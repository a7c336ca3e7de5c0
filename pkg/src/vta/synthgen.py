"""Synthetic sequence pairs with known ground-truth alignment.

Each action has an anchor vector and a drift direction; a frame of action k
at within-action progress p is ``anchor_k + (p - 1/2) * drift * dir_k`` plus
Gaussian noise. The first sequence plays every action once, in order. The
second one is derived from it by (in this order) swapping adjacent action
blocks, rescaling block lengths, shifting the start, inserting redundant
actions of its own, and interleaving background frames. Action anchors
belong to a task (``task_seed``) so that many pairs can share them; redundant
actions come from a separate pool of task actions that the first sequence
never plays.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .seqcore import BACKGROUND, EmbeddingSequence, write_embedding, write_labels

VIRTUAL = -1


@dataclass(frozen=True)
class SynthConfig:
    num_actions: int = 6
    frames_per_action: tuple = (6, 10)
    embed_dim: int = 8
    noise_std: float = 0.25
    background_rate: float = 0.0
    redundant_rate: float = 0.0
    nonmonotonic_rate: float = 0.0
    speed_ratio: float = 1.0
    offset_frames: int = 0
    seed: int = 0
    # anchors are drawn from task_seed (seed when None), so pairs can share actions
    task_seed: int | None = None
    # within-action progression, and dimensions that only carry a per-sequence offset
    drift: float = 1.0
    nuisance_dims: int = 0
    nuisance_std: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "frames_per_action", tuple(int(v) for v in self.frames_per_action))
        lo, hi = self.frames_per_action
        rates = (self.background_rate, self.redundant_rate, self.nonmonotonic_rate)
        checks = [
            (self.num_actions >= 1, "num_actions must be >= 1"),
            (1 <= lo <= hi, "frames_per_action must be a range lo <= hi with lo >= 1"),
            (self.embed_dim >= 1, "embed_dim must be >= 1"),
            (0 <= self.nuisance_dims < self.embed_dim, "nuisance_dims must be < embed_dim"),
            (self.noise_std >= 0 and self.nuisance_std >= 0 and self.drift >= 0,
             "noise_std, nuisance_std and drift must be >= 0"),
            (all(0 <= r < 1 for r in rates), "rates must lie in [0, 1)"),
            (sum(rates) < 1, "variation rates must sum to < 1"),
            (self.speed_ratio > 0, "speed_ratio must be > 0"),
            (self.offset_frames >= 0, "offset_frames must be >= 0"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ConfigError(msg)

    def replace(self, **changes) -> "SynthConfig":
        d = asdict(self)
        d.update(changes)
        return SynthConfig(**d)


@dataclass(frozen=True)
class GroundTruthAlignment:
    x_partner: tuple
    y_partner: tuple
    x_action: tuple
    y_action: tuple
    x_progress: tuple
    y_progress: tuple
    swaps: tuple = ()
    y_kind: tuple = field(default=(), compare=False)

    @property
    def monotonic(self) -> bool:
        return not self.swaps

    def to_dict(self) -> dict:
        d = {k: list(v) for k, v in asdict(self).items()}
        d["swaps"] = [list(s) for s in self.swaps]
        d["monotonic"] = self.monotonic
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1) + "\n"

    @classmethod
    def from_dict(cls, d) -> "GroundTruthAlignment":
        return cls(
            tuple(int(v) for v in d["x_partner"]), tuple(int(v) for v in d["y_partner"]),
            tuple(int(v) for v in d["x_action"]), tuple(int(v) for v in d["y_action"]),
            tuple(float(v) for v in d["x_progress"]), tuple(float(v) for v in d["y_progress"]),
            tuple(tuple(s) for s in d.get("swaps", [])), tuple(d.get("y_kind", [])),
        )


def _draw_anchor(rng, existing, dim, min_sep=1.0, max_tries=10000):
    for _ in range(max_tries):
        a = rng.standard_normal(dim)
        if all(np.linalg.norm(a - e) >= min_sep for e in existing):
            return a
    raise ConfigError(f"could not place {len(existing) + 1} anchors {min_sep} apart in {dim} dims")


def _unit(rng, dim):
    v = rng.standard_normal(dim)
    n = np.linalg.norm(v)
    return v / n if n > 0 else np.eye(dim)[0]


def _progress(length):
    if length == 1:
        return np.zeros(1)
    return np.arange(length) / (length - 1)


def _nearest_partner(action, progress, other_action, other_progress, kinds=None):
    """For each frame, the same-action frame of the other sequence with the closest progress."""
    out = []
    other_action = np.asarray(other_action)
    other_progress = np.asarray(other_progress)
    for k, p in zip(action, progress):
        if k == BACKGROUND or (kinds is not None and kinds[len(out)] != "action"):
            out.append(VIRTUAL)
            continue
        idx = np.flatnonzero(other_action == k)
        if idx.size == 0:
            out.append(VIRTUAL)
            continue
        out.append(int(idx[np.argmin(np.abs(other_progress[idx] - p))]))
    return tuple(out)


def generate_pair(cfg: SynthConfig):
    """Return ``(x, y, truth)``; deterministic in ``cfg`` (seed included)."""
    K = cfg.num_actions
    dim = cfg.embed_dim - cfg.nuisance_dims
    lo, hi = cfg.frames_per_action

    # task level: K actions, plus a pool of K + 1 actions that only ever appear as redundant
    task_rng = np.random.default_rng([cfg.seed if cfg.task_seed is None else cfg.task_seed, 1])
    anchors = []
    for _ in range(K):
        anchors.append(_draw_anchor(task_rng, anchors, dim))
    dirs = [_unit(task_rng, dim) for _ in range(K)]
    if cfg.redundant_rate > 0:
        for _ in range(K + 1):
            anchors.append(_draw_anchor(task_rng, anchors, dim))
        dirs += [_unit(task_rng, dim) for _ in range(K + 1)]
    if K > 1:
        pd = [np.linalg.norm(a - b) for i, a in enumerate(anchors[:K]) for b in anchors[i + 1:K]]
        spacing = float(np.median(pd))
    else:
        spacing = 1.0
    bg_radius = max(np.linalg.norm(a) for a in anchors) + 5.0 * spacing

    rng = np.random.default_rng(cfg.seed)

    x_len = [int(rng.integers(lo, hi + 1)) for _ in range(K)]

    # y: block order after adjacent swaps
    order = list(range(K))
    swaps = []
    k = 0
    while k < K - 1:
        if rng.random() < cfg.nonmonotonic_rate:
            order[k], order[k + 1] = order[k + 1], order[k]
            swaps.append((k, k + 1))
            k += 2
        else:
            k += 1
    y_len = {a: max(1, int(round(x_len[a] * cfg.speed_ratio))) for a in range(K)}
    if cfg.offset_frames:
        y_len[order[0]] += cfg.offset_frames
        if K > 1:
            y_len[order[-1]] = max(1, y_len[order[-1]] - cfg.offset_frames)
    blocks = [(a, y_len[a], "action") for a in order]

    # redundant actions live only in y
    with_redundant = []
    for pos in range(len(blocks) + 1):
        if rng.random() < cfg.redundant_rate:
            extra = K + int(rng.integers(K + 1))
            with_redundant.append((extra, int(rng.integers(lo, hi + 1)), "redundant"))
        if pos < len(blocks):
            with_redundant.append(blocks[pos])

    def render(action_ids, progress):
        out = np.empty((len(action_ids), dim))
        for t, (a, p) in enumerate(zip(action_ids, progress)):
            if a == BACKGROUND:
                out[t] = bg_radius * _unit(rng, dim)
            else:
                out[t] = anchors[a] + (p - 0.5) * cfg.drift * dirs[a]
        out += cfg.noise_std * rng.standard_normal(out.shape)
        if cfg.nuisance_dims:
            # a per-sequence offset (think camera viewpoint) plus ordinary frame noise
            offset = cfg.nuisance_std * rng.standard_normal(cfg.nuisance_dims)
            extra = offset + cfg.noise_std * rng.standard_normal((len(out), cfg.nuisance_dims))
            out = np.hstack([out, extra])
        return out

    x_action = [a for a in range(K) for _ in range(x_len[a])]
    x_prog = np.concatenate([_progress(x_len[a]) for a in range(K)])

    content = [(a, p, kind) for a, length, kind in with_redundant for p in _progress(length)]
    y_action, y_prog, y_kind = [], [], []
    i = 0
    while i < len(content):
        if rng.random() < cfg.background_rate:
            y_action.append(BACKGROUND)
            y_prog.append(0.0)
            y_kind.append("background")
        else:
            a, p, kind = content[i]
            y_action.append(a)
            y_prog.append(float(p))
            y_kind.append(kind)
            i += 1

    x_frames = render(x_action, x_prog)
    y_frames = render(y_action, y_prog)

    action_only = [a if kind == "action" else BACKGROUND for a, kind in zip(y_action, y_kind)]
    truth = GroundTruthAlignment(
        x_partner=_nearest_partner(x_action, x_prog, action_only, y_prog),
        y_partner=_nearest_partner(y_action, y_prog, x_action, x_prog, kinds=y_kind),
        x_action=tuple(x_action),
        y_action=tuple(int(a) for a in y_action),
        x_progress=tuple(float(p) for p in x_prog),
        y_progress=tuple(y_prog),
        swaps=tuple(swaps),
        y_kind=tuple(y_kind),
    )
    x = EmbeddingSequence(x_frames, f"synth-{cfg.seed}-x")
    y = EmbeddingSequence(y_frames, f"synth-{cfg.seed}-y")
    return x, y, truth


SCENARIOS = ("identical", "offset", "speed", "nonmonotonic", "background", "redundant", "mixed")


def scenario_suite(seed: int = 0, base: SynthConfig | None = None):
    """The fixed benchmark scenarios, as ``[(name, SynthConfig), ...]``."""
    base = (base or SynthConfig()).replace(seed=seed)
    return [
        ("identical", base),
        ("offset", base.replace(offset_frames=4)),
        ("speed", base.replace(speed_ratio=1.5)),
        ("nonmonotonic", base.replace(nonmonotonic_rate=0.5)),
        ("background", base.replace(background_rate=0.2)),
        ("redundant", base.replace(redundant_rate=0.2)),
        ("mixed", base.replace(background_rate=0.15, redundant_rate=0.10, nonmonotonic_rate=0.25)),
    ]


def raw_feature_config(seed: int = 0) -> SynthConfig:
    """Pairs for encoder training: 8 raw dimensions, 4 of them a per-sequence offset.

    A random linear encoder mostly sees the offset and retrieves poorly; an
    encoder that discards it recovers the temporal order.
    """
    return SynthConfig(num_actions=5, embed_dim=8, noise_std=0.1, drift=2.0,
                       nuisance_dims=4, nuisance_std=2.0, seed=seed)


def scenario(name: str, seed: int = 0, base: SynthConfig | None = None) -> SynthConfig:
    for n, cfg in scenario_suite(seed, base):
        if n == name:
            return cfg
    raise ConfigError(f"unknown scenario {name!r}; choose from {', '.join(SCENARIOS)}")


def pair_seed(seed: int, index: int) -> int:
    return int(np.random.SeedSequence([seed, index]).generate_state(1)[0])


def generate_pairs(cfg: SynthConfig, count: int, start: int = 0):
    """Pairs ``start .. start + count - 1`` of the task ``cfg`` describes.

    Every pair shares the task's action anchors; everything else is seeded
    from ``cfg.seed`` and the pair index.
    """
    task = cfg.seed if cfg.task_seed is None else cfg.task_seed
    return [generate_pair(cfg.replace(seed=pair_seed(cfg.seed, k), task_seed=task))
            for k in range(start, start + count)]


def write_pair(directory, x, y, truth: GroundTruthAlignment):
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    write_embedding(x, d / "x.csv")
    write_embedding(y, d / "y.csv")
    write_labels(truth.x_action, d / "x_labels.csv")
    write_labels(truth.y_action, d / "y_labels.csv")
    (d / "truth.json").write_text(truth.to_json())


def read_truth(path) -> GroundTruthAlignment:
    return GroundTruthAlignment.from_dict(json.loads(Path(path).read_text()))
