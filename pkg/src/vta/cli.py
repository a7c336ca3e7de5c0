"""``vta`` command line: align, synth, train, eval.

Configuration is one flat set of ``key = value`` pairs covering the
hyperparameters, the trainer and the synthetic generator. It can come from a
plain-text file (``--config``), be overridden by the dedicated flags or by
``--set key=value``, and is written back next to every command's outputs.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from . import metrics
from .aligner import align_pair
from .errors import ConfigError, DimensionError, EmptySequenceError, ParseError, TrainingDivergedError, VTAError
from .seqcore import EmbeddingSequence, Hyperparams, read_embedding, read_labels
from .sinkhorn import write_matrix_csv, write_pgm
from .synthgen import SCENARIOS, SynthConfig, generate_pairs, read_truth, scenario_suite, write_pair
from .trainer import ToyEncoder, TrainConfig, read_encoder, train, write_encoder, write_loss_csv
from .vavaloss import total_loss

log = logging.getLogger("vta")

EXIT_OK, EXIT_ERROR, EXIT_PARSE, EXIT_NONCONVERGED = 0, 1, 2, 3
NOT_MONOTONIC_NOTE = "not meaningful for non-monotonic data"
CONFIG_NAME = "config.txt"

# RunConfig keys that differ from the field they feed
_SYNTH_RENAMES = {"feature_dim": "embed_dim"}


def _synth_keys():
    return [f.name for f in fields(SynthConfig) if f.name != "seed"]


@dataclass(frozen=True)
class RunConfig:
    hp: Hyperparams = Hyperparams()
    train: TrainConfig = TrainConfig()
    synth: SynthConfig = SynthConfig()
    seed: int = 0
    jobs: int = 1
    scenario: str = "suite"
    pairs: int = 20
    first_pair: int = 0  # a later start gives held-out pairs of the same task
    fractions: tuple = (0.1, 0.5, 1.0)

    def __post_init__(self):
        if self.scenario != "suite" and self.scenario not in SCENARIOS:
            raise ConfigError(f"scenario must be 'suite' or one of {', '.join(SCENARIOS)}")
        if self.pairs < 1:
            raise ConfigError("pairs must be >= 1")
        if self.first_pair < 0:
            raise ConfigError("first_pair must be >= 0")
        if self.jobs < 1:
            raise ConfigError("jobs must be >= 1")
        if not self.fractions or any(not 0 < f <= 1 for f in self.fractions):
            raise ConfigError("fractions must be a non-empty list in (0, 1]")

    # flat view ------------------------------------------------------------------

    def to_flat(self) -> dict:
        out = {f.name: getattr(self.hp, f.name) for f in fields(Hyperparams)}
        for f in fields(TrainConfig):
            if f.name not in ("hp", "seed", "jobs"):
                out[f.name] = getattr(self.train, f.name)
        for name in _synth_keys():
            key = {v: k for k, v in _SYNTH_RENAMES.items()}.get(name, name)
            out[key] = getattr(self.synth, name)
        out.update(seed=self.seed, jobs=self.jobs, scenario=self.scenario, pairs=self.pairs,
                   first_pair=self.first_pair, fractions=self.fractions)
        return out

    @classmethod
    def from_flat(cls, flat: dict) -> "RunConfig":
        defaults = cls().to_flat()
        unknown = sorted(set(flat) - set(defaults))
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        merged = {**defaults, **flat}
        seed, jobs = int(merged["seed"]), int(merged["jobs"])
        try:
            hp = Hyperparams(**{f.name: merged[f.name] for f in fields(Hyperparams)})
            tr = TrainConfig(**{f.name: merged[f.name] for f in fields(TrainConfig)
                                if f.name not in ("hp", "seed", "jobs")}, hp=hp, seed=seed, jobs=jobs)
            sy = SynthConfig(**{name: merged[{v: k for k, v in _SYNTH_RENAMES.items()}.get(name, name)]
                                for name in _synth_keys()}, seed=seed)
        except VTAError as e:
            raise ConfigError(str(e)) from e
        return cls(hp, tr, sy, seed, jobs, merged["scenario"], int(merged["pairs"]),
                   int(merged["first_pair"]), tuple(merged["fractions"]))

    def replace(self, **changes) -> "RunConfig":
        flat = self.to_flat()
        flat.update(changes)
        return RunConfig.from_flat(flat)

    # text form ------------------------------------------------------------------

    def dumps(self) -> str:
        lines = []
        for k, v in sorted(self.to_flat().items()):
            lines.append(f"{k} = {_format_value(v)}")
        return "\n".join(lines) + "\n"

    @classmethod
    def loads(cls, text: str, origin: str = "<config>") -> "RunConfig":
        return cls.from_flat(parse_config_text(text, origin))

    @classmethod
    def load(cls, path) -> "RunConfig":
        p = Path(path)
        try:
            text = p.read_text()
        except FileNotFoundError as e:
            raise ParseError(f"config file not found: {p}") from e
        return cls.loads(text, str(p))


def _format_value(v) -> str:
    if v is None:
        return "none"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, tuple):
        return ",".join(_format_value(x) for x in v)
    return str(v)


def _field_types() -> dict:
    d = RunConfig().to_flat()
    return {k: type(v) for k, v in d.items()}


def _coerce(key: str, raw: str, origin: str):
    kind = _field_types()[key]
    raw = raw.strip()
    try:
        if key in ("virtual_cost", "task_seed"):
            if raw.lower() == "none":
                return None
            return float(raw) if key == "virtual_cost" else int(raw)
        if key == "frames_per_action":
            lo, hi = (int(s) for s in raw.replace("-", ",").split(","))
            return (lo, hi)
        if key == "fractions":
            return tuple(float(s) for s in raw.split(",") if s.strip())
        if kind is bool:
            if raw.lower() not in ("true", "false"):
                raise ValueError(f"expected true/false, got {raw!r}")
            return raw.lower() == "true"
        if kind is int:
            return int(raw)
        if kind is float:
            return float(raw)
        return raw
    except ValueError as e:
        raise ParseError(f"{origin}: bad value for {key}: {e}") from e


def parse_config_text(text: str, origin: str = "<config>") -> dict:
    """``key = value`` lines; ``#`` starts a comment. Unknown keys are rejected."""
    known = _field_types()
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ParseError(f"{origin}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in known:
            raise ConfigError(f"{origin}:{lineno}: unknown config key {key!r}")
        out[key] = _coerce(key, value, f"{origin}:{lineno}")
    return out


# --- argument handling ---------------------------------------------------------

_FLAG_KEYS = {
    "upsilon": "upsilon", "sigma": "sigma", "zeta": "zeta", "rho": "rho", "gamma": "gamma",
    "lambda1": "lambda1", "lambda2": "lambda2", "lambda3": "lambda3", "delta": "delta",
    "psi_start": "psi_start", "psi_end": "psi_end", "psi_steps": "psi_decay_steps",
    "seed": "seed", "jobs": "jobs",
}


def _common(parser):
    parser.add_argument("--config", metavar="PATH", help="plain-text key = value config file")
    parser.add_argument("--seed", type=int)
    parser.add_argument("--jobs", type=int)
    for name in ("upsilon", "sigma", "zeta", "rho", "gamma", "lambda1", "lambda2", "lambda3"):
        parser.add_argument(f"--{name}", type=float)
    parser.add_argument("--delta", type=int)
    parser.add_argument("--psi-start", type=float)
    parser.add_argument("--psi-end", type=float)
    parser.add_argument("--psi-steps", type=int)
    parser.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override any config key (repeatable)")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="vta", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    a = sub.add_parser("align", help="align two embedding files")
    a.add_argument("x_file")
    a.add_argument("y_file")
    a.add_argument("--out", required=True, metavar="DIR")
    _common(a)

    s = sub.add_parser("synth", help="write synthetic pairs with ground truth")
    s.add_argument("--out", required=True, metavar="DIR")
    _common(s)

    t = sub.add_parser("train", help="train a toy encoder on pair directories")
    t.add_argument("data_dir")
    t.add_argument("--out", required=True, metavar="DIR")
    _common(t)

    e = sub.add_parser("eval", help="evaluate an encoder (identity if omitted) on pair directories")
    e.add_argument("data_dir")
    e.add_argument("--encoder", metavar="FILE")
    e.add_argument("--out", required=True, metavar="DIR")
    _common(e)
    return p


def resolve_config(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    changes = {}
    for item in args.set:
        if "=" not in item:
            raise ParseError(f"--set expects KEY=VALUE, got {item!r}")
        key, value = (s.strip() for s in item.split("=", 1))
        if key not in _field_types():
            raise ConfigError(f"unknown config key {key!r}")
        changes[key] = _coerce(key, value, "--set")
    for attr, key in _FLAG_KEYS.items():
        value = getattr(args, attr, None)
        if value is not None:
            changes[key] = value
    return cfg.replace(**changes) if changes else cfg


def _write(path: Path, text: str):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)


def _pmap(fn, items, jobs):
    """Order-preserving map over a thread pool of ``jobs`` workers."""
    if jobs <= 1:
        return [fn(i) for i in items]
    with ThreadPoolExecutor(jobs) as pool:
        return list(pool.map(fn, items))


# --- commands --------------------------------------------------------------------

def cmd_align(x_file, y_file, cfg: RunConfig, out_dir) -> int:
    out = Path(out_dir)
    x = read_embedding(x_file)
    y = read_embedding(y_file)
    if x.dim != y.dim:
        raise DimensionError(f"{x_file} has dimension {x.dim}, {y_file} has {y.dim}")
    result, plan = align_pair(x, y, cfg.hp)
    loss = total_loss(x, y, cfg.hp)
    _write(out / "alignment.json", result.to_json())
    out.mkdir(parents=True, exist_ok=True)
    write_matrix_csv(plan.entries, out / "plan.csv")
    write_pgm(plan.entries, out / "plan.pgm")
    report = loss.to_dict()
    report.update(converged=plan.converged, iterations=plan.n_iter, marginal_error=plan.marginal_error)
    _write(out / "loss.json", json.dumps(report, indent=2, sort_keys=True) + "\n")
    _write(out / CONFIG_NAME, cfg.dumps())
    if not plan.converged:
        print(f"warning: solver did not converge (marginal error {plan.marginal_error:.3g})", file=sys.stderr)
        return EXIT_NONCONVERGED
    return EXIT_OK


def _scenarios(cfg: RunConfig):
    suite = scenario_suite(cfg.seed, cfg.synth)
    if cfg.scenario == "suite":
        return suite
    return [(n, c) for n, c in suite if n == cfg.scenario]


def cmd_synth(cfg: RunConfig, out_dir) -> int:
    out = Path(out_dir)
    jobs = []
    for name, scfg in _scenarios(cfg):
        jobs.append((name, scfg))
    generated = _pmap(lambda job: (job[0], generate_pairs(job[1], cfg.pairs, cfg.first_pair)), jobs, cfg.jobs)
    for name, pairs in generated:
        for k, (x, y, truth) in enumerate(pairs):
            write_pair(out / name / f"pair_{cfg.first_pair + k:03d}", x, y, truth)
    _write(out / CONFIG_NAME, cfg.dumps())
    return EXIT_OK


def find_pairs(data_dir):
    """Pair directories (holding x.csv and y.csv) below ``data_dir``, sorted."""
    root = Path(data_dir)
    if not root.is_dir():
        raise ParseError(f"data directory not found: {root}")
    found = sorted({p.parent for p in root.rglob("x.csv") if (p.parent / "y.csv").exists()})
    if not found:
        raise ParseError(f"no pair directories (x.csv + y.csv) under {root}")
    return found


def cmd_train(cfg: RunConfig, data_dir, out_dir) -> int:
    out = Path(out_dir)
    dirs = find_pairs(data_dir)
    pairs = [(read_embedding(d / "x.csv"), read_embedding(d / "y.csv")) for d in dirs]
    encoder, curve = train(pairs, cfg.train)
    out.mkdir(parents=True, exist_ok=True)
    write_encoder(encoder, out / "encoder.json")
    write_loss_csv(curve, out / "loss.csv")
    _write(out / CONFIG_NAME, cfg.dumps())
    if curve.unconverged:
        print(f"warning: {curve.unconverged} pair solves did not converge; raise sinkhorn_max_iter",
              file=sys.stderr)
        return EXIT_NONCONVERGED
    return EXIT_OK


@dataclass(frozen=True)
class _PairData:
    name: str
    x: EmbeddingSequence
    y: EmbeddingSequence
    x_labels: np.ndarray | None
    y_labels: np.ndarray | None
    truth: object


def _load_pair(d: Path, encoder) -> _PairData:
    x, y = read_embedding(d / "x.csv"), read_embedding(d / "y.csv")
    if encoder is not None:
        x, y = encoder.encode(x), encoder.encode(y)
    xl = yl = None
    if (d / "x_labels.csv").exists() and (d / "y_labels.csv").exists():
        xl = read_labels(d / "x_labels.csv", len(x))
        yl = read_labels(d / "y_labels.csv", len(y))
    truth = read_truth(d / "truth.json") if (d / "truth.json").exists() else None
    return _PairData(d.name, x, y, xl, yl, truth)


def evaluate_group(items, cfg: RunConfig) -> dict:
    """Metrics for one group of pairs; labels and ground truth are used when present."""
    taus = [metrics.kendalls_tau(p.x, p.y) for p in items]
    tau = {"value": float(np.mean(taus)), "pairs": len(taus)}
    if any(p.truth is not None and not p.truth.monotonic for p in items):
        tau["note"] = NOT_MONOTONIC_NOTE
    result = {"kendalls_tau": tau}
    if not all(p.x_labels is not None for p in items):
        return result

    def labeled(p, side):
        seq, lab = (p.x, p.x_labels) if side == "x" else (p.y, p.y_labels)
        prog = None
        if p.truth is not None:
            prog = p.truth.x_progress if side == "x" else p.truth.y_progress
        return metrics.LabeledSequence(seq, lab, prog)

    order = np.random.default_rng(cfg.seed).permutation(len(items))
    if len(items) == 1:
        train_seqs, test_seqs = [labeled(items[0], "x")], [labeled(items[0], "y")]
    else:
        cut = len(items) // 2
        train_seqs = [labeled(items[i], s) for i in order[:cut] for s in "xy"]
        test_seqs = [labeled(items[i], s) for i in order[cut:] for s in "xy"]
    result["phase_classification"] = {
        _format_value(float(f)): metrics.phase_classification_retry(train_seqs, test_seqs, f, cfg.seed)
        for f in cfg.fractions
    }
    if all(p.truth is not None for p in items):
        result["phase_progression"] = metrics.phase_progression(
            [labeled(p, s) for p in items for s in "xy"], cfg.seed)
        aligned = _pmap(lambda p: align_pair(p.x, p.y, cfg.hp), items, cfg.jobs)
        reports = [metrics.alignment_accuracy(r, p.truth) for (r, _), p in zip(aligned, items)]
        result["alignment"] = metrics.pool_reports(reports).to_dict()
        result["alignment"]["unconverged"] = sum(not plan.converged for _, plan in aligned)
    return result


def cmd_eval(cfg: RunConfig, data_dir, encoder_file, out_dir) -> int:
    out = Path(out_dir)
    root = Path(data_dir)
    encoder = read_encoder(encoder_file) if encoder_file else None
    groups = {}
    for d in find_pairs(root):
        rel = d.parent.relative_to(root).as_posix() if d.parent != root else "."
        groups.setdefault(rel, []).append(d)
    report = {}
    for name, dirs in sorted(groups.items()):
        items = [_load_pair(d, encoder) for d in dirs]
        report[name] = evaluate_group(items, cfg)
    _write(out / "metrics.json", metrics.dump_json(report))
    table = metrics.format_table(report) + "\n"
    _write(out / "metrics.txt", table)
    _write(out / CONFIG_NAME, cfg.dumps())
    sys.stdout.write(table)
    unconverged = sum(g.get("alignment", {}).get("unconverged", 0) for g in report.values())
    if unconverged:
        print(f"warning: {unconverged} alignments did not converge", file=sys.stderr)
        return EXIT_NONCONVERGED
    return EXIT_OK


# --- entry point -------------------------------------------------------------------

def _setup_logging():
    level = os.environ.get("VTA_LOG", "error").lower()
    levels = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}
    logging.basicConfig(format="%(levelname)s %(name)s: %(message)s")
    # set on our logger, since basicConfig does nothing when the root already has handlers
    log.setLevel(levels.get(level, logging.ERROR))
    if level not in levels:
        log.error("VTA_LOG=%s not understood; use error, info or debug", level)


def main(argv=None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    try:
        cfg = resolve_config(args)
        if args.command == "align":
            return cmd_align(args.x_file, args.y_file, cfg, args.out)
        if args.command == "synth":
            return cmd_synth(cfg, args.out)
        if args.command == "train":
            return cmd_train(cfg, args.data_dir, args.out)
        return cmd_eval(cfg, args.data_dir, args.encoder, args.out)
    except (ParseError, ConfigError, DimensionError, EmptySequenceError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_PARSE
    except (VTAError, TrainingDivergedError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
