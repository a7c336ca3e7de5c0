"""Train the toy encoder on "mixed" pairs and compare held-out Kendall's tau before and after.

    python3 scripts/run_training.py [--out DIR] [--seed N]
"""

import argparse
import contextlib
import csv
import io
import json
import sys
from pathlib import Path

from vta.cli import main
from vta.trainer import ToyEncoder, write_encoder

CONFIGS = Path(__file__).resolve().parents[1] / "configs"
HELD_OUT = ("identical", "offset", "speed")


def _vta(*argv) -> int:
    with contextlib.redirect_stdout(io.StringIO()):
        return main([str(a) for a in argv])


def run(out: Path, seed: int) -> int:
    conf = ["--config", CONFIGS / "training.conf", "--seed", seed]
    steps = [["synth", *conf, "--set", "scenario=mixed", "--set", "pairs=10", "--out", out / "train_data"]]
    for name in HELD_OUT:
        steps.append(["synth", *conf, "--set", f"scenario={name}", "--set", "pairs=5", "--set", "first_pair=100",
                      "--out", out / "held_out"])
    steps.append(["train", out / "train_data", *conf, "--out", out / "model"])
    for argv in steps:
        code = _vta(*argv)
        if code:
            return code
    write_encoder(ToyEncoder.init(8, 4, 0, seed), out / "random_encoder.json")
    for label, enc in (("random", out / "random_encoder.json"), ("trained", out / "model" / "encoder.json")):
        code = _vta("eval", out / "held_out", *conf, "--encoder", enc, "--out", out / f"eval_{label}")
        if code:
            return code
    with open(out / "model" / "loss.csv") as fh:
        totals = [float(r["total"]) for r in csv.DictReader(fh)]
    print(f"mean total loss {totals[0]:.6g} -> {totals[-1]:.6g} ({1 - totals[-1] / totals[0]:.1%} lower)")
    before = json.loads((out / "eval_random" / "metrics.json").read_text())
    after = json.loads((out / "eval_trained" / "metrics.json").read_text())
    for name in HELD_OUT:
        print(f"{name:10} tau {before[name]['kendalls_tau']['value']:7.3f} -> "
              f"{after[name]['kendalls_tau']['value']:.3f}")
    return 0


if __name__ == "__main__":
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--out", type=Path, default=Path("training_out"))
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args()
    sys.exit(run(args.out, args.seed))
