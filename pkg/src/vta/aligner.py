"""Decode transport plans into per-frame partners, with a virtual frame for unmatched content."""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import ParamError, StateError
from .seqcore import Hyperparams
from .sinkhorn import TransportPlan
from .vavaloss import pair_state

VIRTUAL = -1


@dataclass(frozen=True)
class AlignmentResult:
    """Partner of every frame (0-based, ``VIRTUAL`` = -1) and its confidence.

    A confidence is the winning real partner's share of the frame's mass;
    for a ``VIRTUAL`` assignment it is the best (sub-threshold) real share.
    """

    x_to_y: tuple
    y_to_x: tuple
    x_confidence: tuple
    y_confidence: tuple

    def to_dict(self) -> dict:
        return {
            "x_to_y": list(self.x_to_y),
            "y_to_x": list(self.y_to_x),
            "confidences": {"x": list(self.x_confidence), "y": list(self.y_confidence)},
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"

    @classmethod
    def from_dict(cls, obj) -> "AlignmentResult":
        conf = obj.get("confidences", {})
        nx, ny = len(obj["x_to_y"]), len(obj["y_to_x"])
        return cls(tuple(int(v) for v in obj["x_to_y"]), tuple(int(v) for v in obj["y_to_x"]),
                   tuple(float(v) for v in conf.get("x", [0.0] * nx)),
                   tuple(float(v) for v in conf.get("y", [0.0] * ny)))


def _decode_rows(t, zeta):
    """``t`` has real columns followed by one virtual column."""
    mass = t.sum(axis=1)
    real = t[:, :-1]
    with np.errstate(invalid="ignore", divide="ignore"):
        share = np.where(mass[:, None] > 0, real / mass[:, None], 0.0)
    best = np.argmax(share, axis=1)
    conf = share[np.arange(len(best)), best]
    partner = np.where(conf < zeta, VIRTUAL, best)
    return tuple(int(p) for p in partner), tuple(float(c) for c in conf)


def decode_alignment(plan: TransportPlan, zeta: float) -> AlignmentResult:
    """Best real partner per frame, or ``VIRTUAL`` when its share of the frame's mass is below ``zeta``."""
    if not plan.augmented:
        raise StateError("decode_alignment needs an augmented plan")
    if not 0 < zeta < 1:
        raise ParamError("zeta must lie in (0, 1)")
    t = plan.entries
    x_to_y, xc = _decode_rows(t[:-1, :], zeta)
    y_to_x, yc = _decode_rows(t[:, :-1].T, zeta)
    return AlignmentResult(x_to_y, y_to_x, xc, yc)


def align_pair(x, y, hp: Hyperparams, step=None):
    """Solve the augmented plan for a pair and decode it.

    ``step`` selects the prior mixture weight; ``None`` uses the end of the
    schedule. Returns ``(AlignmentResult, TransportPlan)``.
    """
    state = pair_state(x, y, hp, step)
    return decode_alignment(state.plan, hp.zeta), state.plan
