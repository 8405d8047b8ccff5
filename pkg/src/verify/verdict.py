from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, Optional

import numpy as np


class VerdictStatus(str, Enum):
    SAT = "SAT"
    UNSAT = "UNSAT"
    UNKNOWN = "UNKNOWN"


EXIT_CODES = {VerdictStatus.UNSAT: 0, VerdictStatus.SAT: 1, VerdictStatus.UNKNOWN: 2}


@dataclass
class VerdictStats:
    subproblems: int = 0
    tighten_calls: int = 0
    wall_time: float = 0.0
    deepest: int = 0

    def to_dict(self) -> Dict:
        return {
            "subproblems": self.subproblems,
            "tighten_calls": self.tighten_calls,
            "wall_time": round(self.wall_time, 6),
            "deepest": self.deepest,
        }


@dataclass
class Verdict:
    """SAT carries a witness already re-checked by forward evaluation; UNKNOWN carries a reason."""

    status: VerdictStatus
    witness: Optional[np.ndarray] = None
    reason: str = ""
    stats: VerdictStats = field(default_factory=VerdictStats)

    @classmethod
    def sat(cls, witness: np.ndarray, stats: Optional[VerdictStats] = None) -> "Verdict":
        return cls(VerdictStatus.SAT, witness=np.asarray(witness, dtype=float), stats=stats or VerdictStats())

    @classmethod
    def unsat(cls, stats: Optional[VerdictStats] = None) -> "Verdict":
        return cls(VerdictStatus.UNSAT, stats=stats or VerdictStats())

    @classmethod
    def unknown(cls, reason: str, stats: Optional[VerdictStats] = None) -> "Verdict":
        return cls(VerdictStatus.UNKNOWN, reason=reason, stats=stats or VerdictStats())

    @property
    def exit_code(self) -> int:
        return EXIT_CODES[self.status]

    def to_dict(self) -> Dict:
        out = {"status": self.status.value, "stats": self.stats.to_dict()}
        if self.witness is not None:
            out["witness"] = self.witness.tolist()
        if self.reason:
            out["reason"] = self.reason
        return out
