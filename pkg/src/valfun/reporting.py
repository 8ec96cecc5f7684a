"""Hypothesis bookkeeping shared by the estimate modules.

Every estimate carries a log of the assumptions behind it: which were
verified computationally, which were taken from asserted problem flags,
and which failed (the estimate is still produced, tagged accordingly).
"""

from __future__ import annotations

from dataclasses import dataclass

VERIFIED = "verified"
ASSERTED = "asserted"
ASSUMED = "assumed"
FAILED = "failed"
NOT_CHECKED = "not-checked"


@dataclass
class HypothesisRecord:
    name: str
    status: str  # one of the constants above
    detail: str = ""

    def to_json(self) -> dict:
        return {"name": self.name, "status": self.status, "detail": self.detail}


def worst_status(records) -> str:
    order = [VERIFIED, ASSERTED, ASSUMED, NOT_CHECKED, FAILED]
    worst = VERIFIED
    for r in records:
        if order.index(r.status) > order.index(worst):
            worst = r.status
    return worst
