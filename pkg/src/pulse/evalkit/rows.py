"""Per-entry evaluation rows and their JSONL persistence."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Iterable, Mapping

from pulse.dataset import dumps, iter_jsonl, write_jsonl
from pulse.model import BINARY_TARGETS, EmaEntry


@dataclass(frozen=True)
class EvalRow:
    user_id: str
    entry_index: int
    condition: str
    pred: Mapping[str, bool]
    actual: Mapping[str, bool]
    pred_cont: Mapping[str, float]
    actual_cont: Mapping[str, float]
    confidence: float
    turns_used: int
    tool_trace: tuple[str, ...]
    trace_digest: str

    @property
    def key(self) -> tuple[str, int]:
        return (self.user_id, self.entry_index)

    def focus_accuracy(self, targets: Iterable[str]) -> float:
        ts = list(targets)
        return sum(1 for t in ts if self.pred[t] == self.actual[t]) / len(ts)

    def to_json(self) -> dict[str, Any]:
        return {
            "user_id": self.user_id,
            "entry_index": self.entry_index,
            "condition": self.condition,
            "pred": {t: bool(self.pred[t]) for t in BINARY_TARGETS},
            "actual": {t: bool(self.actual[t]) for t in BINARY_TARGETS},
            "pred_cont": dict(self.pred_cont),
            "actual_cont": dict(self.actual_cont),
            "confidence": self.confidence,
            "turns_used": self.turns_used,
            "tool_trace": list(self.tool_trace),
            "trace_digest": self.trace_digest,
        }

    @classmethod
    def from_json(cls, obj: Mapping[str, Any]) -> EvalRow:
        return cls(
            user_id=str(obj["user_id"]),
            entry_index=int(obj["entry_index"]),
            condition=str(obj["condition"]),
            pred={t: bool(obj["pred"][t]) for t in BINARY_TARGETS},
            actual={t: bool(obj["actual"][t]) for t in BINARY_TARGETS},
            pred_cont={k: float(v) for k, v in obj["pred_cont"].items()},
            actual_cont={k: float(v) for k, v in obj["actual_cont"].items()},
            confidence=float(obj["confidence"]),
            turns_used=int(obj["turns_used"]),
            tool_trace=tuple(obj["tool_trace"]),
            trace_digest=str(obj["trace_digest"]),
        )


def make_row(condition: str, user_id: str, index: int, entry: EmaEntry, prediction: Any) -> EvalRow:
    trace = [c.to_json() for c in prediction.tool_trace]
    return EvalRow(
        user_id=user_id,
        entry_index=index,
        condition=condition,
        pred=dict(prediction.binary),
        actual=dict(entry.binary_targets),
        pred_cont={"pa": prediction.pa_pred, "na": prediction.na_pred, "er_desire": prediction.er_desire_pred},
        actual_cont={"pa": entry.pa_score, "na": entry.na_score, "er_desire": entry.er_desire_score},
        confidence=prediction.confidence,
        turns_used=prediction.turns_used,
        tool_trace=tuple(c["tool_name"] for c in trace),
        trace_digest=hashlib.sha256(dumps(trace).encode()).hexdigest()[:16],
    )


def sort_rows(rows: Iterable[EvalRow]) -> list[EvalRow]:
    return sorted(rows, key=lambda r: (r.condition, r.user_id, r.entry_index))


def write_rows(path: Path | str, rows: Iterable[EvalRow]) -> None:
    write_jsonl(path, (r.to_json() for r in sort_rows(rows)))


def read_rows(path: Path | str) -> list[EvalRow]:
    return list(iter_jsonl(path, EvalRow.from_json))
