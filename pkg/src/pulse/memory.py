"""Per-user session memory: an append-only reflection log.

Reflections hold only the agent's own observations plus one receptivity bit
(elevated-and-increasing ER desire while available). A pattern-based filter
rejects text that pairs a target name with a number or a label value; false
positives are accepted and handled by re-asking the reflection generator.
"""

from __future__ import annotations

import json
import re
import statistics
import threading
from dataclasses import dataclass
from datetime import datetime
from pathlib import Path
from typing import Any, Final, Sequence

from pulse.dataset import dumps
from pulse.model import BINARY_TARGETS, EmaEntry, format_time, parse_time

DEFAULT_BUDGET: Final = 51_000
TRUNCATION_MARK: Final = " ...[truncated]"

_SNAKE_TARGETS = [re.escape(t).replace("_", r"[_\s-]?") for t in BINARY_TARGETS]
_TARGET_TERMS = _SNAKE_TARGETS + [
    r"(?:pa|na|er[_\s-]?desire)[_\s-]?(?:score|pred|state)s?",
    r"PA",
    r"NA",
    r"ER",
    r"positive\s+affect",
    r"negative\s+affect",
    r"affect",
    r"emotion\s+regulation(?:\s+desire)?",
    r"desire",
    r"PANAS",
    r"mood",
    r"availability",
    r"available",
]
_TARGET = r"\b(?:" + "|".join(_TARGET_TERMS) + r")\b"
_CODE_TARGET = r"\b(?:" + "|".join(t for t, name in zip(_SNAKE_TARGETS, BINARY_TARGETS) if "_" in name) + r"|ER[_\s-]?desire)\b"
_NUMBER = r"(?<![\w.])[-+]?\d+(?:\.\d+)?\b"
_LABEL = r"(?:true|false|yes|no|elevated|not\s+elevated|high|low|typical|positive|negative|[01])\b"
# anything up to the end of the sentence; a decimal point does not end it
_SENTENCE = r"(?:[^.!?;\n]|\.(?=\d))*?"

LEAK_PATTERNS: Final[tuple[re.Pattern[str], ...]] = (
    # a target name and a number in the same sentence: "PA score was 18",
    # "scored 18 on PA", "NA, judging by the late driving, was around 31"
    re.compile(_TARGET + _SENTENCE + _NUMBER, re.IGNORECASE),
    re.compile(_NUMBER + _SENTENCE + _TARGET, re.IGNORECASE),
    # code-form target with a label value: "NA_State was elevated"
    re.compile(_CODE_TARGET + _SENTENCE + r"\b" + _LABEL, re.IGNORECASE),
    # explicit assignment of any target: "sad: yes", "lonely = true"
    re.compile(_TARGET + r"[ \t]*[:=][ \t]*(?:" + _LABEL + "|" + _NUMBER + ")", re.IGNORECASE),
    # any target word followed closely by a bare truth value: "worried was yes", "sad was elevated"
    re.compile(_TARGET + r"(?:[^\w\n]+\w+)?[^\w\n]+(?:true|false|yes|no|(?:not\s+)?elevated)\b", re.IGNORECASE),
    re.compile(r"\b(?:ground[\s_-]*truth|true\s+labels?|actual\s+(?:scores?|labels?|outcomes?))\b", re.IGNORECASE),
)


class LeakError(ValueError):
    """Reflection text appears to contain ground-truth scores or labels."""

    def __init__(self, span: str):
        super().__init__(f"reflection rejected by leak filter: {span!r}")
        self.span = span


class OrderError(ValueError):
    """Reflection appended out of EMA order."""


def find_leak(text: str) -> str | None:
    for pat in LEAK_PATTERNS:
        m = pat.search(text)
        if m:
            return m.group(0)
    return None


def normalize_text(text: str) -> str:
    return " ".join(text.split())


def receptivity_outcome(entries: Sequence[EmaEntry], i: int) -> bool:
    """ER desire increased and the user was available at entry ``i``.

    "Increased" compares with the previous entry; the first entry compares
    with the user's median ER-desire score.
    """
    er = [e.er_desire_score for e in entries]
    reference = er[i - 1] if i > 0 else statistics.median(er)
    return er[i] > reference and bool(entries[i].binary_targets["INT_availability"])


@dataclass(frozen=True)
class ReflectionRecord:
    user_id: str
    entry_index: int
    created_at: datetime
    text: str
    receptivity_outcome: bool

    def to_json(self) -> dict[str, Any]:
        return {
            "user_id": self.user_id,
            "entry_index": self.entry_index,
            "created_at": format_time(self.created_at),
            "text": self.text,
            "receptivity_outcome": self.receptivity_outcome,
        }

    @classmethod
    def from_json(cls, obj: dict[str, Any]) -> ReflectionRecord:
        return cls(
            obj["user_id"],
            int(obj["entry_index"]),
            parse_time(obj["created_at"]),
            obj["text"],
            bool(obj["receptivity_outcome"]),
        )


@dataclass(frozen=True)
class MemoryDocument:
    user_id: str
    rendered: str
    records_included: int
    records_total: int

    @property
    def char_count(self) -> int:
        return len(self.rendered)


class MemoryLog:
    """Reflections per user, optionally persisted as ``<dir>/<user>.jsonl``."""

    def __init__(self, directory: Path | str | None = None):
        self.directory = Path(directory) if directory is not None else None
        self._records: dict[str, list[ReflectionRecord]] = {}
        self._lock = threading.Lock()
        if self.directory is not None:
            self.directory.mkdir(parents=True, exist_ok=True)
            for path in sorted(self.directory.glob("*.jsonl")):
                with open(path, encoding="utf-8") as fh:
                    for line in fh:
                        if line.strip():
                            rec = ReflectionRecord.from_json(json.loads(line))
                            self._records.setdefault(rec.user_id, []).append(rec)

    def records(self, user_id: str) -> list[ReflectionRecord]:
        with self._lock:
            return list(self._records.get(user_id, []))

    def last_index(self, user_id: str) -> int | None:
        recs = self._records.get(user_id)
        return recs[-1].entry_index if recs else None

    def append(self, record: ReflectionRecord) -> MemoryLog:
        text = normalize_text(record.text)
        leak = find_leak(text)
        if leak is not None:
            raise LeakError(leak)
        record = ReflectionRecord(record.user_id, record.entry_index, record.created_at, text, record.receptivity_outcome)
        with self._lock:
            last = self.last_index(record.user_id)
            if last is not None and record.entry_index <= last:
                raise OrderError(f"entry_index {record.entry_index} is not after {last} for {record.user_id!r}")
            self._records.setdefault(record.user_id, []).append(record)
            if self.directory is not None:
                with open(self.directory / f"{record.user_id}.jsonl", "a", encoding="utf-8") as fh:
                    fh.write(dumps(record.to_json()) + "\n")
        return self


def append_reflection(log: MemoryLog, record: ReflectionRecord) -> MemoryLog:
    return log.append(record)


def _record_block(rec: ReflectionRecord) -> str:
    bit = "yes" if rec.receptivity_outcome else "no"
    return f"Reflection on EMA entry {rec.entry_index + 1} (receptive: {bit})\n{rec.text}\n"


def render_memory(log: MemoryLog, user_id: str, budget_chars: int = DEFAULT_BUDGET) -> MemoryDocument:
    """Newest reflections first, whole records only, within ``budget_chars``.

    If even the newest record does not fit, it is cut and marked.
    """
    if budget_chars <= 0:
        raise ValueError("budget_chars must be positive")
    records = log.records(user_id)
    if not records:
        return MemoryDocument(user_id, "", 0, 0)
    header = f"Session memory: {len(records)} reflections from prior entries, newest first.\n"
    parts = [header]
    used = len(header)
    included = 0
    for rec in reversed(records):
        block = _record_block(rec)
        if used + len(block) <= budget_chars:
            parts.append(block)
            used += len(block)
            included += 1
            continue
        if included == 0:
            room = budget_chars - used - len(TRUNCATION_MARK)
            # a cut can complete a pattern ("PA 1" out of "PA 1x"); back off until clean
            while room > 0 and find_leak(block[:room]) is not None:
                room -= 1
            if room > 0:
                parts.append(block[:room] + TRUNCATION_MARK)
                included = 1
        break
    rendered = "".join(parts)[:budget_chars]
    return MemoryDocument(user_id, rendered, included, len(records))
