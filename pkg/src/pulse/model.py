"""Domain vocabulary: profiles, sensing events, EMA entries and target labels."""

from __future__ import annotations

import statistics
from dataclasses import dataclass, field
from datetime import datetime, timezone
from typing import Any, Final, Iterable, Mapping, Sequence

MODALITIES: Final[tuple[str, ...]] = (
    "motion",
    "screen",
    "gps",
    "app_usage",
    "keyboard",
    "sleep",
    "light",
)
ACTIVITIES: Final[tuple[str, ...]] = ("stationary", "walking", "running", "automotive")
SCREEN_KINDS: Final[tuple[str, ...]] = ("unlock", "lock", "session")
PLATFORMS: Final[tuple[str, ...]] = ("ios", "android")

BINARY_TARGETS: Final[tuple[str, ...]] = (
    "PA_State",
    "NA_State",
    "happy",
    "sad",
    "afraid",
    "miserable",
    "worried",
    "cheerful",
    "pleased",
    "grateful",
    "lonely",
    "interaction_quality",
    "physical_pain",
    "future_outlook",
    "ER_desire_State",
    "INT_availability",
)
FOCUS_TARGETS: Final[tuple[str, ...]] = (
    "PA_State",
    "NA_State",
    "ER_desire_State",
    "INT_availability",
)
CONTINUOUS_SCORES: Final[tuple[str, ...]] = ("pa", "na", "er_desire")


class DataError(ValueError):
    """Malformed or inconsistent dataset content."""


class InsufficientDataError(ValueError):
    """Not enough observations for the requested computation."""


@dataclass(frozen=True)
class TargetSchema:
    binary: tuple[str, ...] = BINARY_TARGETS
    focus: tuple[str, ...] = FOCUS_TARGETS
    # Scale endpoints are dataset configuration; the source instruments are unstated.
    bounds: Mapping[str, tuple[float, float]] = field(
        default_factory=lambda: {"pa": (0.0, 50.0), "na": (0.0, 50.0), "er_desire": (0.0, 10.0)}
    )

    def __post_init__(self) -> None:
        if not set(self.focus) <= set(self.binary):
            raise ValueError("focus targets must be a subset of the binary targets")

    def clamp(self, score: str, value: float) -> float:
        lo, hi = self.bounds[score]
        return min(max(value, lo), hi)


DEFAULT_SCHEMA: Final[TargetSchema] = TargetSchema()


def parse_time(value: str | datetime) -> datetime:
    """Parse an ISO-8601 instant into an aware UTC datetime."""
    if isinstance(value, datetime):
        ts = value
    else:
        ts = datetime.fromisoformat(value.replace("Z", "+00:00"))
    if ts.tzinfo is None:
        ts = ts.replace(tzinfo=timezone.utc)
    return ts.astimezone(timezone.utc)


def format_time(ts: datetime) -> str:
    return ts.astimezone(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


@dataclass(frozen=True)
class UserProfile:
    user_id: str
    platform: str
    demographics: str = ""
    cancer_history: str = ""
    traits: Mapping[str, float] = field(default_factory=dict)
    tz: str = "UTC"

    def __post_init__(self) -> None:
        if self.platform not in PLATFORMS:
            raise DataError(f"unknown platform {self.platform!r}")

    def to_json(self) -> dict[str, Any]:
        return {
            "user_id": self.user_id,
            "platform": self.platform,
            "demographics": self.demographics,
            "cancer_history": self.cancer_history,
            "traits": dict(self.traits),
            "tz": self.tz,
        }

    @classmethod
    def from_json(cls, obj: Mapping[str, Any]) -> UserProfile:
        return cls(
            user_id=str(obj["user_id"]),
            platform=obj["platform"],
            demographics=obj.get("demographics", ""),
            cancer_history=obj.get("cancer_history", ""),
            traits={k: float(v) for k, v in obj.get("traits", {}).items()},
            tz=obj.get("tz", "UTC"),
        )


_PAYLOAD_FIELDS: Final[dict[str, tuple[str, ...]]] = {
    "motion": ("activity", "duration_min"),
    "screen": ("kind", "duration_min"),
    "gps": ("displacement_km", "at_home", "cluster_id"),
    "app_usage": ("category", "duration_min"),
    "keyboard": ("chars", "duration_min"),
    "sleep": ("start", "end"),
    "light": ("lux",),
}


def _check_payload(modality: str, payload: Mapping[str, Any]) -> None:
    if modality not in _PAYLOAD_FIELDS:
        raise DataError(f"unknown modality {modality!r}")
    missing = [k for k in _PAYLOAD_FIELDS[modality] if k not in payload]
    if modality == "screen" and missing == ["duration_min"] and payload.get("kind") != "session":
        missing = []
    if missing:
        raise DataError(f"{modality} payload missing {missing}")
    if payload.get("duration_min", 0.0) < 0:
        raise DataError("negative duration")
    if modality == "motion" and payload["activity"] not in ACTIVITIES:
        raise DataError(f"unknown activity {payload['activity']!r}")
    if modality == "screen" and payload["kind"] not in SCREEN_KINDS:
        raise DataError(f"unknown screen event kind {payload['kind']!r}")
    if modality == "gps" and payload["displacement_km"] < 0:
        raise DataError("negative displacement")
    if modality == "keyboard" and payload["chars"] < 0:
        raise DataError("negative character count")
    if modality == "light" and payload["lux"] < 0:
        raise DataError("negative lux")
    if modality == "sleep" and not parse_time(payload["end"]) > parse_time(payload["start"]):
        raise DataError("sleep episode must end after it starts")


@dataclass(frozen=True)
class SensingEvent:
    """One reading or episode.

    Episodes (motion, screen sessions, app usage, keyboard) are stamped at their
    start and carry ``duration_min``. Sleep episodes are stamped at their start
    with explicit ``start``/``end`` instants in the payload.
    """

    user_id: str
    timestamp: datetime
    modality: str
    payload: Mapping[str, Any]

    def __post_init__(self) -> None:
        _check_payload(self.modality, self.payload)

    @property
    def duration_min(self) -> float:
        if self.modality == "sleep":
            return (self.sleep_end - self.sleep_start).total_seconds() / 60.0
        return float(self.payload.get("duration_min", 0.0))

    @property
    def sleep_start(self) -> datetime:
        return parse_time(self.payload["start"])

    @property
    def sleep_end(self) -> datetime:
        return parse_time(self.payload["end"])

    def to_json(self) -> dict[str, Any]:
        return {
            "user_id": self.user_id,
            "timestamp": format_time(self.timestamp),
            "modality": self.modality,
            **dict(self.payload),
        }

    @classmethod
    def from_json(cls, obj: Mapping[str, Any]) -> SensingEvent:
        modality = obj["modality"]
        payload = {k: v for k, v in obj.items() if k not in ("user_id", "timestamp", "modality")}
        return cls(str(obj["user_id"]), parse_time(obj["timestamp"]), modality, payload)


@dataclass(frozen=True)
class EmaEntry:
    user_id: str
    timestamp: datetime
    pa_score: float
    na_score: float
    er_desire_score: float
    binary_targets: Mapping[str, bool]
    diary: str | None = None

    def __post_init__(self) -> None:
        keys = set(self.binary_targets)
        if keys != set(BINARY_TARGETS):
            extra = sorted(keys - set(BINARY_TARGETS))
            missing = sorted(set(BINARY_TARGETS) - keys)
            raise DataError(f"binary targets mismatch: missing={missing} extra={extra}")

    def score(self, name: str) -> float:
        return {"pa": self.pa_score, "na": self.na_score, "er_desire": self.er_desire_score}[name]

    def to_json(self) -> dict[str, Any]:
        return {
            "user_id": self.user_id,
            "timestamp": format_time(self.timestamp),
            "pa_score": self.pa_score,
            "na_score": self.na_score,
            "er_desire_score": self.er_desire_score,
            "binary_targets": {k: bool(self.binary_targets[k]) for k in BINARY_TARGETS},
            "diary": self.diary,
        }

    @classmethod
    def from_json(cls, obj: Mapping[str, Any]) -> EmaEntry:
        return cls(
            user_id=str(obj["user_id"]),
            timestamp=parse_time(obj["timestamp"]),
            pa_score=float(obj["pa_score"]),
            na_score=float(obj["na_score"]),
            er_desire_score=float(obj["er_desire_score"]),
            binary_targets={k: bool(v) for k, v in obj["binary_targets"].items()},
            diary=obj.get("diary"),
        )


def derive_state_labels(entries: Sequence[EmaEntry], score: str) -> list[bool]:
    """Label each entry True when its score exceeds the user's own median.

    Ties with the median are labeled False. Only used to construct ground
    truth; agents never see the threshold.
    """
    if score not in CONTINUOUS_SCORES:
        raise ValueError(f"unknown score {score!r}")
    if len(entries) < 2:
        raise InsufficientDataError("need at least 2 entries to derive a personal threshold")
    if len({e.user_id for e in entries}) > 1:
        raise ValueError("entries must belong to a single user")
    values = [e.score(score) for e in entries]
    threshold = statistics.median(values)
    return [v > threshold for v in values]


@dataclass
class ValidationReport:
    n_users: int = 0
    entry_counts: dict[str, int] = field(default_factory=dict)
    event_counts: dict[str, int] = field(default_factory=dict)
    modality_coverage: dict[str, list[str]] = field(default_factory=dict)
    ordering_violations: list[str] = field(default_factory=list)
    platform_violations: list[str] = field(default_factory=list)
    orphan_users: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not (self.ordering_violations or self.platform_violations or self.orphan_users)

    def to_json(self) -> dict[str, Any]:
        return {
            "n_users": self.n_users,
            "ok": self.ok,
            "entry_counts": dict(sorted(self.entry_counts.items())),
            "event_counts": dict(sorted(self.event_counts.items())),
            "modality_coverage": dict(sorted(self.modality_coverage.items())),
            "ordering_violations": self.ordering_violations,
            "platform_violations": self.platform_violations,
            "orphan_users": self.orphan_users,
        }


def validate_dataset(
    profiles: Iterable[UserProfile],
    events: Iterable[SensingEvent],
    entries: Iterable[EmaEntry],
) -> ValidationReport:
    """Summarize a dataset and list rule violations. Never raises."""
    report = ValidationReport()
    by_id = {p.user_id: p for p in profiles}
    report.n_users = len(by_id)
    coverage: dict[str, set[str]] = {uid: set() for uid in by_id}
    flagged_platform: set[str] = set()
    orphans: set[str] = set()
    for ev in events:
        report.event_counts[ev.user_id] = report.event_counts.get(ev.user_id, 0) + 1
        profile = by_id.get(ev.user_id)
        if profile is None:
            orphans.add(ev.user_id)
            continue
        coverage[ev.user_id].add(ev.modality)
        if ev.modality == "app_usage" and profile.platform == "ios" and ev.user_id not in flagged_platform:
            flagged_platform.add(ev.user_id)
            report.platform_violations.append(f"{ev.user_id}: ios user has app_usage events")
    last_seen: dict[str, datetime] = {}
    for entry in entries:
        if entry.user_id not in by_id:
            orphans.add(entry.user_id)
        report.entry_counts[entry.user_id] = report.entry_counts.get(entry.user_id, 0) + 1
        prev = last_seen.get(entry.user_id)
        if prev is not None and entry.timestamp <= prev:
            report.ordering_violations.append(
                f"{entry.user_id}: EMA at {format_time(entry.timestamp)} not after {format_time(prev)}"
            )
        last_seen[entry.user_id] = entry.timestamp
    for uid in by_id:
        report.entry_counts.setdefault(uid, 0)
    report.modality_coverage = {uid: sorted(mods) for uid, mods in coverage.items()}
    report.orphan_users = sorted(orphans)
    return report
