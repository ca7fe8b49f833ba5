"""Per-user time index with temporal-boundary enforcement.

Every agent-visible read goes through an :class:`AccessContext`, which only
sees events that started strictly before the EMA instant. Episodes that are
still running at the boundary are clipped to it: duration-bearing events get a
shortened ``duration_min`` plus ``"truncated": true``; sleep episodes get
``end`` set to the boundary plus ``"ongoing": true``.

Day boundaries follow the profile's IANA timezone (``tz``, default UTC).
Sleep is credited to the local date on which the episode ends; all other
modalities to the local date on which the event starts.

``location_variance`` is ``ln(1 + var(o))`` where ``o_c`` is, for each GPS
cluster visited that day, the sum over its samples of ``1 + displacement_km``
and ``var`` is the population variance across visited clusters.
"""

from __future__ import annotations

import bisect
import math
from dataclasses import dataclass, field, fields
from datetime import date, datetime, time, timedelta
from typing import Any, Final, Iterable, Mapping
from zoneinfo import ZoneInfo

from pulse.model import (
    ACTIVITIES,
    MODALITIES,
    DataError,
    EmaEntry,
    SensingEvent,
    UserProfile,
    format_time,
)

AVAILABLE: Final = "available"
UNAVAILABLE_PLATFORM: Final = "unavailable_platform"
UNAVAILABLE_SPARSE: Final = "unavailable_sparse"

# Sleep episodes are indexed by start; this bounds how far back one can begin.
_MAX_SLEEP = timedelta(hours=24)


class BoundaryViolationError(ValueError):
    """A read reached at or past the context's EMA instant."""


class ContextError(LookupError):
    """Unknown user or EMA timestamp."""


def clip_event(ev: SensingEvent, until: datetime) -> SensingEvent:
    """Return ``ev`` as it would be observed at instant ``until``.

    ``ev.timestamp`` must already be before ``until``.
    """
    if ev.modality == "sleep":
        if ev.sleep_end <= until:
            return ev
        payload = dict(ev.payload)
        payload["end"] = format_time(until)
        payload["ongoing"] = True
        return SensingEvent(ev.user_id, ev.timestamp, ev.modality, payload)
    dur = ev.payload.get("duration_min")
    if not dur:
        return ev
    end = ev.timestamp + timedelta(minutes=dur)
    if end <= until:
        return ev
    payload = dict(ev.payload)
    payload["duration_min"] = (until - ev.timestamp).total_seconds() / 60.0
    payload["truncated"] = True
    return SensingEvent(ev.user_id, ev.timestamp, ev.modality, payload)


@dataclass
class DailyAggregates:
    date: str
    partial: bool = False
    sleep_available: bool = False
    motion_available: bool = False
    screen_available: bool = False
    gps_available: bool = False
    app_usage_available: bool = False
    keyboard_available: bool = False
    light_available: bool = False
    sleep_duration_h: float | None = None
    sleep_onset_hour: float | None = None
    stationary_min: float | None = None
    walking_min: float | None = None
    running_min: float | None = None
    automotive_min: float | None = None
    screen_total_min: float | None = None
    screen_sessions: int | None = None
    first_unlock_hour: float | None = None
    distance_km: float | None = None
    time_at_home_frac: float | None = None
    location_variance: float | None = None
    app_total_min: float | None = None
    app_min_by_category: dict[str, float] | None = None
    keyboard_chars: int | None = None
    light_mean_lux: float | None = None

    def to_json(self) -> dict[str, Any]:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @property
    def any_available(self) -> bool:
        return any(getattr(self, f"{m}_available") for m in MODALITIES)


# Fixed order of the numeric fields used for day fingerprints.
FEATURES: Final[tuple[str, ...]] = (
    "sleep_duration_h",
    "sleep_onset_hour",
    "stationary_min",
    "walking_min",
    "running_min",
    "automotive_min",
    "screen_total_min",
    "screen_sessions",
    "first_unlock_hour",
    "distance_km",
    "time_at_home_frac",
    "location_variance",
    "app_total_min",
    "keyboard_chars",
    "light_mean_lux",
)


def _local_hour(ts: datetime, tz: ZoneInfo) -> float:
    local = ts.astimezone(tz)
    return local.hour + local.minute / 60.0 + local.second / 3600.0


def location_variance(samples: Iterable[Mapping[str, Any]]) -> float:
    occupancy: dict[int, float] = {}
    for p in samples:
        occupancy[p["cluster_id"]] = occupancy.get(p["cluster_id"], 0.0) + 1.0 + p["displacement_km"]
    if not occupancy:
        return 0.0
    vals = list(occupancy.values())
    mean = sum(vals) / len(vals)
    var = sum((v - mean) ** 2 for v in vals) / len(vals)
    return math.log1p(var)


def aggregate_day(
    events: Mapping[str, list[SensingEvent]],
    day: date,
    day_start: datetime,
    day_end: datetime,
    until: datetime,
    tz: ZoneInfo,
) -> DailyAggregates:
    """Aggregate pre-clipped events of one local day observed at ``until``.

    ``events`` maps modality to events that started in ``[day_start, until)``
    (sleep: episodes that ended in ``[day_start, min(day_end, until)]``).
    """
    stop = min(day_end, until)
    agg = DailyAggregates(date=day.isoformat(), partial=until < day_end)

    def span(ev: SensingEvent) -> float:
        end = min(ev.timestamp + timedelta(minutes=ev.duration_min), stop)
        return max((end - ev.timestamp).total_seconds() / 60.0, 0.0)

    sleep = events.get("sleep", [])
    if sleep:
        agg.sleep_available = True
        agg.sleep_duration_h = sum(ev.duration_min for ev in sleep) / 60.0
        onset = _local_hour(min(ev.sleep_start for ev in sleep), tz)
        agg.sleep_onset_hour = onset + 24.0 if onset < 12.0 else onset

    motion = events.get("motion", [])
    if motion:
        agg.motion_available = True
        minutes = dict.fromkeys(ACTIVITIES, 0.0)
        for ev in motion:
            minutes[ev.payload["activity"]] += span(ev)
        agg.stationary_min = minutes["stationary"]
        agg.walking_min = minutes["walking"]
        agg.running_min = minutes["running"]
        agg.automotive_min = minutes["automotive"]

    screen = events.get("screen", [])
    if screen:
        agg.screen_available = True
        sessions = [ev for ev in screen if ev.payload["kind"] == "session"]
        agg.screen_total_min = sum(span(ev) for ev in sessions)
        agg.screen_sessions = len(sessions)
        unlocks = [ev.timestamp for ev in screen if ev.payload["kind"] == "unlock"]
        agg.first_unlock_hour = _local_hour(min(unlocks), tz) if unlocks else None

    gps = events.get("gps", [])
    if gps:
        agg.gps_available = True
        agg.distance_km = sum(ev.payload["displacement_km"] for ev in gps)
        agg.time_at_home_frac = sum(1 for ev in gps if ev.payload["at_home"]) / len(gps)
        agg.location_variance = location_variance(ev.payload for ev in gps)

    apps = events.get("app_usage", [])
    if apps:
        agg.app_usage_available = True
        by_cat: dict[str, float] = {}
        for ev in apps:
            by_cat[ev.payload["category"]] = by_cat.get(ev.payload["category"], 0.0) + span(ev)
        agg.app_min_by_category = dict(sorted(by_cat.items()))
        agg.app_total_min = sum(by_cat.values())

    keyboard = events.get("keyboard", [])
    if keyboard:
        agg.keyboard_available = True
        agg.keyboard_chars = sum(int(ev.payload["chars"]) for ev in keyboard)

    light = events.get("light", [])
    if light:
        agg.light_available = True
        agg.light_mean_lux = sum(ev.payload["lux"] for ev in light) / len(light)
    return agg


@dataclass
class _UserIndex:
    profile: UserProfile
    tz: ZoneInfo
    entries: list[EmaEntry] = field(default_factory=list)
    entry_times: list[datetime] = field(default_factory=list)
    events: dict[str, list[SensingEvent]] = field(default_factory=dict)
    times: dict[str, list[datetime]] = field(default_factory=dict)


class Store:
    """Immutable after construction; safe for concurrent readers."""

    def __init__(self, profiles: Iterable[UserProfile], events: Iterable[SensingEvent], entries: Iterable[EmaEntry]):
        self._users: dict[str, _UserIndex] = {}
        for p in profiles:
            if p.user_id in self._users:
                raise DataError(f"duplicate user_id {p.user_id!r}")
            self._users[p.user_id] = _UserIndex(profile=p, tz=ZoneInfo(p.tz))
        buckets: dict[tuple[str, str], list[SensingEvent]] = {}
        for ev in events:
            if ev.user_id not in self._users:
                raise DataError(f"event for unknown user {ev.user_id!r}")
            buckets.setdefault((ev.user_id, ev.modality), []).append(ev)
        for (uid, modality), evs in buckets.items():
            evs.sort(key=lambda e: e.timestamp)
            idx = self._users[uid]
            idx.events[modality] = evs
            idx.times[modality] = [e.timestamp for e in evs]
        for entry in entries:
            if entry.user_id not in self._users:
                raise DataError(f"EMA entry for unknown user {entry.user_id!r}")
            self._users[entry.user_id].entries.append(entry)
        for idx in self._users.values():
            idx.entries.sort(key=lambda e: e.timestamp)
            idx.entry_times = [e.timestamp for e in idx.entries]
        self._day_cache: dict[tuple[str, date], DailyAggregates] = {}

    # -- plain accessors (not agent-facing) --------------------------------

    @property
    def user_ids(self) -> list[str]:
        return sorted(self._users)

    def profile(self, user_id: str) -> UserProfile:
        return self._index(user_id).profile

    def entries(self, user_id: str) -> list[EmaEntry]:
        return list(self._index(user_id).entries)

    def all_entries(self) -> list[EmaEntry]:
        return [e for uid in self.user_ids for e in self._users[uid].entries]

    def timezone(self, user_id: str) -> ZoneInfo:
        return self._index(user_id).tz

    def event_count(self, user_id: str, modality: str | None = None) -> int:
        idx = self._index(user_id)
        if modality is not None:
            return len(idx.events.get(modality, []))
        return sum(len(v) for v in idx.events.values())

    def iter_events(self, user_id: str, modality: str) -> list[SensingEvent]:
        return list(self._index(user_id).events.get(modality, []))

    def entry_index(self, user_id: str, ema_timestamp: datetime) -> int:
        idx = self._index(user_id)
        i = bisect.bisect_left(idx.entry_times, ema_timestamp)
        if i == len(idx.entry_times) or idx.entry_times[i] != ema_timestamp:
            raise ContextError(f"no EMA for {user_id!r} at {format_time(ema_timestamp)}")
        return i

    def _index(self, user_id: str) -> _UserIndex:
        try:
            return self._users[user_id]
        except KeyError:
            raise ContextError(f"unknown user {user_id!r}") from None

    # -- boundary-checked primitives used by AccessContext ----------------

    def _before(self, user_id: str, modality: str, start: datetime, end: datetime, until: datetime) -> list[SensingEvent]:
        idx = self._index(user_id)
        times = idx.times.get(modality)
        if not times:
            return []
        end = min(end, until)
        lo = bisect.bisect_left(times, start)
        hi = bisect.bisect_left(times, end)
        return [clip_event(ev, until) for ev in idx.events[modality][lo:hi]]

    def _day_bounds(self, user_id: str, day: date) -> tuple[datetime, datetime]:
        tz = self._index(user_id).tz
        start = datetime.combine(day, time(0), tzinfo=tz)
        end = datetime.combine(day + timedelta(days=1), time(0), tzinfo=tz)
        return start, end

    def _aggregate(self, user_id: str, day: date, until: datetime) -> DailyAggregates:
        day_start, day_end = self._day_bounds(user_id, day)
        full = until >= day_end
        if full and (user_id, day) in self._day_cache:
            return self._day_cache[(user_id, day)]
        stop = min(day_end, until)
        per_mod: dict[str, list[SensingEvent]] = {}
        for modality in MODALITIES:
            if modality == "sleep":
                cands = self._before(user_id, "sleep", day_start - _MAX_SLEEP, stop, until)
                evs = [ev for ev in cands if not ev.payload.get("ongoing") and day_start <= ev.sleep_end <= stop]
                # An episode that ends exactly at a midnight boundary belongs to the earlier day.
                evs = [ev for ev in evs if ev.sleep_end > day_start]
            else:
                evs = self._before(user_id, modality, day_start, stop, until)
            if evs:
                per_mod[modality] = evs
        agg = aggregate_day(per_mod, day, day_start, day_end, until, self._index(user_id).tz)
        if full:
            self._day_cache[(user_id, day)] = agg
        return agg


@dataclass(frozen=True)
class QueryResult:
    status: str
    events: list[SensingEvent]


@dataclass(frozen=True)
class AccessContext:
    """Read capability for one (user, EMA instant)."""

    store: Store = field(repr=False, compare=False)
    user_id: str
    ema_timestamp: datetime
    capabilities: frozenset[str]
    entry_index: int

    @property
    def profile(self) -> UserProfile:
        return self.store.profile(self.user_id)

    @property
    def tz(self) -> ZoneInfo:
        return self.store.timezone(self.user_id)

    @property
    def ema_date(self) -> date:
        return self.ema_timestamp.astimezone(self.tz).date()

    def local(self, ts: datetime) -> datetime:
        return ts.astimezone(self.tz)

    def modality_status(self, modality: str) -> str:
        if modality not in MODALITIES:
            raise ValueError(f"unknown modality {modality!r}")
        if modality == "app_usage" and self.profile.platform == "ios":
            return UNAVAILABLE_PLATFORM
        if modality not in self.capabilities:
            return UNAVAILABLE_SPARSE
        return AVAILABLE

    def query_window(self, modality: str, start: datetime, end: datetime) -> QueryResult:
        """Events of ``modality`` with ``start <= t < end``, in time order."""
        if not start < end:
            raise ValueError("window start must precede end")
        if end > self.ema_timestamp:
            raise BoundaryViolationError(
                f"window end {format_time(end)} is past the boundary {format_time(self.ema_timestamp)}"
            )
        status = self.modality_status(modality)
        if status != AVAILABLE:
            return QueryResult(status, [])
        return QueryResult(status, self.store._before(self.user_id, modality, start, end, self.ema_timestamp))

    def daily_aggregates(self, day: date, *, cutoff: datetime | None = None) -> DailyAggregates:
        """Aggregates for a local date, over events before the boundary.

        ``cutoff`` further truncates the day (used for same-time-of-day
        comparisons); it can only tighten the boundary.
        """
        day_start, _ = self.store._day_bounds(self.user_id, day)
        if day_start >= self.ema_timestamp:
            raise BoundaryViolationError(f"{day.isoformat()} starts after the boundary")
        until = self.ema_timestamp if cutoff is None else min(cutoff, self.ema_timestamp)
        return self.store._aggregate(self.user_id, day, until)

    def same_time_cutoff(self, day: date) -> datetime:
        """The instant on ``day`` at the EMA's local wall-clock time."""
        local = self.local(self.ema_timestamp)
        return datetime.combine(day, local.timetz().replace(tzinfo=None), tzinfo=self.tz)

    def prior_entries(self, since: datetime | None = None) -> list[EmaEntry]:
        """EMA entries strictly before the boundary (optionally from ``since``)."""
        idx = self.store._index(self.user_id)
        hi = bisect.bisect_left(idx.entry_times, self.ema_timestamp)
        lo = 0 if since is None else bisect.bisect_left(idx.entry_times, since)
        return idx.entries[lo:hi]

    def first_day(self) -> date | None:
        """Earliest local date with any visible event."""
        firsts = [
            self.store._index(self.user_id).times[m][0]
            for m in self.capabilities
        ]
        return self.local(min(firsts)).date() if firsts else None


def ingest(profiles: Iterable[UserProfile], events: Iterable[SensingEvent], entries: Iterable[EmaEntry]) -> Store:
    return Store(profiles, events, entries)


def open_context(store: Store, user_id: str, ema_timestamp: datetime) -> AccessContext:
    i = store.entry_index(user_id, ema_timestamp)
    idx = store._index(user_id)
    caps = frozenset(m for m, ts in idx.times.items() if ts and ts[0] < ema_timestamp)
    return AccessContext(store=store, user_id=user_id, ema_timestamp=ema_timestamp, capabilities=caps, entry_index=i)
