"""The eight investigation tools.

Each tool is a deterministic computation over an :class:`AccessContext` that
returns a structured payload and a plain-text rendering derived only from that
payload. Rendering templates are versioned by ``TEMPLATE_VERSION``.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from datetime import date, datetime, timedelta
from typing import Any, Callable, Final, Mapping

from pulse.dataset import dumps
from pulse.model import ACTIVITIES, BINARY_TARGETS, FOCUS_TARGETS, MODALITIES, SensingEvent, format_time
from pulse.retrieval import NormStats, PeerIndex, cosine, fingerprint, rank_peers, raw_features
from pulse.timestore import (
    AVAILABLE,
    FEATURES,
    UNAVAILABLE_PLATFORM,
    AccessContext,
    DailyAggregates,
)

TEMPLATE_VERSION: Final = "1"

MAX_RAW_EVENTS: Final = 200
MIN_BASELINE_DAYS: Final = 3

LOOKBACK_SUMMARY = (1, 7)
SEGMENT_HOURS = (1, 6)
HOURS_BEFORE = (1, 48)
DURATION_HOURS = (1, 24)
LOOKBACK_RECEPTIVITY = (1, 14)

TOOL_NAMES: Final[tuple[str, ...]] = (
    "get_daily_summary",
    "get_behavioral_timeline",
    "query_sensing",
    "query_raw_events",
    "compare_to_baseline",
    "get_receptivity_history",
    "find_similar_days",
    "find_peer_cases",
)


class ToolError(Exception):
    code = "tool_error"


class InvalidArgumentError(ToolError, ValueError):
    code = "invalid_argument"


class ToolUnavailableError(ToolError):
    code = "tool_unavailable"


class UnknownToolError(ToolError, LookupError):
    code = "unknown_tool"


@dataclass
class ToolResponse:
    tool_name: str
    structured: dict[str, Any]
    data_notes: list[str] = field(default_factory=list)

    @property
    def rendered(self) -> str:
        return render(self.tool_name, self.structured, self.data_notes)

    @property
    def digest(self) -> str:
        return hashlib.sha256(dumps(self.structured).encode()).hexdigest()[:16]

    def to_json(self) -> dict[str, Any]:
        return {
            "tool_name": self.tool_name,
            "structured": self.structured,
            "rendered": self.rendered,
            "data_notes": list(self.data_notes),
        }


# -- argument checking --------------------------------------------------------


def _int_arg(
    args: Mapping[str, Any], name: str, bounds: tuple[int, int | None] | None = None, default: int | None = None
) -> int:
    value = args.get(name, default)
    if value is None:
        raise InvalidArgumentError(f"missing required argument {name!r}")
    if isinstance(value, bool) or not isinstance(value, int):
        raise InvalidArgumentError(f"{name} must be an integer")
    if bounds is not None:
        lo, hi = bounds
        if value < lo or (hi is not None and value > hi):
            rng = f"between {lo} and {hi}" if hi is not None else f"at least {lo}"
            raise InvalidArgumentError(f"{name} must be {rng}, got {value}")
    return value


def _choice_arg(args: Mapping[str, Any], name: str, choices: tuple[str, ...], default: str | None = None) -> str:
    value = args.get(name, default)
    if value not in choices:
        raise InvalidArgumentError(f"{name} must be one of {list(choices)}, got {value!r}")
    return value


def _status_note(ctx: AccessContext, modality: str, status: str) -> str:
    if status == UNAVAILABLE_PLATFORM:
        return f"Data not available: {modality} is not collected on {ctx.profile.platform}."
    return f"Data not available: no {modality} data recorded before this EMA."


# -- shared aggregation -------------------------------------------------------


def _overlap_min(ev: SensingEvent, start: datetime, end: datetime) -> float:
    ev_end = ev.timestamp + timedelta(minutes=ev.duration_min)
    lo, hi = max(ev.timestamp, start), min(ev_end, end)
    return max((hi - lo).total_seconds() / 60.0, 0.0)


def bucket_stats(modality: str, events: list[SensingEvent]) -> dict[str, Any]:
    """Aggregate events whose start falls in one bucket."""
    if modality == "motion":
        minutes = dict.fromkeys(ACTIVITIES, 0.0)
        for ev in events:
            minutes[ev.payload["activity"]] += ev.duration_min
        return {"minutes": minutes, "total_min": sum(minutes.values())}
    if modality == "screen":
        sessions = [ev for ev in events if ev.payload["kind"] == "session"]
        return {
            "session_min": sum(ev.duration_min for ev in sessions),
            "sessions": len(sessions),
            "unlocks": sum(1 for ev in events if ev.payload["kind"] == "unlock"),
            "locks": sum(1 for ev in events if ev.payload["kind"] == "lock"),
        }
    if modality == "gps":
        n = len(events)
        return {
            "distance_km": sum(ev.payload["displacement_km"] for ev in events),
            "samples": n,
            "at_home_frac": (sum(1 for ev in events if ev.payload["at_home"]) / n) if n else None,
        }
    if modality == "app_usage":
        by_cat: dict[str, float] = {}
        for ev in events:
            by_cat[ev.payload["category"]] = by_cat.get(ev.payload["category"], 0.0) + ev.duration_min
        return {"total_min": sum(by_cat.values()), "by_category": dict(sorted(by_cat.items()))}
    if modality == "keyboard":
        return {
            "chars": sum(int(ev.payload["chars"]) for ev in events),
            "typing_min": sum(ev.duration_min for ev in events),
            "sessions": len(events),
        }
    if modality == "sleep":
        return {"episodes": len(events), "minutes": sum(ev.duration_min for ev in events)}
    if modality == "light":
        n = len(events)
        return {"mean_lux": (sum(ev.payload["lux"] for ev in events) / n) if n else None, "samples": n}
    raise ValueError(f"unknown modality {modality!r}")


def event_json(ev: SensingEvent) -> dict[str, Any]:
    out = ev.to_json()
    del out["user_id"]
    return out


# -- the tools ----------------------------------------------------------------


class Toolbox:
    """The eight tools bound to one access context."""

    def __init__(
        self,
        ctx: AccessContext,
        peer_index: PeerIndex | None = None,
        *,
        max_raw_events: int = MAX_RAW_EVENTS,
        min_baseline_days: int = MIN_BASELINE_DAYS,
    ):
        self.ctx = ctx
        self.peer_index = peer_index
        self.max_raw_events = max_raw_events
        self.min_baseline_days = min_baseline_days
        self._dispatch: dict[str, Callable[[Mapping[str, Any]], ToolResponse]] = {
            "get_daily_summary": lambda a: self.get_daily_summary(_int_arg(a, "lookback_days", LOOKBACK_SUMMARY, 1)),
            "get_behavioral_timeline": lambda a: self.get_behavioral_timeline(_int_arg(a, "segment_hours", SEGMENT_HOURS, 3)),
            "query_sensing": lambda a: self.query_sensing(
                _choice_arg(a, "modality", MODALITIES),
                _int_arg(a, "hours_before", HOURS_BEFORE),
                _int_arg(a, "duration_hours", DURATION_HOURS),
                _choice_arg(a, "granularity", ("hourly", "daily"), "hourly"),
            ),
            "query_raw_events": lambda a: self.query_raw_events(
                _choice_arg(a, "modality", MODALITIES),
                _int_arg(a, "hours_before", HOURS_BEFORE),
                _int_arg(a, "duration_hours", DURATION_HOURS),
            ),
            "compare_to_baseline": lambda a: self.compare_to_baseline(
                _choice_arg(a, "metric", FEATURES), a.get("date")
            ),
            "get_receptivity_history": lambda a: self.get_receptivity_history(
                _int_arg(a, "lookback_days", LOOKBACK_RECEPTIVITY, 7)
            ),
            "find_similar_days": lambda a: self.find_similar_days(_int_arg(a, "k", (1, None), 3)),
            "find_peer_cases": lambda a: self.find_peer_cases(
                _choice_arg(a, "mode", ("text", "sensing")),
                a.get("query_text"),
                _int_arg(a, "k", (1, None), 5),
            ),
        }

    def call(self, name: str, arguments: Mapping[str, Any] | None = None) -> ToolResponse:
        fn = self._dispatch.get(name)
        if fn is None:
            raise UnknownToolError(f"unknown tool {name!r}")
        args = dict(arguments or {})
        known = set(TOOL_SCHEMAS[name]["inputSchema"]["properties"])
        extra = sorted(set(args) - known)
        if extra:
            raise InvalidArgumentError(f"unexpected arguments {extra}")
        return fn(args)

    def tool_list(self) -> list[dict[str, Any]]:
        return tool_list()

    def close(self) -> None:
        pass

    # 1
    def get_daily_summary(self, lookback_days: int = 1) -> ToolResponse:
        _int_arg({"lookback_days": lookback_days}, "lookback_days", LOOKBACK_SUMMARY)
        ctx = self.ctx
        notes = []
        days = []
        for i in range(lookback_days):
            day = ctx.ema_date - timedelta(days=i)
            agg = ctx.daily_aggregates(day)
            if agg.any_available:
                days.append(agg.to_json())
            else:
                notes.append(f"No sensing data available for {day.isoformat()}.")
        if days and ctx.modality_status("app_usage") == UNAVAILABLE_PLATFORM:
            notes.append(_status_note(ctx, "app_usage", UNAVAILABLE_PLATFORM))
        structured: dict[str, Any] = {
            "ema_local_time": ctx.local(ctx.ema_timestamp).strftime("%H:%M"),
            "days": days,
            "trend": _trend(days) if lookback_days > 1 and len(days) > 1 else [],
        }
        return ToolResponse("get_daily_summary", structured, notes)

    # 2
    def get_behavioral_timeline(self, segment_hours: int = 3) -> ToolResponse:
        _int_arg({"segment_hours": segment_hours}, "segment_hours", SEGMENT_HOURS)
        ctx = self.ctx
        boundary = ctx.ema_timestamp
        day_start = datetime.combine(ctx.ema_date, datetime.min.time(), tzinfo=ctx.tz)
        lookback_start = day_start - timedelta(hours=24)
        events = {m: _window_events(ctx, m, lookback_start, boundary) for m in MODALITIES}
        notes = [
            _status_note(ctx, m, ctx.modality_status(m))
            for m in ("motion", "screen")
            if ctx.modality_status(m) != AVAILABLE
        ]
        segments = []
        for start_hour, end_hour in segment_bounds(segment_hours):
            s = day_start + timedelta(hours=start_hour)
            if s >= boundary:
                break
            e = day_start + timedelta(hours=end_hour)
            segments.append(_segment(ctx, events, start_hour, end_hour, s, min(e, boundary)))
        structured = {
            "date": ctx.ema_date.isoformat(),
            "segment_hours": segment_hours,
            "ema_local_time": ctx.local(boundary).strftime("%H:%M"),
            "segments": segments,
            "boundary_state": _boundary_state(ctx, events),
        }
        return ToolResponse("get_behavioral_timeline", structured, notes)

    # 3
    def query_sensing(self, modality: str, hours_before: int, duration_hours: int, granularity: str = "hourly") -> ToolResponse:
        _choice_arg({"m": modality}, "m", MODALITIES)
        _choice_arg({"g": granularity}, "g", ("hourly", "daily"))
        start, end, notes = self._window(hours_before, duration_hours)
        ctx = self.ctx
        status = ctx.modality_status(modality)
        structured: dict[str, Any] = {
            "modality": modality,
            "status": status,
            "granularity": granularity,
            "window_start": format_time(start),
            "window_end": format_time(end),
            "buckets": [],
        }
        if status != AVAILABLE:
            return ToolResponse("query_sensing", structured, notes + [_status_note(ctx, modality, status)])
        for b_start, b_end in _buckets(ctx, start, end, granularity):
            evs = ctx.query_window(modality, b_start, b_end).events
            structured["buckets"].append(
                {
                    "start": format_time(b_start),
                    "end": format_time(b_end),
                    "local_start": ctx.local(b_start).strftime("%Y-%m-%d %H:%M"),
                    "stats": bucket_stats(modality, evs),
                }
            )
        return ToolResponse("query_sensing", structured, notes)

    # 4
    def query_raw_events(self, modality: str, hours_before: int, duration_hours: int) -> ToolResponse:
        _choice_arg({"m": modality}, "m", MODALITIES)
        start, end, notes = self._window(hours_before, duration_hours)
        ctx = self.ctx
        result = ctx.query_window(modality, start, end)
        structured: dict[str, Any] = {
            "modality": modality,
            "status": result.status,
            "window_start": format_time(start),
            "window_end": format_time(end),
            "total_events": len(result.events),
            "events": [event_json(ev) for ev in result.events[: self.max_raw_events]],
            "truncated": len(result.events) > self.max_raw_events,
        }
        if result.status != AVAILABLE:
            notes.append(_status_note(ctx, modality, result.status))
        if structured["truncated"]:
            notes.append(f"Showing the first {self.max_raw_events} of {len(result.events)} events.")
        return ToolResponse("query_raw_events", structured, notes)

    def _window(self, hours_before: int, duration_hours: int) -> tuple[datetime, datetime, list[str]]:
        _int_arg({"hours_before": hours_before}, "hours_before", HOURS_BEFORE)
        _int_arg({"duration_hours": duration_hours}, "duration_hours", DURATION_HOURS)
        boundary = self.ctx.ema_timestamp
        start = boundary - timedelta(hours=hours_before)
        end = start + timedelta(hours=duration_hours)
        notes = []
        if end > boundary:
            end = boundary
            notes.append(
                f"Window clipped at the EMA time: requested {duration_hours} h, returned {hours_before} h."
            )
        return start, end, notes

    # 5
    def compare_to_baseline(self, metric: str, day: str | date | None = None) -> ToolResponse:
        _choice_arg({"metric": metric}, "metric", FEATURES)
        ctx = self.ctx
        target = _parse_day(day, ctx.ema_date)
        if target > ctx.ema_date:
            raise InvalidArgumentError(f"date {target.isoformat()} is after the EMA date")
        same_time = target == ctx.ema_date
        x = getattr(ctx.daily_aggregates(target), metric)
        history: list[float] = []
        first = ctx.first_day()
        if first is not None:
            d = first
            while d < target:
                cutoff = ctx.same_time_cutoff(d) if same_time else None
                v = getattr(ctx.daily_aggregates(d, cutoff=cutoff), metric)
                if v is not None:
                    history.append(float(v))
                d += timedelta(days=1)
        structured: dict[str, Any] = {
            "metric": metric,
            "date": target.isoformat(),
            "same_time_of_day": same_time,
            "value": None if x is None else float(x),
            "mean": None,
            "std": None,
            "n": len(history),
            "z": None,
            "status": "ok",
        }
        notes = []
        if x is None:
            structured["status"] = "unavailable"
            notes.append(f"Data not available: {metric} has no value on {target.isoformat()}.")
        elif len(history) < self.min_baseline_days:
            structured["status"] = "insufficient_baseline"
            notes.append(
                f"Insufficient baseline: {len(history)} prior days with {metric}, need {self.min_baseline_days}."
            )
        else:
            mu = sum(history) / len(history)
            sigma = (sum((v - mu) ** 2 for v in history) / len(history)) ** 0.5
            structured["mean"], structured["std"] = mu, sigma
            if sigma == 0.0:
                structured["status"] = "no_variation"
            else:
                structured["z"] = (float(x) - mu) / sigma
        return ToolResponse("compare_to_baseline", structured, notes)

    # 6
    def get_receptivity_history(self, lookback_days: int = 7) -> ToolResponse:
        _int_arg({"lookback_days": lookback_days}, "lookback_days", LOOKBACK_RECEPTIVITY)
        ctx = self.ctx
        prior = ctx.prior_entries(since=ctx.ema_timestamp - timedelta(days=lookback_days))
        history = []
        for entry in prior:
            day = ctx.local(entry.timestamp).date()
            agg = ctx.daily_aggregates(day, cutoff=entry.timestamp)
            history.append(
                {
                    "timestamp": format_time(entry.timestamp),
                    "local_time": ctx.local(entry.timestamp).strftime("%Y-%m-%d %H:%M"),
                    "available": bool(entry.binary_targets["INT_availability"]),
                    "activity_index": activity_index(agg),
                }
            )
        n_avail = sum(1 for h in history if h["available"])
        structured = {
            "lookback_days": lookback_days,
            "history": history,
            "n": len(history),
            "n_available": n_avail,
            "availability_rate": (n_avail / len(history)) if history else None,
        }
        notes = [] if history else [f"No prior EMA entries in the last {lookback_days} days."]
        return ToolResponse("get_receptivity_history", structured, notes)

    # 7
    def find_similar_days(self, k: int = 3) -> ToolResponse:
        _int_arg({"k": k}, "k", (1, None))
        ctx = self.ctx
        current = ctx.daily_aggregates(ctx.ema_date)
        by_day: dict[date, list] = {}
        for entry in ctx.prior_entries():
            d = ctx.local(entry.timestamp).date()
            if d < ctx.ema_date:
                by_day.setdefault(d, []).append(entry)
        candidates = []
        for d in sorted(by_day):
            agg = ctx.daily_aggregates(d, cutoff=ctx.same_time_cutoff(d))
            if agg.any_available:
                candidates.append((d, raw_features(agg)))
        structured: dict[str, Any] = {"k": k, "normalization": None, "current_fingerprint": None, "days": []}
        if not current.any_available:
            return ToolResponse("find_similar_days", structured, ["No sensing data for the current day yet."])
        if not candidates:
            return ToolResponse("find_similar_days", structured, ["No eligible prior days with sensing data and an EMA."])
        if self.peer_index is not None:
            stats, structured["normalization"] = self.peer_index.stats, "training_fold"
        else:
            stats, structured["normalization"] = NormStats.fit(f for _, f in candidates), "user_history"
        cur_fp = fingerprint(raw_features(current), stats).values
        structured["current_fingerprint"] = cur_fp
        scored = []
        for d, feats in candidates:
            fp = fingerprint(feats, stats).values
            scored.append((cosine(cur_fp, fp), d, fp))
        scored.sort(key=lambda t: (-t[0], -t[1].toordinal()))
        for sim, d, fp in scored[:k]:
            structured["days"].append(
                {
                    "date": d.isoformat(),
                    "similarity": sim,
                    "fingerprint": fp,
                    "emas": [
                        {
                            "local_time": ctx.local(e.timestamp).strftime("%H:%M"),
                            "states": {t: bool(e.binary_targets[t]) for t in BINARY_TARGETS},
                        }
                        for e in by_day[d]
                    ],
                }
            )
        return ToolResponse("find_similar_days", structured, [])

    # 8
    def find_peer_cases(self, mode: str, query_text: str | None = None, k: int = 5) -> ToolResponse:
        _choice_arg({"mode": mode}, "mode", ("text", "sensing"))
        _int_arg({"k": k}, "k", (1, None))
        if mode == "text" and not (isinstance(query_text, str) and query_text.strip()):
            raise InvalidArgumentError("text mode requires a non-empty query_text")
        if self.peer_index is None:
            raise ToolUnavailableError("peer database is not mounted")
        ctx = self.ctx
        structured: dict[str, Any] = {"mode": mode, "k": k, "matches": [], "summary": None}
        if mode == "text":
            matches = rank_peers(self.peer_index, self.peer_index.embed_text(query_text), "text", ctx.user_id, k)
        else:
            current = ctx.daily_aggregates(ctx.ema_date)
            if not current.any_available:
                return ToolResponse("find_peer_cases", structured, ["No sensing data for the current day yet."])
            matches = rank_peers(self.peer_index, self.peer_index.embed_day(current), "sensing", ctx.user_id, k)
        for m in matches:
            item = {"entry_ref": m.entry_ref, "similarity": m.similarity, "outcomes": m.outcomes}
            if mode == "text":
                item["diary"] = m.diary
            structured["matches"].append(item)
        notes = []
        if matches:
            structured["summary"] = peer_summary([m.outcomes for m in matches])
        else:
            notes.append("No peer cases found.")
        return ToolResponse("find_peer_cases", structured, notes)


def segment_bounds(segment_hours: int, day_hours: int = 24) -> list[tuple[int, int]]:
    return [(h, min(h + segment_hours, day_hours)) for h in range(0, day_hours, segment_hours)]


def activity_index(agg: DailyAggregates) -> str | None:
    if not agg.motion_available:
        return None
    active = (agg.walking_min or 0.0) + (agg.running_min or 0.0)
    if active < 30:
        return "low"
    if active < 90:
        return "moderate"
    return "high"


def peer_summary(outcomes: list[Mapping[str, Any]]) -> dict[str, Any]:
    n = len(outcomes)
    return {
        "n": n,
        "rates": {t: sum(1 for o in outcomes if o["binary_targets"][t]) / n for t in FOCUS_TARGETS},
        "mean_pa": sum(o["pa_score"] for o in outcomes) / n,
        "mean_na": sum(o["na_score"] for o in outcomes) / n,
        "mean_er_desire": sum(o["er_desire_score"] for o in outcomes) / n,
    }


def _parse_day(value: str | date | None, default: date) -> date:
    if value is None:
        return default
    if isinstance(value, date):
        return value
    try:
        return date.fromisoformat(value)
    except (TypeError, ValueError):
        raise InvalidArgumentError(f"date must be YYYY-MM-DD, got {value!r}") from None


def _window_events(ctx: AccessContext, modality: str, start: datetime, end: datetime) -> list[SensingEvent]:
    if start >= end:
        return []
    return ctx.query_window(modality, start, end).events


def _buckets(ctx: AccessContext, start: datetime, end: datetime, granularity: str) -> list[tuple[datetime, datetime]]:
    out = []
    if granularity == "hourly":
        s = start
        while s < end:
            out.append((s, min(s + timedelta(hours=1), end)))
            s += timedelta(hours=1)
        return out
    d = ctx.local(start).date()
    while True:
        ds = datetime.combine(d, datetime.min.time(), tzinfo=ctx.tz)
        de = datetime.combine(d + timedelta(days=1), datetime.min.time(), tzinfo=ctx.tz)
        lo, hi = max(ds, start), min(de, end)
        if lo >= end:
            break
        if lo < hi:
            out.append((lo, hi))
        d += timedelta(days=1)
    return out


def _segment(
    ctx: AccessContext,
    events: Mapping[str, list[SensingEvent]],
    start_hour: int,
    end_hour: int,
    s: datetime,
    e: datetime,
) -> dict[str, Any]:
    minutes = dict.fromkeys(ACTIVITIES, 0.0)
    for ev in events["motion"]:
        minutes[ev.payload["activity"]] += _overlap_min(ev, s, e)
    dominant = max(ACTIVITIES, key=lambda a: (minutes[a], -ACTIVITIES.index(a)))
    screen_min = sum(_overlap_min(ev, s, e) for ev in events["screen"] if ev.payload["kind"] == "session")
    unlocks = [ev for ev in events["screen"] if ev.payload["kind"] == "unlock" and s <= ev.timestamp < e]
    highlights = []
    if unlocks:
        highlights.append(f"{len(unlocks)} unlocks, first at {ctx.local(unlocks[0].timestamp).strftime('%H:%M')}")
    for ev in events["sleep"]:
        if s <= ev.sleep_end < e and not ev.payload.get("ongoing"):
            highlights.append(f"sleep ended at {ctx.local(ev.sleep_end).strftime('%H:%M')}")
        if ev.payload.get("ongoing") and ev.sleep_start < e:
            highlights.append(f"sleep ongoing since {ctx.local(ev.sleep_start).strftime('%H:%M')}")
    gps = [ev for ev in events["gps"] if s <= ev.timestamp < e]
    if gps:
        home = sum(1 for ev in gps if ev.payload["at_home"]) / len(gps)
        highlights.append("mostly at home" if home >= 0.5 else "mostly away from home")
    apps: dict[str, float] = {}
    for ev in events["app_usage"]:
        o = _overlap_min(ev, s, e)
        if o > 0:
            apps[ev.payload["category"]] = apps.get(ev.payload["category"], 0.0) + o
    if apps:
        top = max(sorted(apps), key=lambda c: apps[c])
        highlights.append(f"top app category {top}")
    chars = sum(int(ev.payload["chars"]) for ev in events["keyboard"] if s <= ev.timestamp < e)
    if chars:
        highlights.append(f"typed {chars} characters")
    return {
        "start_hour": start_hour,
        "end_hour": end_hour,
        "partial": e < s + timedelta(hours=end_hour - start_hour),
        "dominant_activity": dominant if minutes[dominant] > 0 else "no motion data",
        "activity_min": minutes,
        "screen_min": screen_min,
        "unlocks": len(unlocks),
        "event_highlights": highlights,
    }


def _boundary_state(ctx: AccessContext, events: Mapping[str, list[SensingEvent]]) -> dict[str, Any]:
    """Where things stand right before the EMA."""
    boundary = ctx.ema_timestamp
    last_2h = boundary - timedelta(hours=2)
    last_1h = boundary - timedelta(hours=1)
    screen = events["screen"]
    recent = [ev for ev in screen if ev.timestamp >= last_2h]
    since = None
    if screen:
        last = max(ev.timestamp + timedelta(minutes=ev.duration_min) for ev in screen)
        since = (boundary - last).total_seconds() / 60.0
    auto = sum(_overlap_min(ev, last_1h, boundary) for ev in events["motion"] if ev.payload["activity"] == "automotive")
    ongoing_motion = [ev for ev in events["motion"] if ev.payload.get("truncated")]
    return {
        "screen_events_last_2h": len(recent),
        "minutes_since_screen_activity": since,
        "automotive_min_last_hour": auto,
        "sleep_ongoing": any(ev.payload.get("ongoing") for ev in events["sleep"]),
        "current_activity": ongoing_motion[-1].payload["activity"] if ongoing_motion else None,
    }


_TREND_METRICS = ("sleep_duration_h", "walking_min", "screen_total_min", "distance_km")


def _trend(days: list[dict[str, Any]]) -> list[dict[str, Any]]:
    current, previous = days[0], days[1:]
    out = []
    for metric in _TREND_METRICS:
        x = current.get(metric)
        prior = [d[metric] for d in previous if d.get(metric) is not None]
        if x is None or not prior:
            continue
        mean = sum(prior) / len(prior)
        if mean == 0:
            direction = "similar" if x == 0 else "higher"
        elif x > 1.15 * mean:
            direction = "higher"
        elif x < 0.85 * mean:
            direction = "lower"
        else:
            direction = "similar"
        out.append({"metric": metric, "current": x, "prior_mean": mean, "direction": direction})
    return out


# -- rendering ----------------------------------------------------------------


def f1(x: float) -> str:
    return f"{x:.1f}"


def f2(x: float) -> str:
    return f"{x:.2f}"


def pct(x: float) -> str:
    return f"{round(x * 100)}%"


def hhmm(hour: float) -> str:
    h = hour % 24
    minutes = int(round(h * 60)) % (24 * 60)
    return f"{minutes // 60:02d}:{minutes % 60:02d}"


def _render_day(d: Mapping[str, Any]) -> str:
    head = d["date"] + (" (so far)" if d["partial"] else "")
    parts = []
    if d["sleep_available"]:
        parts.append(f"slept {f1(d['sleep_duration_h'])} h, onset {hhmm(d['sleep_onset_hour'])}")
    if d["motion_available"]:
        parts.append(
            "motion: "
            + ", ".join(f"{a} {f1(d[a + '_min'])} min" for a in ACTIVITIES)
        )
    if d["screen_available"]:
        s = f"screen {f1(d['screen_total_min'])} min over {d['screen_sessions']} sessions"
        if d["first_unlock_hour"] is not None:
            s += f", first unlock {hhmm(d['first_unlock_hour'])}"
        parts.append(s)
    if d["gps_available"]:
        parts.append(
            f"traveled {f1(d['distance_km'])} km, {pct(d['time_at_home_frac'])} of location samples at home, "
            f"location variance {f2(d['location_variance'])}"
        )
    if d["app_usage_available"]:
        cats = ", ".join(f"{c} {f1(m)}" for c, m in sorted(d["app_min_by_category"].items()))
        parts.append(f"apps {f1(d['app_total_min'])} min ({cats})")
    if d["keyboard_available"]:
        parts.append(f"typed {d['keyboard_chars']} characters")
    if d["light_available"]:
        parts.append(f"mean ambient light {f1(d['light_mean_lux'])} lux")
    return f"{head}: " + "; ".join(parts) + "."


def _render_summary(s: Mapping[str, Any]) -> list[str]:
    lines = [_render_day(d) for d in s["days"]]
    for t in s["trend"]:
        lines.append(
            f"Trend: {t['metric']} is {t['direction']} today ({f1(t['current'])}) "
            f"than the prior-day mean ({f1(t['prior_mean'])})."
        )
    return lines


def _render_timeline(s: Mapping[str, Any]) -> list[str]:
    lines = [f"Timeline for {s['date']} up to {s['ema_local_time']}:"]
    for seg in s["segments"]:
        text = (
            f"{seg['start_hour']:02d}:00-{seg['end_hour']:02d}:00"
            + (" (partial)" if seg["partial"] else "")
            + f": {seg['dominant_activity']}, screen {f1(seg['screen_min'])} min"
        )
        if seg["event_highlights"]:
            text += "; " + "; ".join(seg["event_highlights"])
        lines.append(text)
    b = s["boundary_state"]
    since = "none recorded" if b["minutes_since_screen_activity"] is None else f"{f1(b['minutes_since_screen_activity'])} min ago"
    lines.append(
        f"Right before the EMA: {b['screen_events_last_2h']} screen events in the last 2 h, "
        f"last screen activity {since}, automotive {f1(b['automotive_min_last_hour'])} min in the last hour, "
        f"sleep {'ongoing' if b['sleep_ongoing'] else 'not ongoing'}, "
        f"current activity {b['current_activity'] or 'unknown'}."
    )
    return lines


def _render_stats(modality: str, st: Mapping[str, Any]) -> str:
    if modality == "motion":
        return ", ".join(f"{a} {f1(st['minutes'][a])} min" for a in ACTIVITIES if a in st["minutes"])
    if modality == "screen":
        return f"{f1(st['session_min'])} min over {st['sessions']} sessions, {st['unlocks']} unlocks, {st['locks']} locks"
    if modality == "gps":
        home = "n/a" if st["at_home_frac"] is None else pct(st["at_home_frac"])
        return f"{f1(st['distance_km'])} km, {st['samples']} samples, at home {home}"
    if modality == "app_usage":
        cats = ", ".join(f"{c} {f1(m)}" for c, m in sorted(st["by_category"].items()))
        return f"{f1(st['total_min'])} min" + (f" ({cats})" if cats else "")
    if modality == "keyboard":
        return f"{st['chars']} characters over {st['sessions']} sessions ({f1(st['typing_min'])} min)"
    if modality == "sleep":
        return f"{st['episodes']} episodes, {f1(st['minutes'])} min"
    lux = "n/a" if st["mean_lux"] is None else f"{f1(st['mean_lux'])} lux"
    return f"mean {lux} over {st['samples']} samples"


def _render_query(s: Mapping[str, Any]) -> list[str]:
    if s["status"] != AVAILABLE:
        return []
    lines = [f"{s['modality']} ({s['granularity']}):"]
    for b in s["buckets"]:
        lines.append(f"{b['local_start']}: {_render_stats(s['modality'], b['stats'])}")
    return lines


def _render_raw(s: Mapping[str, Any]) -> list[str]:
    if s["status"] != AVAILABLE:
        return []
    lines = [f"{s['total_events']} {s['modality']} events in window."]
    for ev in s["events"]:
        detail = ", ".join(f"{k}={v}" for k, v in sorted(ev.items()) if k not in ("timestamp", "modality"))
        lines.append(f"{ev['timestamp']} {detail}")
    return lines


def _render_baseline(s: Mapping[str, Any]) -> list[str]:
    if s["status"] in ("unavailable", "insufficient_baseline"):
        return []
    head = f"{s['metric']} on {s['date']}" + (" (same time of day)" if s["same_time_of_day"] else "")
    base = f"{head}: {f2(s['value'])} vs personal mean {f2(s['mean'])} (SD {f2(s['std'])}, n={s['n']} days)"
    if s["status"] == "no_variation":
        return [base + "; no variation in the baseline, z undefined."]
    return [base + f"; z = {f2(s['z'])}."]


def _render_receptivity(s: Mapping[str, Any]) -> list[str]:
    if not s["history"]:
        return []
    lines = [
        f"Available at {s['n_available']} of {s['n']} prior EMAs in the last {s['lookback_days']} days "
        f"({pct(s['availability_rate'])})."
    ]
    for h in s["history"]:
        lines.append(
            f"{h['local_time']}: {'available' if h['available'] else 'not available'}, "
            f"activity {h['activity_index'] or 'unknown'}"
        )
    return lines


def _states_text(states: Mapping[str, bool]) -> str:
    return ", ".join(f"{t} {'yes' if states[t] else 'no'}" for t in BINARY_TARGETS)


def _render_similar(s: Mapping[str, Any]) -> list[str]:
    lines = []
    for d in s["days"]:
        lines.append(f"{d['date']} (similarity {f2(d['similarity'])}):")
        for e in d["emas"]:
            lines.append(f"  EMA at {e['local_time']}: {_states_text(e['states'])}")
    return lines


def _render_peers(s: Mapping[str, Any]) -> list[str]:
    lines = []
    for m in s["matches"]:
        o = m["outcomes"]
        line = (
            f"Peer case (similarity {f2(m['similarity'])}): PA {f1(o['pa_score'])}, NA {f1(o['na_score'])}, "
            f"ER desire {f1(o['er_desire_score'])}; "
            + ", ".join(f"{t} {'yes' if o['binary_targets'][t] else 'no'}" for t in FOCUS_TARGETS)
        )
        if m.get("diary"):
            line += f'; diary: "{m["diary"]}"'
        lines.append(line)
    if s["summary"]:
        sm = s["summary"]
        lines.append(
            f"Across {sm['n']} peers: "
            + ", ".join(f"{t} rate {pct(sm['rates'][t])}" for t in FOCUS_TARGETS)
            + f"; mean PA {f1(sm['mean_pa'])}, mean NA {f1(sm['mean_na'])}, mean ER desire {f1(sm['mean_er_desire'])}."
        )
    return lines


_RENDERERS: dict[str, Callable[[Mapping[str, Any]], list[str]]] = {
    "get_daily_summary": _render_summary,
    "get_behavioral_timeline": _render_timeline,
    "query_sensing": _render_query,
    "query_raw_events": _render_raw,
    "compare_to_baseline": _render_baseline,
    "get_receptivity_history": _render_receptivity,
    "find_similar_days": _render_similar,
    "find_peer_cases": _render_peers,
}


def render(tool_name: str, structured: Mapping[str, Any], data_notes: list[str]) -> str:
    return "\n".join(_RENDERERS[tool_name](structured) + list(data_notes))


# -- published schemas --------------------------------------------------------


def _int_schema(lo: int, hi: int | None, desc: str, default: int | None = None) -> dict[str, Any]:
    s: dict[str, Any] = {"type": "integer", "minimum": lo, "description": desc}
    if hi is not None:
        s["maximum"] = hi
    if default is not None:
        s["default"] = default
    return s


_MODALITY = {"type": "string", "enum": list(MODALITIES)}

TOOL_SCHEMAS: Final[dict[str, dict[str, Any]]] = {
    "get_daily_summary": {
        "description": "Overview of a day's behavior across all sensing modalities, with multi-day lookback for trends.",
        "inputSchema": {
            "type": "object",
            "properties": {"lookback_days": _int_schema(1, 7, "Days to summarize, most recent first.", 1)},
            "additionalProperties": False,
        },
    },
    "get_behavioral_timeline": {
        "description": "Chronological segments of the EMA day up to the EMA time.",
        "inputSchema": {
            "type": "object",
            "properties": {"segment_hours": _int_schema(1, 6, "Segment width in hours.", 3)},
            "additionalProperties": False,
        },
    },
    "query_sensing": {
        "description": "Hourly or daily aggregates of one modality in a window before the EMA.",
        "inputSchema": {
            "type": "object",
            "properties": {
                "modality": _MODALITY,
                "hours_before": _int_schema(1, 48, "Window start, hours before the EMA."),
                "duration_hours": _int_schema(1, 24, "Window length in hours."),
                "granularity": {"type": "string", "enum": ["hourly", "daily"], "default": "hourly"},
            },
            "required": ["modality", "hours_before", "duration_hours"],
            "additionalProperties": False,
        },
    },
    "query_raw_events": {
        "description": "Individual events of one modality in a window before the EMA.",
        "inputSchema": {
            "type": "object",
            "properties": {
                "modality": _MODALITY,
                "hours_before": _int_schema(1, 48, "Window start, hours before the EMA."),
                "duration_hours": _int_schema(1, 24, "Window length in hours."),
            },
            "required": ["modality", "hours_before", "duration_hours"],
            "additionalProperties": False,
        },
    },
    "compare_to_baseline": {
        "description": "z-score of a daily metric against the user's own prior days.",
        "inputSchema": {
            "type": "object",
            "properties": {
                "metric": {"type": "string", "enum": list(FEATURES)},
                "date": {"type": "string", "format": "date", "description": "Local date; defaults to the EMA date."},
            },
            "required": ["metric"],
            "additionalProperties": False,
        },
    },
    "get_receptivity_history": {
        "description": "Past intervention availability and day-level activity for prior EMAs.",
        "inputSchema": {
            "type": "object",
            "properties": {"lookback_days": _int_schema(1, 14, "Days to look back.", 7)},
            "additionalProperties": False,
        },
    },
    "find_similar_days": {
        "description": "Prior days with the most similar behavioral fingerprint and the user's states on them.",
        "inputSchema": {
            "type": "object",
            "properties": {"k": _int_schema(1, None, "Number of days.", 3)},
            "additionalProperties": False,
        },
    },
    "find_peer_cases": {
        "description": "Similar cases from other participants with their outcomes, by diary text or sensing fingerprint.",
        "inputSchema": {
            "type": "object",
            "properties": {
                "mode": {"type": "string", "enum": ["text", "sensing"]},
                "query_text": {"type": "string"},
                "k": _int_schema(1, None, "Number of peer cases.", 5),
            },
            "required": ["mode"],
            "additionalProperties": False,
        },
    },
}


def tool_list() -> list[dict[str, Any]]:
    return [{"name": name, **TOOL_SCHEMAS[name]} for name in TOOL_NAMES]


_STRUCTURED_KEYS: Final[dict[str, tuple[str, ...]]] = {
    "get_daily_summary": ("ema_local_time", "days", "trend"),
    "get_behavioral_timeline": ("date", "segment_hours", "ema_local_time", "segments", "boundary_state"),
    "query_sensing": ("modality", "status", "granularity", "window_start", "window_end", "buckets"),
    "query_raw_events": ("modality", "status", "window_start", "window_end", "total_events", "events", "truncated"),
    "compare_to_baseline": ("metric", "date", "same_time_of_day", "value", "mean", "std", "n", "z", "status"),
    "get_receptivity_history": ("lookback_days", "history", "n", "n_available", "availability_rate"),
    "find_similar_days": ("k", "normalization", "current_fingerprint", "days"),
    "find_peer_cases": ("mode", "k", "matches", "summary"),
}


def response_schema(tool_name: str) -> dict[str, Any]:
    """JSON schema of a ``tools/call`` result for one tool."""
    keys = _STRUCTURED_KEYS[tool_name]
    return {
        "type": "object",
        "properties": {
            "tool_name": {"const": tool_name},
            "structured": {
                "type": "object",
                "properties": {k: {} for k in keys},
                "required": list(keys),
                "additionalProperties": False,
            },
            "rendered": {"type": "string"},
            "data_notes": {"type": "array", "items": {"type": "string"}},
        },
        "required": ["tool_name", "structured", "rendered", "data_notes"],
        "additionalProperties": False,
    }


def published_schemas() -> dict[str, Any]:
    """Argument and response schemas for every tool, as shipped in docs/."""
    return {
        "template_version": TEMPLATE_VERSION,
        "tools": [{**t, "responseSchema": response_schema(t["name"])} for t in tool_list()],
    }
