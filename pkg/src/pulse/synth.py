"""Seeded synthetic cohort generator.

Each user has latent positive affect, negative affect and ER desire that
follow AR(1) deviations around personal means, with occasional distress
episodes. Every EMA also has a context (free, meeting, driving, sleeping) and
availability is true exactly when the context is free. The context shapes
the behavior recorded in the minutes before the survey, so availability is
recoverable from sensing alone. Affect shifts daily behavior more weakly.
Diaries come from phrase banks keyed to the affect band and go missing more
often when negative affect is high.

All simulation happens on local wall-clock minutes and is converted to UTC
on emission. The default start date avoids daylight-saving transitions.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import asdict, dataclass, field, fields
from datetime import date, datetime, time, timedelta, timezone
from pathlib import Path
from typing import Any, Final, Mapping
from zoneinfo import ZoneInfo

import numpy as np

from pulse.dataset import EMA_FILE, EVENTS_FILE, PROFILES_FILE, dumps
from pulse.model import (
    BINARY_TARGETS,
    DEFAULT_SCHEMA,
    EmaEntry,
    SensingEvent,
    UserProfile,
    derive_state_labels,
    format_time,
)

LATENTS_FILE: Final = "latents.jsonl"
MANIFEST_FILE: Final = "manifest.json"
CONTEXTS: Final = ("free", "meeting", "driving", "sleeping")
TIMEZONES: Final = ("America/New_York", "America/Chicago", "America/Denver", "America/Los_Angeles")
APP_CATEGORIES: Final = ("communication", "entertainment", "health", "news", "productivity", "social")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class GeneratorConfig:
    seed: int = 0
    n_users: int = 50
    # None draws entries per user from entries_range; otherwise n_days * emas_per_day each
    n_days: int | None = None
    entries_range: tuple[int, int] = (74, 96)
    emas_per_day: int = 3
    start_date: str = "2025-04-07"
    android_fraction: float = 0.36
    # affect dynamics
    rho: float = 0.6
    episode_rate: float = 0.04
    episode_mean_len: float = 3.0
    episode_magnitude: float = 8.0
    # behavior coupling, per unit of the day's standardized negative affect
    stationary_coupling: float = 0.08
    walking_coupling: float = 0.06
    screen_coupling: float = 0.25
    late_screen_coupling: float = 0.6
    # context schedule
    p_meeting: float = 0.15
    p_driving: float = 0.10
    p_sleeping: float = 0.13
    availability_noise: float = 0.04
    screen_rate_per_hour: float = 1.2
    sparse_day_rate: float = 0.02
    # P(diary missing) = logistic(a + b * na_latent)
    dropout_a: float = -3.0
    dropout_b: float = 0.12

    def __post_init__(self) -> None:
        probs = (
            "android_fraction",
            "episode_rate",
            "p_meeting",
            "p_driving",
            "p_sleeping",
            "availability_noise",
            "sparse_day_rate",
        )
        for name in probs:
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ConfigError(f"{name} must be in [0, 1], got {v}")
        if self.p_meeting + self.p_driving + self.p_sleeping > 1.0:
            raise ConfigError("context probabilities sum past 1")
        if not 0.0 <= self.rho < 1.0:
            raise ConfigError(f"rho must be in [0, 1), got {self.rho}")
        if self.n_users < 1:
            raise ConfigError("n_users must be >= 1")
        if self.n_days is not None and self.n_days < 1:
            raise ConfigError("n_days must be >= 1")
        lo, hi = self.entries_range
        if not 2 <= lo <= hi:
            raise ConfigError("entries_range must satisfy 2 <= lo <= hi")
        if not 1 <= self.emas_per_day <= 6:
            raise ConfigError("emas_per_day must be in [1, 6]")
        if self.episode_mean_len < 1.0:
            raise ConfigError("episode_mean_len must be >= 1")
        if self.screen_rate_per_hour <= 0:
            raise ConfigError("screen_rate_per_hour must be positive")
        try:
            date.fromisoformat(self.start_date)
        except ValueError as exc:
            raise ConfigError(f"bad start_date: {exc}") from None

    def to_json(self) -> dict[str, Any]:
        d = asdict(self)
        d["entries_range"] = list(self.entries_range)
        return d

    @classmethod
    def from_mapping(cls, obj: Mapping[str, Any]) -> GeneratorConfig:
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(obj) - known)
        if unknown:
            raise ConfigError(f"unknown generator fields: {unknown}")
        kw = dict(obj)
        if "entries_range" in kw:
            kw["entries_range"] = tuple(kw["entries_range"])
        return cls(**kw)


@dataclass(frozen=True)
class LatentState:
    user_id: str
    entry_index: int
    timestamp: datetime
    pa_latent: float
    na_latent: float
    er_desire_latent: float
    context: str
    episode: bool
    diary_dropped: bool

    @property
    def available(self) -> bool:
        return self.context == "free"

    def to_json(self) -> dict[str, Any]:
        return {
            "user_id": self.user_id,
            "entry_index": self.entry_index,
            "timestamp": format_time(self.timestamp),
            "pa_latent": self.pa_latent,
            "na_latent": self.na_latent,
            "er_desire_latent": self.er_desire_latent,
            "context": self.context,
            "episode": self.episode,
            "diary_dropped": self.diary_dropped,
        }


@dataclass
class Cohort:
    config: GeneratorConfig
    profiles: list[UserProfile]
    events: list[SensingEvent]
    entries: list[EmaEntry]
    latents: list[LatentState]
    manifest: dict[str, Any] = field(default_factory=dict)

    def files(self) -> dict[str, bytes]:
        """Serialized artifacts, including the manifest with checksums."""
        out = {
            PROFILES_FILE: _jsonl(p.to_json() for p in self.profiles),
            EVENTS_FILE: _jsonl(e.to_json() for e in self.events),
            EMA_FILE: _jsonl(e.to_json() for e in self.entries),
            LATENTS_FILE: _jsonl(s.to_json() for s in self.latents),
        }
        out[MANIFEST_FILE] = (dumps(self.manifest) + "\n").encode()
        return out


def _jsonl(records) -> bytes:
    return "".join(dumps(r) + "\n" for r in records).encode()


def logistic(x: float) -> float:
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    z = math.exp(x)
    return z / (1.0 + z)


def dropout_probability(config: GeneratorConfig, na_latent: float) -> float:
    return logistic(config.dropout_a + config.dropout_b * na_latent)


# -- diary banks --------------------------------------------------------------

# Bands run from most distressed (0) to most positive (3).
_OPENERS: Final[tuple[tuple[str, ...], ...]] = (
    (
        "Everything felt heavy today.",
        "I could not shake the dread this morning.",
        "Another scan is coming up and I keep spiraling.",
        "Barely slept and my chest felt tight all day.",
        "Cried in the car before going inside.",
        "The fatigue is crushing me again.",
        "I snapped at my partner and felt awful after.",
        "Kept checking my phone just to avoid thinking.",
    ),
    (
        "A bit tense and tired today.",
        "Some worry crept in after the appointment.",
        "I felt restless and distracted most of the afternoon.",
        "My energy dipped after lunch.",
        "Felt a little lonely in the evening.",
        "Work was draining and my back ached.",
        "Not great, not terrible, mostly flat.",
        "I kept thinking about the test results.",
    ),
    (
        "A fairly ordinary day.",
        "Got through my errands without much trouble.",
        "Had a calm morning with coffee.",
        "Spent some time reading, which helped.",
        "Talked with my sister on the phone.",
        "Work was steady and manageable.",
        "Cooked dinner and watched a show.",
        "Took a short walk around the block.",
    ),
    (
        "Felt genuinely good today.",
        "Laughed a lot with friends at lunch.",
        "Went for a long walk in the sun and loved it.",
        "I feel hopeful about the next few months.",
        "Finished a project and felt proud.",
        "Played with the grandkids all afternoon.",
        "Great energy after a solid night of sleep.",
        "Grateful for the people around me today.",
    ),
)
_DETAILS: Final[tuple[tuple[str, ...], ...]] = (
    (
        "Nothing seems to help.",
        "I just want the day to end.",
        "I feel scared about what comes next.",
        "I stayed in bed much longer than I should have.",
        "My mind will not stop racing.",
    ),
    (
        "Hoping tomorrow is easier.",
        "I should probably rest more.",
        "Trying not to dwell on it.",
        "A little support would be nice.",
        "Might call someone later.",
    ),
    (
        "Overall it was fine.",
        "Nothing special to report.",
        "I felt mostly like myself.",
        "Keeping to the usual routine.",
        "Looking forward to the weekend.",
    ),
    (
        "I want more days like this.",
        "It felt like my old self.",
        "Really content tonight.",
        "Body felt strong for once.",
        "So thankful for the little things.",
    ),
)


def diary_bank(band: int) -> list[str]:
    """All two-sentence diaries of an affect band (40 per band)."""
    return [f"{o} {d}" for o in _OPENERS[band] for d in _DETAILS[band]]


# -- interval helpers ---------------------------------------------------------


def _overlaps(a0: float, a1: float, blocks: list[tuple[float, float]]) -> bool:
    return any(a0 < b1 and b0 < a1 for b0, b1 in blocks)


def _subtract(a0: float, a1: float, blocks: list[tuple[float, float]]) -> list[tuple[float, float]]:
    parts = [(a0, a1)]
    for b0, b1 in blocks:
        nxt = []
        for s, e in parts:
            if b1 <= s or b0 >= e:
                nxt.append((s, e))
                continue
            if s < b0:
                nxt.append((s, b0))
            if b1 < e:
                nxt.append((b1, e))
        parts = nxt
    return [(s, e) for s, e in parts if e - s >= 1.0]


@dataclass
class _Ema:
    minute: float
    context: str
    noisy: bool = False


class _UserSim:
    def __init__(self, cfg: GeneratorConfig, n: int, android: bool, rng: np.random.Generator):
        self.cfg = cfg
        self.rng = rng
        self.user_id = f"u{n:03d}"
        self.tz = ZoneInfo(TIMEZONES[int(rng.integers(len(TIMEZONES)))])
        self.android = android
        self.events: list[SensingEvent] = []
        neuro = float(rng.normal(3.0, 0.7))
        extra = float(rng.normal(3.2, 0.7))
        self.profile = UserProfile(
            user_id=self.user_id,
            platform="android" if android else "ios",
            demographics=f"Age {int(rng.integers(24, 80))}, {'female' if rng.random() < 0.6 else 'male'}.",
            cancer_history=str(
                rng.choice(
                    [
                        "Breast cancer survivor, finished treatment.",
                        "Colorectal cancer survivor in follow-up care.",
                        "Prostate cancer survivor.",
                        "Lymphoma survivor in remission.",
                        "Melanoma survivor.",
                    ]
                )
            ),
            traits={"extraversion": round(extra, 2), "neuroticism": round(neuro, 2)},
            tz=self.tz.key,
        )
        self.pa_mu = float(np.clip(rng.normal(28.0, 5.0) + 2.0 * (extra - 3.2), 8.0, 42.0))
        self.na_mu = float(np.clip(rng.normal(14.0, 4.0) + 3.0 * (neuro - 3.0), 3.0, 35.0))
        self.er_mu = float(np.clip(rng.normal(4.0, 1.2), 0.5, 9.0))
        self.sd_pa, self.sd_na, self.sd_er = 5.0, 5.0, 1.3

    # -- schedule and latents ---------------------------------------------------

    def windows(self) -> list[tuple[int, int]]:
        # consecutive surveys are at least two hours apart so that the
        # reserved pre-survey windows of neighbours never overlap
        k = self.cfg.emas_per_day
        if k == 3:
            return [(8 * 60, 10 * 60 + 30), (12 * 60 + 30, 15 * 60 + 30), (18 * 60, 21 * 60 + 30)]
        width = (22 - 8) * 60 // k
        return [(8 * 60 + i * width, 8 * 60 + i * width + max(width - 120, 10)) for i in range(k)]

    def context(self) -> str:
        c = self.cfg
        u = self.rng.random()
        if u < c.p_meeting:
            return "meeting"
        if u < c.p_meeting + c.p_driving:
            return "driving"
        if u < c.p_meeting + c.p_driving + c.p_sleeping:
            return "sleeping"
        return "free"

    def simulate(self) -> tuple[list[EmaEntry], list[LatentState]]:
        cfg, rng = self.cfg, self.rng
        if cfg.n_days is not None:
            n_entries = cfg.n_days * cfg.emas_per_day
        else:
            n_entries = int(rng.integers(cfg.entries_range[0], cfg.entries_range[1] + 1))
        n_days = math.ceil(n_entries / cfg.emas_per_day)
        start = date.fromisoformat(cfg.start_date)
        bounds = DEFAULT_SCHEMA.bounds
        innov = math.sqrt(1.0 - cfg.rho**2)
        d_pa = d_na = d_er = 0.0
        episode_left = 0
        plan: list[tuple[date, _Ema, dict[str, Any]]] = []
        for d in range(n_days):
            day = start + timedelta(days=d)
            for lo, hi in self.windows():
                if len(plan) == n_entries:
                    break
                minute = float(rng.integers(lo, hi))
                if episode_left == 0 and rng.random() < cfg.episode_rate:
                    episode_left = 1 + int(rng.geometric(1.0 / cfg.episode_mean_len))
                ep = episode_left > 0
                episode_left = max(episode_left - 1, 0)
                d_pa = cfg.rho * d_pa + innov * self.sd_pa * rng.normal()
                d_na = cfg.rho * d_na + innov * self.sd_na * rng.normal()
                d_er = cfg.rho * d_er + innov * self.sd_er * rng.normal()
                bump = cfg.episode_magnitude if ep else 0.0
                na = self.na_mu + d_na + bump
                pa = self.pa_mu + d_pa - 0.5 * bump - 0.3 * d_na
                er = self.er_mu + 0.12 * (na - self.na_mu) + d_er
                lat = {
                    "pa": float(np.clip(pa, *bounds["pa"])),
                    "na": float(np.clip(na, *bounds["na"])),
                    "er_desire": float(np.clip(er, *bounds["er_desire"])),
                    "episode": ep,
                }
                ema = _Ema(minute, self.context())
                ema.noisy = ema.context in ("free", "meeting") and rng.random() < cfg.availability_noise
                plan.append((day, ema, lat))

        by_day: dict[date, list[_Ema]] = {}
        day_z: dict[date, list[float]] = {}
        for day, ema, lat in plan:
            by_day.setdefault(day, []).append(ema)
            day_z.setdefault(day, []).append((lat["na"] - self.na_mu) / self.sd_na)
        prev_bed = float(rng.normal(23 * 60, 40)) - 1440.0
        for day in sorted(by_day):
            z = float(np.mean(day_z[day]))
            prev_bed = self.emit_day(day, by_day[day], z, prev_bed)

        return self.make_entries(plan)

    def make_entries(self, plan) -> tuple[list[EmaEntry], list[LatentState]]:
        cfg, rng = self.cfg, self.rng
        bounds = DEFAULT_SCHEMA.bounds
        raw = []
        for day, ema, lat in plan:
            ts = self.to_utc(day, ema.minute)
            pa_s = round(float(np.clip(lat["pa"] + rng.normal(0, 1.5), *bounds["pa"])), 1)
            na_s = round(float(np.clip(lat["na"] + rng.normal(0, 1.5), *bounds["na"])), 1)
            er_s = round(float(np.clip(lat["er_desire"] + rng.normal(0, 0.5), *bounds["er_desire"])), 1)
            valence = (lat["pa"] - self.pa_mu) / self.sd_pa - (lat["na"] - self.na_mu) / self.sd_na
            band = int(np.searchsorted([-0.8, 0.0, 0.8], valence))
            dropped = rng.random() < dropout_probability(cfg, lat["na"])
            diary = None
            if not dropped:
                bank = diary_bank(band)
                diary = bank[int(rng.integers(len(bank)))]
            items = {
                "happy": lat["pa"] + rng.normal(0, 3),
                "cheerful": lat["pa"] + rng.normal(0, 3),
                "pleased": lat["pa"] + rng.normal(0, 3),
                "grateful": lat["pa"] + rng.normal(0, 4),
                "interaction_quality": lat["pa"] + rng.normal(0, 5),
                "future_outlook": lat["pa"] - lat["na"] + rng.normal(0, 4),
                "sad": lat["na"] + rng.normal(0, 3),
                "afraid": lat["na"] + rng.normal(0, 3),
                "miserable": lat["na"] + rng.normal(0, 3),
                "worried": lat["na"] + rng.normal(0, 3),
                "lonely": lat["na"] + rng.normal(0, 4),
                "physical_pain": lat["na"] + rng.normal(0, 6),
            }
            raw.append((ts, ema, lat, pa_s, na_s, er_s, diary, dropped, items))

        def above_median(values: list[float]) -> list[bool]:
            med = float(np.median(values))
            return [v > med for v in values]

        item_labels = {k: above_median([r[8][k] for r in raw]) for k in raw[0][8]}
        stub = [
            EmaEntry(self.user_id, r[0], r[3], r[4], r[5], dict.fromkeys(BINARY_TARGETS, False)) for r in raw
        ]
        state = {
            "PA_State": derive_state_labels(stub, "pa"),
            "NA_State": derive_state_labels(stub, "na"),
            "ER_desire_State": derive_state_labels(stub, "er_desire"),
        }
        entries, latents = [], []
        for i, (ts, ema, lat, pa_s, na_s, er_s, diary, dropped, _) in enumerate(raw):
            targets = {}
            for t in BINARY_TARGETS:
                if t in state:
                    targets[t] = state[t][i]
                elif t == "INT_availability":
                    targets[t] = ema.context == "free"
                else:
                    targets[t] = item_labels[t][i]
            entries.append(EmaEntry(self.user_id, ts, pa_s, na_s, er_s, targets, diary))
            latents.append(
                LatentState(
                    self.user_id,
                    i,
                    ts,
                    round(lat["pa"], 3),
                    round(lat["na"], 3),
                    round(lat["er_desire"], 3),
                    ema.context,
                    bool(lat["episode"]),
                    bool(dropped),
                )
            )
        return entries, latents

    # -- behavior -------------------------------------------------------------

    def to_utc(self, day: date, minute: float) -> datetime:
        local = datetime.combine(day, time(0), tzinfo=self.tz) + timedelta(seconds=round(minute * 60))
        return local.astimezone(timezone.utc)

    def emit(self, day: date, minute: float, modality: str, payload: dict[str, Any]) -> None:
        self.events.append(SensingEvent(self.user_id, self.to_utc(day, minute), modality, payload))

    def emit_day(self, day: date, emas: list[_Ema], z: float, prev_bed: float) -> float:
        """Emit one local day of sensing; returns tonight's bedtime (minutes)."""
        rng, cfg = self.rng, self.cfg
        first, last = emas[0], emas[-1]
        wake = float(np.clip(rng.normal(7 * 60, 30), 330, 470))
        if first.context == "sleeping" and first.minute < 11 * 60:
            wake = first.minute + float(rng.uniform(10, 60))
        else:
            wake = min(wake, first.minute - 30)
        bed = float(np.clip(rng.normal(23 * 60 + 30 * z, 40), 21.5 * 60, 25.5 * 60))
        if last.context == "sleeping" and last.minute >= 18 * 60 and last is not first:
            bed = last.minute - float(rng.uniform(20, 90))
        else:
            bed = max(bed, last.minute + 45)

        sleeps = [(prev_bed - 1440.0, wake)]
        naps: list[tuple[float, float]] = []
        no_screen: list[tuple[float, float]] = []
        no_auto: list[tuple[float, float]] = []
        forced_motion: list[tuple[float, float, str]] = []
        needs_screen: list[float] = []
        for ema in emas:
            t = ema.minute
            if ema.context == "sleeping":
                if not (ema is first and t < 11 * 60) and not (ema is last and t >= 18 * 60 and last is not first):
                    naps.append((t - float(rng.uniform(20, 90)), t + float(rng.uniform(5, 15))))
                no_screen.append((t - 125, t + 5))
            elif ema.context == "driving":
                forced_motion.append((t - float(rng.uniform(10, 40)), t + float(rng.uniform(5, 30)), "automotive"))
            elif ema.context == "meeting":
                forced_motion.append((t - float(rng.uniform(30, 60)), t + float(rng.uniform(10, 40)), "stationary"))
                if ema.noisy:
                    needs_screen.append(t)
                else:
                    no_screen.append((t - 125, t + 5))
            else:
                no_auto.append((t - 70, t + 5))
                if ema.noisy:
                    no_screen.append((t - 125, t + 5))
                else:
                    needs_screen.append(t)
        asleep = sleeps + naps + [(bed, bed + 600)]
        forced_screen: list[float] = []
        for t in needs_screen:
            room = _subtract(t - 90, t - 5, no_screen + asleep)
            if room:
                s0, s1 = room[int(rng.integers(len(room)))]
                forced_screen.append(float(rng.uniform(s0, s1)))

        # sleep episodes, stamped at their start
        for s, e in [sleeps[0]] + naps:
            self.emit(day, s, "sleep", {"start": format_time(self.to_utc(day, s)), "end": format_time(self.to_utc(day, e))})

        # motion: a chain of episodes over waking time, with reserved blocks carved out
        probs = np.array(
            [
                0.60 + cfg.stationary_coupling * z,
                0.25 - cfg.walking_coupling * z,
                0.03 - 0.01 * z,
                0.12,
            ]
        )
        probs = np.clip(probs, 0.01, None)
        probs /= probs.sum()
        acts = ("stationary", "walking", "running", "automotive")
        awake = _subtract(wake, bed, naps)
        reserved = [(s, e) for s, e, _ in forced_motion]
        episodes: list[tuple[float, float, str]] = []
        for a0, a1 in awake:
            m = a0
            while m < a1:
                dur = float(rng.uniform(8, 50))
                act = acts[int(rng.choice(4, p=probs))]
                end = min(m + dur, a1)
                if act == "automotive" and _overlaps(m, end, no_auto):
                    act = "stationary"
                for s, e in _subtract(m, end, reserved):
                    episodes.append((s, e, act))
                m = end
        for s, e, act in forced_motion:
            for s2, e2 in _subtract(s, e, naps):
                episodes.append((s2, e2, act))
        episodes.sort()

        # gps: one fix at the end of each motion episode
        gps_on = rng.random() >= cfg.sparse_day_rate
        cluster = 0
        speed = {"stationary": 0.0, "walking": 4.5, "running": 9.0, "automotive": 40.0}
        for s, e, act in episodes:
            self.emit(day, s, "motion", {"activity": act, "duration_min": round(e - s, 2)})
            if not gps_on:
                continue
            if act == "automotive":
                cluster = 0 if (cluster != 0 or rng.random() < 0.2) else int(rng.integers(1, 5))
                if rng.random() < 0.3:
                    cluster = int(rng.integers(1, 5))
            km = speed[act] * (e - s) / 60.0 * float(rng.uniform(0.7, 1.3)) if act != "stationary" else float(rng.uniform(0, 0.05))
            self.emit(
                day,
                min(e, bed - 0.5),
                "gps",
                {"displacement_km": round(km, 3), "at_home": cluster == 0, "cluster_id": cluster},
            )

        # screen sessions as a Poisson process over waking time
        rate = max(cfg.screen_rate_per_hour * (1.0 + cfg.screen_coupling * z), 0.3) / 60.0
        late = 1.0 + cfg.late_screen_coupling * max(z, 0.0)
        starts: list[float] = list(forced_screen)
        for a0, a1 in awake:
            m = a0
            while True:
                r = rate * (late if m >= 21 * 60 else 1.0)
                m += float(rng.exponential(1.0 / r))
                if m >= a1:
                    break
                starts.append(m)
        keyboard_on = rng.random() >= cfg.sparse_day_rate
        apps_on = self.android and rng.random() >= cfg.sparse_day_rate
        for s in sorted(starts):
            dur = float(np.clip(rng.exponential(5.0 + 2.0 * max(z, 0.0)), 0.5, 40.0))
            if s not in forced_screen and (_overlaps(s, s + dur, no_screen) or _overlaps(s, s + dur, asleep)):
                continue
            if s in forced_screen:
                dur = min(dur, 4.0)
            self.emit(day, s, "screen", {"kind": "unlock", "duration_min": 0.0})
            self.emit(day, s, "screen", {"kind": "session", "duration_min": round(dur, 2)})
            self.emit(day, s + dur, "screen", {"kind": "lock", "duration_min": 0.0})
            if apps_on:
                cat = APP_CATEGORIES[int(rng.integers(len(APP_CATEGORIES)))]
                self.emit(day, s, "app_usage", {"category": cat, "duration_min": round(dur, 2)})
            if keyboard_on and rng.random() < 0.35:
                self.emit(
                    day,
                    s,
                    "keyboard",
                    {"chars": int(rng.poisson(60)), "duration_min": round(min(dur, float(rng.uniform(0.5, 3.0))), 2)},
                )

        # ambient light, one reading per hour
        if rng.random() >= cfg.sparse_day_rate:
            for h in range(24):
                m = h * 60 + float(rng.uniform(0, 59))
                if _overlaps(m, m + 1, asleep + [(-600, wake)]):
                    lux = float(rng.uniform(0, 3))
                elif 7 * 60 <= m < 19 * 60:
                    lux = float(rng.lognormal(math.log(300), 0.6))
                else:
                    lux = float(rng.lognormal(math.log(60), 0.5))
                self.emit(day, m, "light", {"lux": round(lux, 1)})
        return bed


def generate_cohort(config: GeneratorConfig | None = None) -> Cohort:
    cfg = config or GeneratorConfig()
    root = np.random.default_rng(cfg.seed)
    n_android = round(cfg.android_fraction * cfg.n_users)
    android = set(root.permutation(cfg.n_users)[:n_android].tolist())
    profiles, events, entries, latents = [], [], [], []
    for n in range(cfg.n_users):
        rng = np.random.default_rng([cfg.seed, n])
        sim = _UserSim(cfg, n, n in android, rng)
        ents, lats = sim.simulate()
        sim.events.sort(key=lambda e: (e.timestamp, e.modality))
        profiles.append(sim.profile)
        events.extend(sim.events)
        entries.extend(ents)
        latents.extend(lats)
    cohort = Cohort(cfg, profiles, events, entries, latents)
    body = cohort.files()
    cohort.manifest = {
        "format": "pulse-synth",
        "version": 1,
        "config": cfg.to_json(),
        "counts": {
            "users": len(profiles),
            "android_users": sum(1 for p in profiles if p.platform == "android"),
            "events": len(events),
            "entries": len(entries),
            "diaries": sum(1 for e in entries if e.diary),
        },
        "checksums": {
            name: hashlib.sha256(data).hexdigest() for name, data in sorted(body.items()) if name != MANIFEST_FILE
        },
    }
    return cohort


def write_cohort(directory: Path | str, cohort: Cohort) -> dict[str, str]:
    """Write all artifacts; returns sha256 per file (manifest included)."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    sums = {}
    for name, data in cohort.files().items():
        (directory / name).write_bytes(data)
        sums[name] = hashlib.sha256(data).hexdigest()
    return sums


def load_latents(path: Path | str) -> list[LatentState]:
    from pulse.dataset import iter_jsonl
    from pulse.model import parse_time

    def parse(o: dict[str, Any]) -> LatentState:
        return LatentState(
            o["user_id"],
            int(o["entry_index"]),
            parse_time(o["timestamp"]),
            float(o["pa_latent"]),
            float(o["na_latent"]),
            float(o["er_desire_latent"]),
            o["context"],
            bool(o["episode"]),
            bool(o["diary_dropped"]),
        )

    return list(iter_jsonl(path, parse))


def reference_rule_agent_policy():
    """The scripted rule agent used for synthetic factorial runs."""
    from pulse.agent.policies import ReferenceRulePolicy

    return ReferenceRulePolicy()
