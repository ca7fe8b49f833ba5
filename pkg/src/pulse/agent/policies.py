"""Scripted policies for the deterministic backend.

``ReferenceRulePolicy`` is a transparent rule agent that investigates with a
fixed tool plan; ``StructuredBaselinePolicy`` predicts from peer anchors alone.
Both are hand-written heuristics, not learned models.
"""

from __future__ import annotations

import json
import random
from typing import Any, Mapping, Sequence

from pulse.agent.backends import Reply
from pulse.model import BINARY_TARGETS, DEFAULT_SCHEMA, FOCUS_TARGETS

_MID = {name: (lo + hi) / 2 for name, (lo, hi) in DEFAULT_SCHEMA.bounds.items()}


def _task(messages: Sequence[Mapping[str, Any]]) -> str | None:
    return messages[0].get("task") if messages else None


def _controlled(messages: Sequence[Mapping[str, Any]]) -> bool:
    return any(m.get("control") in ("finalize", "reemit") for m in messages)


def _last_tool(messages: Sequence[Mapping[str, Any]], name: str) -> dict[str, Any] | None:
    for m in reversed(messages):
        if m.get("role") == "tool" and m.get("name") == name and not m.get("is_error"):
            return m.get("structured")
    return None


def _user_data(messages: Sequence[Mapping[str, Any]]) -> dict[str, Any]:
    for m in messages:
        if m.get("role") == "user" and "data" in m:
            return m["data"] or {}
    return {}


def _majority(outcomes: Sequence[Mapping[str, Any]]) -> tuple[dict[str, bool], dict[str, float], float]:
    """Per-target majority vote (ties go to False), mean scores, agreement."""
    if not outcomes:
        return {t: False for t in BINARY_TARGETS}, dict(_MID), 0.0
    n = len(outcomes)
    rates = {t: sum(1 for o in outcomes if o["binary_targets"][t]) / n for t in BINARY_TARGETS}
    binary = {t: rates[t] > 0.5 for t in BINARY_TARGETS}
    cont = {
        "pa": sum(o["pa_score"] for o in outcomes) / n,
        "na": sum(o["na_score"] for o in outcomes) / n,
        "er_desire": sum(o["er_desire_score"] for o in outcomes) / n,
    }
    agreement = sum(abs(rates[t] - 0.5) * 2 for t in FOCUS_TARGETS) / len(FOCUS_TARGETS)
    return binary, cont, agreement


def _final(binary: Mapping[str, bool], cont: Mapping[str, float], reasoning: str, confidence: float) -> Reply:
    obj = {
        "binary": {t: bool(binary[t]) for t in BINARY_TARGETS},
        "continuous": {k: round(DEFAULT_SCHEMA.clamp(k, float(cont[k])), 3) for k in ("pa", "na", "er_desire")},
        "reasoning": reasoning,
        "confidence": round(min(max(confidence, 0.0), 1.0), 3),
    }
    return Reply("final", json.dumps(obj))


def template_reflection(messages: Sequence[Mapping[str, Any]]) -> Reply:
    data = _user_data(messages)
    tools = sorted(set(data.get("tools_used") or []))
    outcome = "receptive" if data.get("receptive") else "not receptive"
    checked = ", ".join(tools) if tools else "only the assembled summary"
    return Reply(
        "final",
        f"Checked {checked}. The person was {outcome} at this survey. "
        "Recent phone use and travel right before the survey looked like the most telling signals.",
    )


class StructuredBaselinePolicy:
    """Copies the peer anchors' majority; in agentic mode it finalizes at once."""

    def respond(self, messages, tools, rng: random.Random) -> Reply:
        task = _task(messages)
        if task == "reflection":
            return template_reflection(messages)
        anchors = _user_data(messages).get("anchors") or []
        binary, cont, agreement = _majority(anchors)
        return _final(binary, cont, f"Majority of {len(anchors)} peer anchors.", 0.5 + 0.2 * agreement)


class ReferenceRulePolicy:
    """Rule agent: summary, timeline, baseline check, peers, then decide.

    Availability is read off the final minutes before the survey: recent
    driving, ongoing sleep or no phone activity in two hours means the
    person is not available. Affect states follow the peer majority, nudged
    by a strongly unusual screen-time day.
    """

    SENSING_PLAN: tuple[tuple[str, dict[str, Any]], ...] = (
        ("get_daily_summary", {"lookback_days": 1}),
        ("get_behavioral_timeline", {"segment_hours": 3}),
        ("compare_to_baseline", {"metric": "screen_total_min"}),
        ("find_peer_cases", {"mode": "sensing", "k": 5}),
    )

    def __init__(self, z_threshold: float = 1.5):
        self.z_threshold = z_threshold

    def plan(self, diary: str | None) -> list[tuple[str, dict[str, Any]]]:
        steps = list(self.SENSING_PLAN)
        if diary:
            steps.append(("find_peer_cases", {"mode": "text", "query_text": diary, "k": 5}))
        return steps

    def respond(self, messages, tools, rng: random.Random) -> Reply:
        task = _task(messages)
        if task == "reflection":
            return template_reflection(messages)
        if task == "structured":
            return StructuredBaselinePolicy().respond(messages, tools, rng)
        diary = _user_data(messages).get("diary")
        done = sum(1 for m in messages if m.get("role") == "tool")
        steps = self.plan(diary)
        if tools and not _controlled(messages) and done < len(steps):
            name, args = steps[done]
            return Reply("tool_call", "", name, dict(args))
        return self.decide(messages)

    def decide(self, messages: Sequence[Mapping[str, Any]]) -> Reply:
        timeline = _last_tool(messages, "get_behavioral_timeline")
        baseline = _last_tool(messages, "compare_to_baseline")
        outcomes: list[Mapping[str, Any]] = []
        for m in messages:
            if m.get("role") == "tool" and m.get("name") == "find_peer_cases" and m.get("structured"):
                outcomes.extend(x["outcomes"] for x in m["structured"]["matches"])
        binary, cont, agreement = _majority(outcomes)
        reasons = [f"{len(outcomes)} peer cases"]
        clear = False
        if timeline is not None:
            b = timeline["boundary_state"]
            driving = b["automotive_min_last_hour"] > 0
            asleep = bool(b["sleep_ongoing"])
            idle = b["screen_events_last_2h"] == 0
            binary["INT_availability"] = not (driving or asleep or idle)
            clear = asleep or b["automotive_min_last_hour"] >= 10 or (b["screen_events_last_2h"] >= 2 and not driving)
            reasons.append(
                "driving before the survey" if driving
                else "still asleep" if asleep
                else "no phone use in two hours" if idle
                else "phone in use, not travelling"
            )
        z = baseline.get("z") if baseline else None
        if z is not None and z >= self.z_threshold:
            # far more screen time than usual leans toward negative states
            binary["NA_State"] = True
            binary["PA_State"] = False
            binary["happy"] = False
            cont["na"] = cont["na"] + 3.0
            reasons.append(f"screen time well above usual (z {z:+.1f})")
        confidence = 0.55 + (0.1 if clear else 0.0) + 0.2 * agreement
        return _final(binary, cont, "; ".join(reasons) + ".", confidence)


class LoopingPolicy:
    """Never finalizes on its own; used to exercise the turn cap."""

    def __init__(self, tool: str = "get_daily_summary", args: Mapping[str, Any] | None = None):
        self.tool = tool
        self.args = dict(args or {"lookback_days": 1})

    def respond(self, messages, tools, rng: random.Random) -> Reply:
        if _task(messages) == "reflection":
            return template_reflection(messages)
        if _controlled(messages):
            binary = {t: rng.random() < 0.5 for t in BINARY_TARGETS}
            return _final(binary, _MID, "Forced to stop.", rng.random())
        if rng.random() < 0.2:
            return Reply("text", "Thinking about what to check next.")
        return Reply("tool_call", "", self.tool, dict(self.args))
