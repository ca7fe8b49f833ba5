"""Structured and agentic prediction drivers, parsing, reflection, scheduling."""

from __future__ import annotations

import json
import logging
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Callable, Final, Mapping, Protocol, Sequence

from pulse.agent import prompts
from pulse.agent.backends import BackendError, InferenceBackend, Reply
from pulse.memory import (
    DEFAULT_BUDGET,
    LeakError,
    MemoryDocument,
    MemoryLog,
    ReflectionRecord,
    find_leak,
    normalize_text,
    receptivity_outcome,
    render_memory,
)
from pulse.model import BINARY_TARGETS, DEFAULT_SCHEMA, TargetSchema
from pulse.retrieval import PeerIndex, rank_peers
from pulse.timestore import AccessContext, Store, open_context
from pulse.tools import ToolError, ToolResponse, Toolbox

log = logging.getLogger(__name__)

MAX_TURNS: Final = 16
MAX_REFLECTION_CHARS: Final = 800
DEFAULT_K: Final = 5
BACKEND_RETRIES: Final = 2

ARCHITECTURES = ("structured", "agentic")
MODALITY_CONDITIONS = ("sensing_only", "multimodal", "diary_only")


class PredictionFormatError(ValueError):
    """Backend output could not be parsed into a prediction."""


class SchemaViolationError(PredictionFormatError):
    def __init__(self, fields: Sequence[str]):
        super().__init__(f"prediction schema violation: {', '.join(fields)}")
        self.fields = list(fields)


@dataclass(frozen=True)
class RunCondition:
    architecture: str
    modality: str

    def __post_init__(self) -> None:
        if self.architecture not in ARCHITECTURES:
            raise ValueError(f"unknown architecture {self.architecture!r}")
        if self.modality not in MODALITY_CONDITIONS:
            raise ValueError(f"unknown modality {self.modality!r}")
        if self.modality == "diary_only" and self.architecture != "structured":
            raise ValueError("diary_only is only valid with the structured architecture")

    @property
    def name(self) -> str:
        arch = {"structured": "Struct", "agentic": "Auto"}[self.architecture]
        mod = {"sensing_only": "Sense", "multimodal": "Multi", "diary_only": "Diary"}[self.modality]
        return f"{arch}-{mod}"

    @classmethod
    def parse(cls, name: str) -> RunCondition:
        for arch in ARCHITECTURES:
            for mod in MODALITY_CONDITIONS:
                try:
                    cond = cls(arch, mod)
                except ValueError:
                    continue
                if cond.name == name:
                    return cond
        raise ValueError(f"unknown condition name {name!r}")

    def to_json(self) -> dict[str, str]:
        return {"architecture": self.architecture, "modality": self.modality}


FACTORIAL: Final[tuple[RunCondition, ...]] = (
    RunCondition("structured", "sensing_only"),
    RunCondition("structured", "multimodal"),
    RunCondition("agentic", "sensing_only"),
    RunCondition("agentic", "multimodal"),
)


@dataclass(frozen=True)
class ToolCall:
    tool_name: str
    arguments: dict[str, Any]
    response_digest: str

    def to_json(self) -> dict[str, Any]:
        return {"tool_name": self.tool_name, "arguments": self.arguments, "response_digest": self.response_digest}


@dataclass
class Prediction:
    binary: dict[str, bool]
    pa_pred: float
    na_pred: float
    er_desire_pred: float
    reasoning: str
    confidence: float
    tool_trace: list[ToolCall] = field(default_factory=list)
    turns_used: int = 0
    forced_finalize: bool = False
    parse_retries: int = 0
    transcript: list[dict[str, Any]] | None = field(default=None, repr=False, compare=False)

    def to_json(self) -> dict[str, Any]:
        return {
            "binary": {t: self.binary[t] for t in BINARY_TARGETS},
            "continuous": {"pa": self.pa_pred, "na": self.na_pred, "er_desire": self.er_desire_pred},
            "reasoning": self.reasoning,
            "confidence": self.confidence,
            "tool_trace": [c.to_json() for c in self.tool_trace],
            "turns_used": self.turns_used,
            "forced_finalize": self.forced_finalize,
            "parse_retries": self.parse_retries,
        }


# -- parsing ------------------------------------------------------------------


def extract_json_object(text: str) -> dict[str, Any] | None:
    """First decodable top-level JSON object in ``text``."""
    decoder = json.JSONDecoder()
    i = text.find("{")
    while i != -1:
        try:
            obj, _ = decoder.raw_decode(text, i)
        except json.JSONDecodeError:
            i = text.find("{", i + 1)
            continue
        if isinstance(obj, dict):
            return obj
        i = text.find("{", i + 1)
    return None


def _as_bool(v: Any) -> bool | None:
    if isinstance(v, bool):
        return v
    if isinstance(v, int) and v in (0, 1):
        return bool(v)
    if isinstance(v, str) and v.lower() in ("true", "false", "yes", "no"):
        return v.lower() in ("true", "yes")
    return None


def _as_number(v: Any) -> float | None:
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        return None
    return float(v)


def parse_prediction(text: str, schema: TargetSchema = DEFAULT_SCHEMA) -> Prediction:
    obj = extract_json_object(text)
    if obj is None:
        raise PredictionFormatError("no JSON object found")
    bad: list[str] = []
    binary_in = obj.get("binary")
    binary: dict[str, bool] = {}
    if not isinstance(binary_in, dict):
        bad.append("binary")
    else:
        for t in schema.binary:
            b = _as_bool(binary_in.get(t))
            if b is None:
                bad.append(f"binary.{t}")
            else:
                binary[t] = b
    cont_in = obj.get("continuous")
    cont: dict[str, float] = {}
    if not isinstance(cont_in, dict):
        bad.append("continuous")
    else:
        for name in ("pa", "na", "er_desire"):
            v = _as_number(cont_in.get(name))
            lo, hi = schema.bounds[name]
            if v is None or not lo <= v <= hi:
                bad.append(f"continuous.{name}")
            else:
                cont[name] = v
    conf = _as_number(obj.get("confidence"))
    if conf is None or not 0.0 <= conf <= 1.0:
        bad.append("confidence")
    reasoning = obj.get("reasoning", "")
    if not isinstance(reasoning, str):
        bad.append("reasoning")
    if bad:
        raise SchemaViolationError(bad)
    return Prediction(
        binary=binary,
        pa_pred=cont["pa"],
        na_pred=cont["na"],
        er_desire_pred=cont["er_desire"],
        reasoning=reasoning,
        confidence=float(conf),
    )


# -- shared helpers -----------------------------------------------------------


class ToolClient(Protocol):
    def call(self, name: str, arguments: Mapping[str, Any] | None = None) -> ToolResponse: ...

    def tool_list(self) -> list[dict[str, Any]]: ...


def _complete(backend: InferenceBackend, messages: list[dict[str, Any]], tools: Sequence[dict[str, Any]]) -> Reply:
    for attempt in range(BACKEND_RETRIES + 1):
        try:
            return backend.complete(messages, tools)
        except BackendError:
            if attempt == BACKEND_RETRIES:
                raise
            log.warning("backend call failed, retrying (%d)", attempt + 1)
    raise AssertionError("unreachable")


def _finalize(
    backend: InferenceBackend, messages: list[dict[str, Any]], reply: Reply, schema: TargetSchema
) -> Prediction:
    """Parse a final reply, asking once for a clean re-emit on failure."""
    messages.append({"role": "assistant", "content": reply.content})
    try:
        pred = parse_prediction(reply.content, schema)
        pred.parse_retries = 0
        return pred
    except PredictionFormatError:
        messages.append({"role": "user", "content": prompts.REEMIT_JSON, "control": "reemit"})
        retry = _complete(backend, messages, [])
        messages.append({"role": "assistant", "content": retry.content})
        pred = parse_prediction(retry.content, schema)
        pred.parse_retries = 1
        return pred


def current_diary(ctx: AccessContext) -> str | None:
    """The diary submitted with the current EMA (same instant as the boundary)."""
    return ctx.store.entries(ctx.user_id)[ctx.entry_index].diary


def render_profile(ctx: AccessContext) -> str:
    p = ctx.profile
    traits = ", ".join(f"{k} {v:.1f}" for k, v in sorted(p.traits.items()))
    return (
        f"Participant {p.user_id} ({p.platform} phone). {p.demographics} {p.cancer_history}".strip()
        + (f"\nTrait measures: {traits}." if traits else "")
        + f"\nSurvey time (local): {ctx.local(ctx.ema_timestamp).strftime('%A %Y-%m-%d %H:%M')}."
    )


# -- structured ---------------------------------------------------------------


def peer_anchors(
    ctx: AccessContext, condition: RunCondition, peer_index: PeerIndex | None, diary: str | None, k: int
) -> tuple[str | None, list]:
    if peer_index is None:
        return None, []
    use_text = condition.modality in ("multimodal", "diary_only") and bool(diary)
    if use_text:
        return "text", rank_peers(peer_index, peer_index.embed_text(diary or ""), "text", ctx.user_id, k)
    if condition.modality == "diary_only":
        return None, []
    agg = ctx.daily_aggregates(ctx.ema_date)
    if not agg.any_available:
        return "sensing", []
    return "sensing", rank_peers(peer_index, peer_index.embed_day(agg), "sensing", ctx.user_id, k)


def build_structured_messages(
    ctx: AccessContext,
    condition: RunCondition,
    peer_index: PeerIndex | None,
    memory_doc: MemoryDocument | None,
    *,
    k: int = DEFAULT_K,
) -> list[dict[str, Any]]:
    """Prompt sections in fixed order: profile, sensing, diary, memory, peers, output."""
    sections = [f"## Profile\n{render_profile(ctx)}"]
    data: dict[str, Any] = {}
    if condition.modality != "diary_only":
        summary = Toolbox(ctx).get_daily_summary(1)
        sections.append(f"## Sensing summary\n{summary.rendered or 'No sensing data available.'}")
        data["summary"] = summary.structured
    diary = None
    if condition.modality != "sensing_only":
        diary = current_diary(ctx)
        sections.append(f"## Diary\n{diary if diary else 'No diary entry was written with this survey.'}")
        data["diary_present"] = bool(diary)
    sections.append(f"## Session memory\n{memory_doc.rendered if memory_doc and memory_doc.rendered else 'None yet.'}")
    space, anchors = peer_anchors(ctx, condition, peer_index, diary, k)
    lines = []
    for m in anchors:
        o = m.outcomes
        lines.append(
            f"- similarity {m.similarity:.2f}: PA {o['pa_score']:.1f}, NA {o['na_score']:.1f}, "
            f"ER desire {o['er_desire_score']:.1f}; "
            + ", ".join(f"{t} {'yes' if o['binary_targets'][t] else 'no'}" for t in BINARY_TARGETS)
        )
    sections.append(
        f"## Peer calibration cases ({space or 'none'})\n" + ("\n".join(lines) if lines else "None available.")
    )
    data["anchors"] = [m.outcomes for m in anchors]
    sections.append(f"## Output\n{prompts.OUTPUT_INSTRUCTIONS}")
    return [
        {"role": "system", "content": prompts.STRUCTURED, "task": "structured"},
        {"role": "user", "content": "\n\n".join(sections), "data": data},
    ]


def predict_structured(
    ctx: AccessContext,
    condition: RunCondition,
    peer_index: PeerIndex | None,
    memory_doc: MemoryDocument | None,
    backend: InferenceBackend,
    *,
    k: int = DEFAULT_K,
    schema: TargetSchema = DEFAULT_SCHEMA,
) -> Prediction:
    if condition.architecture != "structured":
        raise ValueError("predict_structured needs a structured condition")
    messages = build_structured_messages(ctx, condition, peer_index, memory_doc, k=k)
    reply = _complete(backend, messages, [])
    pred = _finalize(backend, messages, reply, schema)
    pred.turns_used = 1
    pred.transcript = messages
    return pred


# -- agentic ------------------------------------------------------------------


def build_agentic_messages(
    ctx: AccessContext, condition: RunCondition, memory_doc: MemoryDocument | None
) -> list[dict[str, Any]]:
    multimodal = condition.modality == "multimodal"
    system = prompts.AGENTIC_MULTIMODAL if multimodal else prompts.AGENTIC_SENSING
    if memory_doc is not None and memory_doc.rendered:
        system += "\n\n" + memory_doc.rendered
    user = [f"## Profile\n{render_profile(ctx)}"]
    data: dict[str, Any] = {}
    if multimodal:
        diary = current_diary(ctx)
        user.append(f"## Diary\n{diary if diary else 'No diary entry was written with this survey.'}")
        data["diary"] = diary
    user.append(
        "Investigate with the tools, then answer.\n" + prompts.OUTPUT_INSTRUCTIONS
    )
    return [
        {"role": "system", "content": system, "task": "agentic"},
        {"role": "user", "content": "\n\n".join(user), "data": data},
    ]


def predict_agentic(
    ctx: AccessContext,
    condition: RunCondition,
    tools: ToolClient,
    memory_doc: MemoryDocument | None,
    backend: InferenceBackend,
    *,
    max_turns: int = MAX_TURNS,
    schema: TargetSchema = DEFAULT_SCHEMA,
) -> Prediction:
    """ReAct loop: each backend call is one turn; the last turn is forced to finalize."""
    if condition.architecture != "agentic":
        raise ValueError("predict_agentic needs an agentic condition")
    if not 1 <= max_turns <= MAX_TURNS:
        raise ValueError(f"max_turns must be in [1, {MAX_TURNS}]")
    messages = build_agentic_messages(ctx, condition, memory_doc)
    schemas = tools.tool_list()
    trace: list[ToolCall] = []
    forced = False
    for turn in range(1, max_turns + 1):
        if turn == max_turns:
            messages.append({"role": "user", "content": prompts.FORCE_FINALIZE, "control": "finalize"})
            forced = True
        reply = _complete(backend, messages, [] if forced else schemas)
        if not forced and reply.kind == "tool_call":
            call_id = f"call_{turn}"
            messages.append(
                {
                    "role": "assistant",
                    "content": reply.content,
                    "tool_call": {"id": call_id, "name": reply.tool_name, "arguments": reply.arguments},
                }
            )
            try:
                resp = tools.call(reply.tool_name or "", reply.arguments)
            except ToolError as exc:
                trace.append(ToolCall(reply.tool_name or "", dict(reply.arguments), f"error:{exc.code}"))
                messages.append(
                    {
                        "role": "tool",
                        "tool_call_id": call_id,
                        "name": reply.tool_name,
                        "content": f"Error ({exc.code}): {exc}",
                        "is_error": True,
                    }
                )
                continue
            trace.append(ToolCall(resp.tool_name, dict(reply.arguments), resp.digest))
            messages.append(
                {
                    "role": "tool",
                    "tool_call_id": call_id,
                    "name": resp.tool_name,
                    "content": resp.rendered,
                    "structured": resp.structured,
                }
            )
            continue
        if not forced and reply.kind == "text":
            messages.append({"role": "assistant", "content": reply.content})
            continue
        pred = _finalize(backend, messages, reply, schema)
        pred.tool_trace = trace
        pred.turns_used = turn
        pred.forced_finalize = forced
        pred.transcript = messages
        return pred
    raise AssertionError("unreachable")


# -- reflection ---------------------------------------------------------------


def fallback_reflection(prediction: Prediction, receptive: bool) -> str:
    tools = sorted({c.tool_name for c in prediction.tool_trace})
    used = ", ".join(tools) if tools else "the pre-assembled summary"
    level = "high" if prediction.confidence >= 0.8 else "moderate" if prediction.confidence >= 0.65 else "low"
    outcome = "receptive" if receptive else "not receptive"
    return f"Relied on {used}; confidence was {level}. The person was {outcome} at this survey."


def reflect(
    ctx: AccessContext, prediction: Prediction, receptive: bool, backend: InferenceBackend
) -> str:
    """One reflection call, one sanitizing retry, then a templated fallback."""
    outcome = "receptive" if receptive else "not receptive"
    messages: list[dict[str, Any]] = [
        {"role": "system", "content": prompts.REFLECTION, "task": "reflection"},
        {
            "role": "user",
            "content": (
                f"Your reasoning was: {prediction.reasoning[:600]}\n"
                f"Tools used: {', '.join(c.tool_name for c in prediction.tool_trace) or 'none'}.\n"
                f"Outcome: the person was {outcome} at this survey."
            ),
            "data": {
                "receptive": receptive,
                "tools_used": [c.tool_name for c in prediction.tool_trace],
                "confidence": prediction.confidence,
            },
        },
    ]
    for attempt in range(2):
        try:
            reply = _complete(backend, messages, [])
        except BackendError:
            break
        text = normalize_text(reply.content)[:MAX_REFLECTION_CHARS]
        if text and find_leak(text) is None:
            return text
        messages.append({"role": "assistant", "content": reply.content})
        messages.append({"role": "user", "content": prompts.SANITIZE, "control": "sanitize"})
    return fallback_reflection(prediction, receptive)


# -- scheduling ---------------------------------------------------------------


ToolsFactory = Callable[[AccessContext, "PeerIndex | None"], ToolClient]


def in_process_tools(ctx: AccessContext, peer_index: PeerIndex | None) -> ToolClient:
    return Toolbox(ctx, peer_index)


@dataclass
class UserRun:
    user_id: str
    predictions: list[Prediction] = field(default_factory=list)
    first_index: int = 0
    aborted: str | None = None


def run_user_sequence(
    store: Store,
    user_id: str,
    condition: RunCondition,
    backend: InferenceBackend,
    *,
    peer_index: PeerIndex | None = None,
    memory: MemoryLog | None = None,
    tools_factory: ToolsFactory = in_process_tools,
    k: int = DEFAULT_K,
    memory_budget: int = DEFAULT_BUDGET,
    keep_transcripts: bool = False,
    on_prediction: Callable[[str, int, Prediction], None] | None = None,
) -> UserRun:
    """Predict every EMA of one user in time order, reflecting after each.

    Reflection ``i`` is appended before prediction ``i + 1`` starts.
    """
    memory = memory if memory is not None else MemoryLog()
    entries = store.entries(user_id)
    run = UserRun(user_id)
    last = memory.last_index(user_id)
    start = 0 if last is None else last + 1
    run.first_index = start
    for i in range(start, len(entries)):
        entry = entries[i]
        ctx = open_context(store, user_id, entry.timestamp)
        doc = render_memory(memory, user_id, memory_budget)
        try:
            if condition.architecture == "structured":
                pred = predict_structured(ctx, condition, peer_index, doc, backend, k=k)
            else:
                client = tools_factory(ctx, peer_index)
                try:
                    pred = predict_agentic(ctx, condition, client, doc, backend)
                finally:
                    close = getattr(client, "close", None)
                    if close is not None:
                        close()
        except PredictionFormatError as exc:
            run.aborted = f"entry {i}: {exc}"
            log.error("aborting %s under %s: %s", user_id, condition.name, exc)
            return run
        receptive = receptivity_outcome(entries, i)
        text = reflect(ctx, pred, receptive, backend)
        try:
            memory.append(ReflectionRecord(user_id, i, entry.timestamp, text, receptive))
        except LeakError:
            memory.append(ReflectionRecord(user_id, i, entry.timestamp, fallback_reflection(pred, receptive), receptive))
        if not keep_transcripts:
            pred.transcript = None
        run.predictions.append(pred)
        if on_prediction is not None:
            on_prediction(user_id, i, pred)
    return run


def run_users(
    store: Store,
    user_ids: Sequence[str],
    condition: RunCondition,
    backend: InferenceBackend,
    *,
    concurrency_limit: int = 5,
    peer_index_for: Callable[[str], PeerIndex | None] | None = None,
    memory: MemoryLog | None = None,
    **kwargs: Any,
) -> dict[str, UserRun]:
    """Users in parallel (at most ``concurrency_limit``), each user sequential."""
    if concurrency_limit < 1:
        raise ValueError("concurrency_limit must be >= 1")
    memory = memory if memory is not None else MemoryLog()

    def one(uid: str) -> UserRun:
        index = peer_index_for(uid) if peer_index_for is not None else None
        return run_user_sequence(store, uid, condition, backend, peer_index=index, memory=memory, **kwargs)

    with ThreadPoolExecutor(max_workers=concurrency_limit) as pool:
        runs = list(pool.map(one, user_ids))
    return {r.user_id: r for r in runs}


class InFlightCounter:
    """Tracks concurrent calls; used to verify scheduling limits."""

    def __init__(self) -> None:
        self._lock = threading.Lock()
        self.current = 0
        self.peak = 0

    def __enter__(self) -> InFlightCounter:
        with self._lock:
            self.current += 1
            self.peak = max(self.peak, self.current)
        return self

    def __exit__(self, *exc: object) -> None:
        with self._lock:
            self.current -= 1
