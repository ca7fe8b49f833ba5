import json
import threading
import time

import pytest

from pulse.agent.backends import BackendError, Reply, ReplayPolicy, ScriptedBackend
from pulse.agent.policies import LoopingPolicy, ReferenceRulePolicy, StructuredBaselinePolicy
from pulse.agent.runtime import (
    FACTORIAL,
    MAX_TURNS,
    InFlightCounter,
    PredictionFormatError,
    RunCondition,
    SchemaViolationError,
    build_agentic_messages,
    build_structured_messages,
    extract_json_object,
    parse_prediction,
    predict_agentic,
    predict_structured,
    reflect,
    run_user_sequence,
    run_users,
)
from pulse.memory import MemoryLog, find_leak, render_memory
from pulse.model import BINARY_TARGETS
from pulse.retrieval import build_peer_index
from pulse.timestore import open_context
from pulse.tools import Toolbox

SENSE = RunCondition("agentic", "sensing_only")
MULTI = RunCondition("agentic", "multimodal")


def final_json(conf=0.7, **over):
    obj = {
        "binary": {t: False for t in BINARY_TARGETS},
        "continuous": {"pa": 20, "na": 10, "er_desire": 3},
        "reasoning": "ok",
        "confidence": conf,
    }
    obj.update(over)
    return json.dumps(obj)


def final(conf=0.7):
    return Reply("final", final_json(conf))


def call(name, **args):
    return Reply("tool_call", "", name, args)


@pytest.fixture(scope="module")
def ctx(small_store):
    uid = small_store.user_ids[0]
    return open_context(small_store, uid, small_store.entries(uid)[12].timestamp)


@pytest.fixture(scope="module")
def index(small_store):
    users = small_store.user_ids
    return build_peer_index(small_store, users[1:], eval_users=users[:1])


# -- conditions and parsing ----------------------------------------------------


def test_condition_names_roundtrip():
    assert [c.name for c in FACTORIAL] == ["Struct-Sense", "Struct-Multi", "Auto-Sense", "Auto-Multi"]
    for c in FACTORIAL:
        assert RunCondition.parse(c.name) == c
    assert RunCondition.parse("Struct-Diary").modality == "diary_only"
    with pytest.raises(ValueError):
        RunCondition("agentic", "telepathy")
    with pytest.raises(ValueError):
        RunCondition.parse("Auto")


def test_extract_json_from_chatter():
    assert extract_json_object('Sure! {"a": {"b": 1}} trailing {') == {"a": {"b": 1}}
    assert extract_json_object("[1, 2] no object") is None


def test_parse_prediction_ok_and_violations():
    p = parse_prediction("answer: " + final_json(0.8))
    assert p.confidence == 0.8 and len(p.binary) == 16
    with pytest.raises(SchemaViolationError) as e:
        parse_prediction(final_json(1.3))
    assert e.value.fields == ["confidence"]
    obj = json.loads(final_json())
    del obj["binary"]["lonely"]
    obj["continuous"]["er_desire"] = 11
    with pytest.raises(SchemaViolationError) as e:
        parse_prediction(json.dumps(obj))
    assert e.value.fields == ["binary.lonely", "continuous.er_desire"]
    with pytest.raises(PredictionFormatError):
        parse_prediction("I think they are fine.")


# -- agentic loop --------------------------------------------------------------


def test_four_tools_then_final_is_five_turns(ctx, index):
    replies = [
        call("get_daily_summary"),
        call("get_behavioral_timeline", segment_hours=2),
        call("compare_to_baseline", metric="walking_min"),
        call("find_peer_cases", mode="sensing"),
        final(),
    ]
    pred = predict_agentic(ctx, SENSE, Toolbox(ctx, index), None, ScriptedBackend(ReplayPolicy(replies)))
    assert pred.turns_used == 5 and not pred.forced_finalize
    assert [c.tool_name for c in pred.tool_trace] == [
        "get_daily_summary",
        "get_behavioral_timeline",
        "compare_to_baseline",
        "find_peer_cases",
    ]


def test_looping_policy_is_forced_at_turn_cap(ctx):
    for seed in range(5):
        pred = predict_agentic(ctx, SENSE, Toolbox(ctx), None, ScriptedBackend(LoopingPolicy(), seed=seed))
        assert pred.turns_used == MAX_TURNS and pred.forced_finalize
        finalize = [m for m in pred.transcript if m.get("control") == "finalize"]
        assert len(finalize) == 1


def test_tool_errors_are_fed_back(ctx):
    replies = [call("query_sensing", modality="motion", hours_before=99, duration_hours=1), call("nope"), final()]
    pred = predict_agentic(ctx, SENSE, Toolbox(ctx), None, ScriptedBackend(ReplayPolicy(replies)))
    errors = [m for m in pred.transcript if m.get("is_error")]
    assert len(errors) == 2 and "invalid_argument" in errors[0]["content"]
    assert [c.response_digest for c in pred.tool_trace] == ["error:invalid_argument", "error:unknown_tool"]


def test_one_parse_retry_then_error(ctx):
    pred = predict_agentic(
        ctx, SENSE, Toolbox(ctx), None, ScriptedBackend(ReplayPolicy([Reply("final", "not json"), final()]))
    )
    assert pred.parse_retries == 1
    assert any(m.get("control") == "reemit" for m in pred.transcript)
    bad = ScriptedBackend(ReplayPolicy([Reply("final", "nope"), Reply("final", "still nope")]))
    with pytest.raises(PredictionFormatError):
        predict_agentic(ctx, SENSE, Toolbox(ctx), None, bad)


class Flaky:
    def __init__(self, failures, inner):
        self.failures = failures
        self.inner = inner
        self.calls = 0

    def complete(self, messages, tools):
        self.calls += 1
        if self.calls <= self.failures:
            raise BackendError("503")
        return self.inner.complete(messages, tools)


def test_backend_errors_retried_twice(ctx):
    ok = Flaky(2, ScriptedBackend(ReplayPolicy([final()])))
    assert predict_agentic(ctx, SENSE, Toolbox(ctx), None, ok).turns_used == 1
    dead = Flaky(3, ScriptedBackend(ReplayPolicy([final()])))
    with pytest.raises(BackendError):
        predict_agentic(ctx, SENSE, Toolbox(ctx), None, dead)


def test_sensing_only_prompt_has_no_diary(small_store):
    uid = small_store.user_ids[0]
    entry = next(e for e in small_store.entries(uid) if e.diary)
    c = open_context(small_store, uid, entry.timestamp)
    text = json.dumps(build_agentic_messages(c, SENSE, None))
    assert entry.diary not in text
    assert entry.diary in json.dumps(build_agentic_messages(c, MULTI, None))


def test_structured_section_order(ctx, index):
    msgs = build_structured_messages(ctx, RunCondition("structured", "multimodal"), index, None)
    body = msgs[1]["content"]
    heads = ["## Profile", "## Sensing summary", "## Diary", "## Session memory", "## Peer calibration", "## Output"]
    pos = [body.index(h) for h in heads]
    assert pos == sorted(pos)
    diary_only = build_structured_messages(ctx, RunCondition("structured", "diary_only"), index, None)[1]["content"]
    assert "## Sensing summary" not in diary_only
    sense = build_structured_messages(ctx, RunCondition("structured", "sensing_only"), index, None)[1]["content"]
    assert "## Diary" not in sense


def test_prompts_never_carry_current_or_future_scores(small_store, index):
    uid = small_store.user_ids[0]
    entries = small_store.entries(uid)
    c = open_context(small_store, uid, entries[12].timestamp)
    later = [e.diary for e in entries[13:] if e.diary and e.diary != entries[12].diary]
    for cond in FACTORIAL:
        if cond.architecture == "structured":
            msgs = build_structured_messages(c, cond, index, None)
        else:
            msgs = predict_agentic(c, cond, Toolbox(c, index), None, ScriptedBackend(ReferenceRulePolicy())).transcript
        text = json.dumps(msgs)
        assert "binary_targets" not in json.dumps([m.get("content") for m in msgs if m["role"] != "tool"])
        for d in later:
            assert d not in text


def test_structured_prediction_is_one_turn(ctx, index):
    pred = predict_structured(
        ctx, RunCondition("structured", "sensing_only"), index, None, ScriptedBackend(StructuredBaselinePolicy())
    )
    assert pred.turns_used == 1 and pred.tool_trace == []


# -- reflection ----------------------------------------------------------------


def test_reflection_sanitize_then_fallback(ctx):
    pred = parse_prediction(final_json())
    leaky = ScriptedBackend(ReplayPolicy([Reply("final", "NA score was 31."), Reply("final", "clean now")]))
    assert reflect(ctx, pred, True, leaky) == "clean now"
    always = ScriptedBackend(ReplayPolicy([Reply("final", "PA_State was true")]))
    text = reflect(ctx, pred, False, always)
    assert "not receptive" in text and find_leak(text) is None
    long = ScriptedBackend(ReplayPolicy([Reply("final", "walked " * 400)]))
    assert len(reflect(ctx, pred, True, long)) <= 800


# -- scheduling ----------------------------------------------------------------


def test_user_sequence_reflects_in_order_and_resumes(small_store):
    uid = small_store.user_ids[1]
    mem = MemoryLog()
    backend = ScriptedBackend(ReferenceRulePolicy())
    seen = []

    def check(u, i, pred):
        # memory visible to prediction i holds exactly reflections 0..i-1
        seen.append(i)

    first = run_user_sequence(small_store, uid, SENSE, backend, memory=mem, on_prediction=check)
    n = len(small_store.entries(uid))
    assert seen == list(range(n)) and [r.entry_index for r in mem.records(uid)] == list(range(n))
    assert all(p.turns_used <= MAX_TURNS for p in first.predictions)
    again = run_user_sequence(small_store, uid, SENSE, backend, memory=mem)
    assert again.first_index == n and again.predictions == []


def test_memory_grows_only_from_earlier_entries(small_store):
    uid = small_store.user_ids[2]
    mem = MemoryLog()
    docs = []

    class Spy:
        def complete(self, messages, tools):
            if messages[0].get("task") == "agentic" and len(messages) == 2:
                docs.append(messages[0]["content"])
            return ScriptedBackend(ReferenceRulePolicy()).complete(messages, tools)

    run_user_sequence(small_store, uid, SENSE, Spy(), memory=mem)
    assert "Session memory" not in docs[0]
    assert docs[3].count("Reflection on EMA entry") == 3
    assert "entry 3 (" in docs[3] and "entry 4 (" not in docs[3]


def test_run_users_respects_concurrency_limit(small_store):
    counter = InFlightCounter()

    class Slow:
        def complete(self, messages, tools):
            with counter:
                time.sleep(0.002)
            return ScriptedBackend(StructuredBaselinePolicy()).complete(messages, tools)

    users = small_store.user_ids
    runs = run_users(small_store, users, RunCondition("structured", "sensing_only"), Slow(), concurrency_limit=2)
    assert set(runs) == set(users)
    assert 1 <= counter.peak <= 2
    with pytest.raises(ValueError):
        run_users(small_store, users, SENSE, Slow(), concurrency_limit=0)


def test_scripted_backend_is_deterministic(ctx, index):
    a = predict_agentic(ctx, SENSE, Toolbox(ctx), None, ScriptedBackend(LoopingPolicy(), seed=3))
    b = predict_agentic(ctx, SENSE, Toolbox(ctx), None, ScriptedBackend(LoopingPolicy(), seed=3))
    assert a.to_json() == b.to_json()
