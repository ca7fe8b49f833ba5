from datetime import datetime, timedelta, timezone

import pytest
from hypothesis import given
from hypothesis import strategies as st

from pulse.memory import (
    TRUNCATION_MARK,
    LeakError,
    MemoryLog,
    OrderError,
    ReflectionRecord,
    find_leak,
    receptivity_outcome,
    render_memory,
)
from pulse.model import BINARY_TARGETS, EmaEntry

T0 = datetime(2025, 5, 1, 12, tzinfo=timezone.utc)


def rec(i, text="Checked the timeline; screen use was light.", receptive=False, uid="u"):
    return ReflectionRecord(uid, i, T0 + timedelta(hours=i), text, receptive)


@pytest.mark.parametrize(
    "text",
    [
        "PA score was 18",
        "scored 31 on negative affect",
        "NA_State was elevated",
        '{"PA_State": true}',
        "pa_score: 18",
        "er_desire_score was 4",
        "lonely = true",
        "worried was yes",
        "NA-State true",
        "SAD was not elevated",
        "NA, judging by the long commute and the rain, was around 31",
        "they scored 18.5 after a quiet evening on PA",
        "the ground truth said otherwise",
        "mood score 4",
        "Positive affect came in around 22.5",
    ],
)
def test_leaks_detected(text):
    assert find_leak(text) is not None
    with pytest.raises(LeakError):
        MemoryLog().append(rec(0, text))


@pytest.mark.parametrize(
    "text",
    [
        "Relied on get_daily_summary, find_peer_cases; confidence was high. The person was not receptive at this survey.",
        "Driving in the hour before the survey was the decisive signal.",
        "Screen activity 10 minutes before the prompt; timeline was informative.",
    ],
)
def test_benign_text_passes(text):
    assert find_leak(text) is None


def test_order_enforced_and_whitespace_normalised():
    log = MemoryLog()
    log.append(rec(3, "  two   spaces\nhere "))
    assert log.records("u")[0].text == "two spaces here"
    with pytest.raises(OrderError):
        log.append(rec(3))
    with pytest.raises(OrderError):
        log.append(rec(1))
    log.append(rec(1, uid="other"))
    assert log.last_index("u") == 3 and log.last_index("other") == 1


def test_render_newest_first_within_budget():
    log = MemoryLog()
    for i in range(10):
        log.append(rec(i, f"Reflection number {chr(97 + i)}.", receptive=i % 2 == 0))
    doc = render_memory(log, "u", budget_chars=200)
    assert doc.char_count <= 200
    assert doc.records_total == 10 and 0 < doc.records_included < 10
    assert doc.rendered.index("entry 10") < doc.rendered.index("entry 9")
    assert render_memory(log, "nobody").rendered == ""
    with pytest.raises(ValueError):
        render_memory(log, "u", budget_chars=0)


def test_oversized_single_record_is_cut_and_marked():
    log = MemoryLog().append(rec(0, "long " * 200))
    doc = render_memory(log, "u", budget_chars=300)
    assert doc.rendered.endswith(TRUNCATION_MARK)
    assert doc.char_count <= 300 and doc.records_included == 1


def test_persistence(tmp_path):
    log = MemoryLog(tmp_path)
    log.append(rec(0)).append(rec(2))
    again = MemoryLog(tmp_path)
    assert again.records("u") == log.records("u")
    assert again.last_index("u") == 2


def test_receptivity_outcome():
    labels = {t: True for t in BINARY_TARGETS}
    unavailable = {**labels, "INT_availability": False}
    es = [
        EmaEntry("u", T0, 1, 1, 3.0, labels),
        EmaEntry("u", T0 + timedelta(hours=1), 1, 1, 5.0, labels),
        EmaEntry("u", T0 + timedelta(hours=2), 1, 1, 7.0, unavailable),
        EmaEntry("u", T0 + timedelta(hours=3), 1, 1, 6.0, labels),
    ]
    # first entry compares with the median (5.5)
    assert [receptivity_outcome(es, i) for i in range(4)] == [False, True, False, False]


safe_words = st.sampled_from(["timeline", "screen", "walked", "quiet", "evening", "peer", "cases", "helped", "driving"])


@given(st.lists(st.lists(safe_words, min_size=1, max_size=30).map(" ".join), min_size=1, max_size=20), st.integers(40, 2000))
def test_render_respects_budget(texts, budget):
    log = MemoryLog()
    for i, t in enumerate(texts):
        log.append(rec(i, t))
    doc = render_memory(log, "u", budget_chars=budget)
    assert doc.char_count <= budget
    assert find_leak(doc.rendered) is None
