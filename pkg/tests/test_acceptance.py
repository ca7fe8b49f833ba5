"""End-to-end acceptance checks, one test per criterion.

Each test records a PASS/FAIL line; ``conftest.py`` prints them together
at the end of the session. Run ``python tests/test_acceptance.py`` for the
same lines without pytest's other output.
"""

from __future__ import annotations

import hashlib
import json
import math
import random
import re
import sys
import time
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

import oracles  # noqa: E402
from factories import constructed_pair, rows_from_arrays  # noqa: E402

from pulse.agent.backends import Reply, ScriptedBackend  # noqa: E402
from pulse.agent.policies import LoopingPolicy, ReferenceRulePolicy, StructuredBaselinePolicy  # noqa: E402
from pulse.agent.runtime import MAX_TURNS, RunCondition, run_user_sequence  # noqa: E402
from pulse.dataset import dumps  # noqa: E402
from pulse.evalkit import metrics, stats  # noqa: E402
from pulse.evalkit.factorial import fold_indices, run_factorial  # noqa: E402
from pulse.memory import MemoryLog, find_leak  # noqa: E402
from pulse.model import BINARY_TARGETS, format_time, parse_time  # noqa: E402
from pulse.retrieval import build_peer_index  # noqa: E402
from pulse.server import StdioToolClient, ToolServer  # noqa: E402
from pulse.synth import GeneratorConfig, generate_cohort  # noqa: E402
from pulse.timestore import ingest, open_context  # noqa: E402
from pulse.tools import TOOL_NAMES, ToolError, Toolbox, tool_list  # noqa: E402

RESULTS: dict[int, str] = {}
ROOT = Path(__file__).resolve().parents[1]


def record(n: int, ok: bool, detail: str) -> None:
    line = f"[criterion {n}] {'PASS' if ok else 'FAIL'}: {detail}"
    RESULTS[n] = line
    print(line)


@pytest.fixture(scope="module")
def cohort():
    return generate_cohort(GeneratorConfig(seed=21, n_users=10, n_days=14))


@pytest.fixture(scope="module")
def store(cohort):
    return ingest(cohort.profiles, cohort.events, cohort.entries)


@pytest.fixture(scope="module")
def folds(store):
    return fold_indices(store, store.user_ids, 5, 0)


# -- random tool arguments ------------------------------------------------------

_SCHEMAS = {t["name"]: t["inputSchema"] for t in tool_list()}
_WORDS = "tired work walk commute friends rain coffee calm stress sleep late gym family quiet busy".split()


def random_args(rng: random.Random, name: str, invalid_rate: float = 0.1) -> dict:
    """Arguments drawn from the tool's input schema, occasionally out of range."""
    schema = _SCHEMAS[name]
    args = {}
    for key, prop in schema["properties"].items():
        required = key in schema.get("required", [])
        if not required and rng.random() < 0.3:
            continue
        if "enum" in prop:
            args[key] = rng.choice(prop["enum"])
        elif prop["type"] == "integer":
            lo = prop.get("minimum", 1)
            hi = prop.get("maximum", 12)
            args[key] = rng.randint(lo, hi)
            if rng.random() < invalid_rate:
                args[key] = rng.choice([lo - 1, hi + 1]) if "maximum" in prop else lo - rng.randint(1, 3)
        elif key == "date":
            args[key] = f"2025-0{rng.randint(1, 3)}-{rng.randint(1, 28):02d}"
        elif key == "query_text":
            args[key] = " ".join(rng.choice(_WORDS) for _ in range(rng.randint(1, 6)))
    if name == "find_peer_cases" and args.get("mode") == "text" and "query_text" not in args:
        args["query_text"] = rng.choice(_WORDS)
    return args


def outcome(box, name, args):
    try:
        return ("ok", box.call(name, args).to_json())
    except ToolError as exc:
        return ("error", type(exc).__name__, str(exc))


_ISO = re.compile(r"^\d{4}-\d\d-\d\dT\d\d:\d\d:\d\d")


def timestamps(obj):
    if isinstance(obj, dict):
        for k, v in obj.items():
            if isinstance(v, str) and _ISO.match(v):
                yield k, parse_time(v)
            else:
                yield from timestamps(v)
    elif isinstance(obj, list):
        for v in obj:
            yield from timestamps(v)


# -- 1: temporal boundary fuzz --------------------------------------------------


def test_criterion_1_boundary_fuzz(cohort, store, folds):
    """Every tool answer equals the answer from a store that never held the future."""
    t0 = time.perf_counter()
    rng = random.Random(1)
    by_user: dict[str, list] = {}
    for ev in cohort.events:
        by_user.setdefault(ev.user_id, []).append(ev)
    profiles = {p.user_id: p for p in cohort.profiles}
    calls = mismatches = late = 0
    n_contexts, per_context = 400, 25
    for _ in range(n_contexts):
        uid = rng.choice(store.user_ids)
        entries = store.entries(uid)
        ema = rng.choice(entries).timestamp
        past = ingest(
            [profiles[uid]],
            oracles.visible(by_user[uid], ema),
            [e for e in entries if e.timestamp <= ema],
        )
        full_box = Toolbox(open_context(store, uid, ema), folds[uid])
        past_box = Toolbox(open_context(past, uid, ema), folds[uid])
        for _ in range(per_context):
            name = rng.choice(TOOL_NAMES)
            args = random_args(rng, name)
            got = outcome(full_box, name, args)
            calls += 1
            if got != outcome(past_box, name, args):
                mismatches += 1
            if got[0] == "ok":
                for key, ts in timestamps(got[1]["structured"]):
                    if ts > ema or (ts == ema and key == "timestamp"):
                        late += 1
    elapsed = time.perf_counter() - t0
    ok = calls >= 10_000 and mismatches == 0 and late == 0 and elapsed < 60
    record(1, ok, f"{calls} tool calls over {n_contexts} contexts, {mismatches} differ from the "
           f"past-only store, {late} timestamps at/after the EMA, {elapsed:.1f}s")
    assert ok


# -- 2: retrieval exclusion and exhaustive ranking -----------------------------


def _same_ranking(lib, expected, oracle_score):
    """Positions agree unless the oracle scores are tied to 1e-12."""
    if len(lib) != len(expected):
        return False
    for (ref, sim), (eref, esim) in zip(lib, expected):
        if abs(sim - esim) > 1e-9:
            return False
        if ref != eref and abs(oracle_score[ref] - esim) > 1e-12:
            return False
    return True


def test_criterion_2_retrieval_exclusion(store):
    t0 = time.perf_counter()
    users = store.user_ids
    index = build_peer_index(store, users)  # every user, including the queriers
    vec = oracles.dense_tfidf([r.diary for r in index.rows if r.diary])
    text_cands = [(r.entry_ref, r.user_id, vec(r.diary)) for r in index.rows if r.diary]
    sense_cands = [(r.entry_ref, r.user_id, r.fingerprint) for r in index.rows if r.fingerprint is not None]
    diaries = [r.diary for r in index.rows if r.diary]
    rng = random.Random(2)
    queries = self_hits = wrong = 0
    while queries < 1000:
        uid = rng.choice(users)
        entry = rng.choice(store.entries(uid))
        box = Toolbox(open_context(store, uid, entry.timestamp), index)
        k = rng.randint(1, 12)
        if rng.random() < 0.5:
            text = rng.choice(diaries) if rng.random() < 0.6 else " ".join(rng.sample(_WORDS, 3))
            resp = box.call("find_peer_cases", {"mode": "text", "query_text": text, "k": k})
            qv, cands = vec(text), text_cands
        else:
            resp = box.call("find_peer_cases", {"mode": "sensing", "k": k})
            ctx = box.ctx
            agg = ctx.daily_aggregates(ctx.ema_date)
            if not agg.any_available:
                continue
            qv, cands = index.embed_day(agg), sense_cands
        queries += 1
        got = [(m["entry_ref"], m["similarity"]) for m in resp.structured["matches"]]
        self_hits += sum(ref.startswith(uid + ":") for ref, _ in got)
        expected = oracles.exhaustive_rank(cands, qv, uid, k)
        scores = {ref: oracles.dense_cos(qv, v) for ref, u, v in cands if u != uid}
        if not _same_ranking(got, [(r, s) for s, r in expected], scores):
            wrong += 1
    elapsed = time.perf_counter() - t0
    ok = self_hits == 0 and wrong == 0 and elapsed < 60
    record(2, ok, f"{queries} peer queries on an index of all {len(users)} users: "
           f"{self_hits} self results, {wrong} rankings differ from exhaustive scan, {elapsed:.1f}s")
    assert ok


def test_fingerprints_match_independent_normalization(store):
    """The sensing oracle above trusts stored fingerprints; check them here."""
    from pulse.retrieval import entry_day_features

    index = build_peer_index(store, store.user_ids[:4])
    feats = [entry_day_features(store, r.user_id, store.entries(r.user_id)[int(r.entry_ref.split(":")[1])])
             for r in index.rows]
    cols = list(zip(*[f for f in feats if f is not None]))
    for f, r in zip(feats, index.rows):
        if f is None:
            assert r.fingerprint is None
            continue
        for j, v in enumerate(f):
            vals = [x for x in cols[j] if x is not None]
            if v is None or not vals:
                assert r.fingerprint[j] == 0.0
                continue
            m = sum(vals) / len(vals)
            s = math.sqrt(sum((x - m) ** 2 for x in vals) / len(vals))
            assert r.fingerprint[j] == pytest.approx((v - m) / s if s else 0.0, abs=1e-9)


# -- 3: metric oracles ------------------------------------------------------------


def test_criterion_3_metric_oracles():
    rng = np.random.default_rng(3)
    worst = {k: 0.0 for k in ("ba", "f1", "mae", "pearson", "mwu_u", "rank_biserial")}
    n_fix = 150
    for _ in range(n_fix):
        n = int(rng.integers(2, 60))
        act = rng.random(n) < rng.uniform(0.1, 0.9)
        pred = rng.random(n) < rng.uniform(0.1, 0.9)
        if act.all() or not act.any():
            act[0] = not act[0]
        worst["ba"] = max(worst["ba"], abs(metrics.balanced_accuracy(pred, act) - oracles.ba(pred, act)))
        worst["f1"] = max(worst["f1"], abs(metrics.macro_f1(pred, act) - oracles.macro_f1(pred, act)))
        x = np.round(rng.normal(20, 6, n), int(rng.integers(0, 3)))
        y = np.round(x * rng.uniform(-1, 1) + rng.normal(0, 4, n), 1)
        cm = metrics.continuous_metrics(list(x), list(y))
        worst["mae"] = max(worst["mae"], abs(cm.mae - oracles.mae(x, y)))
        op = oracles.pearson(list(x), list(y))
        lp = metrics.pearson(list(x), list(y))
        worst["pearson"] = max(worst["pearson"], 0.0 if lp is None and op is None else abs(lp - op))
        a = list(rng.integers(0, 8, int(rng.integers(1, 30))).astype(float))
        b = list(rng.integers(0, 8, int(rng.integers(1, 30))).astype(float))
        mw = stats.mann_whitney_u(a, b)
        worst["mwu_u"] = max(worst["mwu_u"], abs(mw.u - oracles.mann_whitney_u1(a, b)))
        worst["rank_biserial"] = max(worst["rank_biserial"], abs(mw.rank_biserial_r - oracles.rank_biserial(a, b)))

    # bootstrap means against exhaustive enumeration, n <= 8
    boot_ok = []
    for seed, n in enumerate((5, 6, 7, 8)):
        r = np.random.default_rng(100 + seed)
        act = np.array([True, False] * (n // 2) + [True] * (n % 2))
        pred = r.random(n) < 0.5
        pairs = sorted(zip(pred.tolist(), act.tolist()))
        p = np.array([x for x, _ in pairs])
        a = np.array([y for _, y in pairs])
        for lib, ref in ((metrics.balanced_accuracy, oracles.ba), (metrics.macro_f1, oracles.macro_f1)):
            exact_mean, exact_var = oracles.exact_bootstrap_moments(pairs, ref)
            vals, _ = stats._replicates(p, a, lib, 10_000, seed)
            boot_ok.append(abs(vals.mean() - exact_mean) <= 3 * math.sqrt(exact_var / 10_000))
    ok = all(v <= 1e-9 for v in worst.values()) and all(boot_ok)
    detail = ", ".join(f"{k} {v:.1e}" for k, v in worst.items())
    record(3, ok, f"{n_fix} fixtures per metric, max error {detail}; "
           f"bootstrap means within 3 sigma of exact enumeration: {sum(boot_ok)}/{len(boot_ok)}")
    assert ok


# -- 4: paired bootstrap significance -------------------------------------------


def test_criterion_4_paired_bootstrap():
    t0 = time.perf_counter()
    pa, pb, act = constructed_pair(n=4000, ba_a=0.72, ba_b=0.60, seed=0)
    same = stats.bootstrap_diff_test(rows_from_arrays("A", pa, act), rows_from_arrays("A", pa, act), "INT_availability")
    diff = stats.bootstrap_diff_test(rows_from_arrays("A", pa, act), rows_from_arrays("B", pb, act), "INT_availability")
    elapsed = time.perf_counter() - t0
    ok = same.p_one_sided > 0.99 and abs(diff.delta - 0.12) < 1e-9 and diff.p_one_sided < 1e-4 and elapsed < 30
    record(4, ok, f"identical sets p={same.p_one_sided:.4f}; constructed delta={diff.delta:+.3f} on n=4000 "
           f"p={diff.p_one_sided:.6f}; {elapsed:.1f}s")
    assert ok


# -- 5: the headline comparison on the default cohort ---------------------------


def test_criterion_5_default_cohort_comparison():
    t0 = time.perf_counter()
    c = generate_cohort(GeneratorConfig())
    full = ingest(c.profiles, c.events, c.entries)
    auto, struct = RunCondition.parse("Auto-Sense"), RunCondition.parse("Struct-Sense")
    result = run_factorial(
        full,
        [auto, struct],
        {auto.name: ScriptedBackend(ReferenceRulePolicy()), struct.name: ScriptedBackend(StructuredBaselinePolicy())},
        seed=0,
        folds=5,
    )
    rep = result.report
    ba_auto = rep["conditions"][auto.name]["targets"]["INT_availability"]["ba"]
    cmp = next(x for x in rep["comparisons"] if x["target"] == "INT_availability")
    elapsed = time.perf_counter() - t0
    ok = (cmp["a"], cmp["b"]) == (auto.name, struct.name)
    ok = ok and ba_auto >= 0.85 and cmp["delta"] >= 0.10 and cmp["p_one_sided"] < 0.01 and elapsed < 600
    record(5, ok, f"{len(full.user_ids)} users, {cmp['n']} paired EMAs: Auto-Sense BA={ba_auto:.3f}, "
           f"delta vs Struct-Sense={cmp['delta']:+.3f}, p={cmp['p_one_sided']:.5f}, {elapsed:.0f}s")
    assert ok


# -- 6: turn cap and the memory firewall ----------------------------------------

_BENIGN = [
    "Late screen activity was the clearest signal",
    "The timeline view was more useful than the raw events",
    "Comparing against the baseline helped",
    "Travel right before the survey mattered",
    "Next time check sleep first",
    "Peer cases were only loosely similar",
    "The diary was vague so sensing carried most of the weight",
]


def _leak_fragments(rng: random.Random, entry) -> list[str]:
    pa, na, er = entry.pa_score, entry.na_score, entry.er_desire_score
    bt = entry.binary_targets
    t = rng.choice(BINARY_TARGETS)
    word = t.lower().replace("_", rng.choice(["_", " ", "-", ""]))
    num = lambda v: rng.choice([f"{v:.0f}", f"{v:.1f}", f"{v:.2f}", str(v)])  # noqa: E731
    val = str(bt[t]).lower()
    frags = [
        f"PA score was {num(pa)}",
        f"NA came in at {num(na)}",
        f"they scored {num(na)} on negative affect",
        f"positive affect, judging by the long walk and the quiet evening, was around {num(pa)}",
        f"ER desire {num(er)}",
        f"er_desire_score: {num(er)}",
        f"{word} = {val}",
        f"{t}: {val}",
        f"{t.upper()} was {'elevated' if bt[t] else 'not elevated'}",
        f"{word} was {rng.choice(['yes', 'no', 'true', 'false'])}",
        json.dumps({"pa": pa, "na": na}),
        json.dumps({t: bt[t]}),
        "the ground truth said otherwise",
        "the actual scores were higher than predicted",
        f"mood around {num(pa)}",
        f"{num(na)} for NA",
        f"Availability {'true' if bt['INT_availability'] else 'false'}",
    ]
    return rng.sample(frags, rng.randint(1, 3))


class AdversarialReflections:
    """Predictions from a real policy; every reflection attempt tries to leak.

    Structured predictions take one backend call each, so counting them
    tells us which entry the following reflection is about.
    """

    def __init__(self, entries, seed):
        self.inner = ScriptedBackend(StructuredBaselinePolicy())
        self.entries = entries
        self.rng = random.Random(seed)
        self.injected: list[str] = []
        self.i = -1

    def complete(self, messages, tools):
        if messages[0].get("task") != "reflection":
            self.i += 1
            return self.inner.complete(messages, tools)
        leaks = _leak_fragments(self.rng, self.entries[self.i])
        self.injected.extend(leaks)
        parts = self.rng.sample(_BENIGN, 2) + leaks
        self.rng.shuffle(parts)
        return Reply("final", ". ".join(parts) + ".")


def test_criterion_6_turn_cap_and_memory_firewall(store):
    users = store.user_ids
    turns = []
    sense = RunCondition.parse("Auto-Sense")
    for uid in users[:3]:
        run = run_user_sequence(store, uid, sense, ScriptedBackend(LoopingPolicy(), seed=6))
        turns += [p.turns_used for p in run.predictions]
    cap_ok = max(turns) <= MAX_TURNS and all(t == MAX_TURNS for t in turns)

    c = generate_cohort(GeneratorConfig(seed=6, n_users=26, n_days=14))
    fuzz = ingest(c.profiles, c.events, c.entries)
    memory = MemoryLog()
    cond = RunCondition.parse("Struct-Sense")
    injected: list[str] = []
    for n, uid in enumerate(fuzz.user_ids):
        backend = AdversarialReflections(fuzz.entries(uid), seed=n)
        run_user_sequence(fuzz, uid, cond, backend, memory=memory)
        injected += backend.injected
    bodies = [r.text for uid in fuzz.user_ids for r in memory.records(uid)]
    digits = sum(bool(re.search(r"\d", b)) for b in bodies)
    probes = [re.compile(r"(?<!\w)" + re.escape(f) + r"(?!\w)", re.IGNORECASE) for f in set(injected)]
    fragments = sum(bool(p.search(b)) for b in bodies for p in probes)
    flagged = sum(find_leak(b) is not None for b in bodies)
    ok = cap_ok and len(bodies) >= 1000 and digits == 0 and fragments == 0 and flagged == 0
    record(6, ok, f"{len(turns)} looping predictions, max {max(turns)} turns; "
           f"{len(bodies)} adversarial reflections carrying {len(injected)} leak fragments: "
           f"{fragments} reached memory, {digits} memory texts contain digits")
    assert ok


# -- 7: wire protocol ---------------------------------------------------------------


def test_criterion_7_wire_protocol(store, folds, tmp_path):
    rng = random.Random(7)
    users = store.user_ids
    on_disk = json.loads((ROOT / "docs" / "tool_schemas.json").read_text())
    calls = identical = 0
    rid = 0
    for _ in range(50):
        uid = rng.choice(users)
        ema = rng.choice(store.entries(uid)).timestamp
        server = ToolServer(store=store, peer_index=folds[uid])
        server.handle_line(dumps({"jsonrpc": "2.0", "id": 0, "method": "initialize",
                                  "params": {"user_id": uid, "ema_timestamp": format_time(ema)}}))
        listed = json.loads(server.handle_line(dumps({"jsonrpc": "2.0", "id": 0, "method": "tools/list"})))
        schemas_ok = listed["result"]["tools"] == tool_list() and len(listed["result"]["tools"]) == 8
        box = Toolbox(open_context(store, uid, ema), folds[uid])
        for _ in range(10):
            rid += 1
            name = rng.choice(TOOL_NAMES)
            args = random_args(rng, name, invalid_rate=0.2)
            line = server.handle_line(dumps({"jsonrpc": "2.0", "id": rid, "method": "tools/call",
                                             "params": {"name": name, "arguments": args}}))
            try:
                expected = dumps({"jsonrpc": "2.0", "id": rid, "result": box.call(name, args).to_json()})
            except ToolError as exc:
                got = json.loads(line)
                expected = line if got.get("error", {}).get("data", {}).get("tool_error") == exc.code else None
            calls += 1
            identical += line == expected
    schemas_ok = schemas_ok and [{k: v for k, v in t.items() if k != "responseSchema"}
                                 for t in on_disk["tools"]] == tool_list()

    # a slice of the same traffic through a real subprocess
    data = tmp_path / "data"
    from pulse.synth import write_cohort

    small = generate_cohort(GeneratorConfig(seed=21, n_users=3, n_days=6))
    write_cohort(data, small)
    sstore = ingest(small.profiles, small.events, small.entries)
    uid = sstore.user_ids[0]
    ema = sstore.entries(uid)[-1].timestamp
    box = Toolbox(open_context(sstore, uid, ema))
    sub_calls = sub_identical = 0
    with StdioToolClient(data, uid, format_time(ema)) as client:
        for _ in range(40):
            name = rng.choice(TOOL_NAMES[:7])
            args = random_args(rng, name, invalid_rate=0.0)
            resp = client.request_raw("tools/call", {"name": name, "arguments": args})
            sub_calls += 1
            sub_identical += dumps(resp["result"]) == dumps(box.call(name, args).to_json())
        # exact range rejection on the wire
        bounds_ok = True
        for tool, arg, lo, hi, base in [
            ("query_sensing", "hours_before", 1, 48, {"modality": "motion", "duration_hours": 1}),
            ("query_sensing", "duration_hours", 1, 24, {"modality": "motion", "hours_before": 48}),
            ("query_raw_events", "hours_before", 1, 48, {"modality": "screen", "duration_hours": 1}),
            ("get_behavioral_timeline", "segment_hours", 1, 6, {}),
            ("get_receptivity_history", "lookback_days", 1, 14, {}),
            ("get_daily_summary", "lookback_days", 1, 7, {}),
        ]:
            for v, accept in ((lo - 1, False), (lo, True), (hi, True), (hi + 1, False)):
                r = client.request_raw("tools/call", {"name": tool, "arguments": {**base, arg: v}})
                bounds_ok &= ("result" in r) == accept and (accept or r["error"]["code"] == -32602)
    total = calls + sub_calls
    ok = schemas_ok and bounds_ok and identical == calls and sub_identical == sub_calls and total >= 500
    record(7, ok, f"8 schemas served and published; {identical}/{calls} in-memory and "
           f"{sub_identical}/{sub_calls} subprocess tool calls byte-identical to in-process; "
           f"range rejections exact: {bounds_ok}")
    assert ok


# -- 8: determinism ------------------------------------------------------------------


def _pipeline(root: Path) -> dict[str, str]:
    from pulse.cli import main

    data, out = root / "cohort", root
    steps = [
        ["synth", "--seed", "5", "--users", "6", "--days", "8", "--out", str(data)],
        ["predict", "--data", str(data), "--arch", "agentic", "--modality", "multimodal",
         "--seed", "5", "--folds", "3", "--out", str(out / "auto.jsonl")],
        ["predict", "--data", str(data), "--arch", "structured", "--modality", "multimodal",
         "--policy", "baseline", "--seed", "5", "--folds", "3", "--out", str(out / "struct.jsonl")],
        ["evaluate", "--rows", str(out / "auto.jsonl"), str(out / "struct.jsonl"),
         "--B", "2000", "--seed", "5", "--out", str(out / "report.json")],
        ["report", "--report", str(out / "report.json"), "--out", str(out / "report.md")],
    ]
    for argv in steps:
        if main(argv) != 0:
            raise RuntimeError(f"step failed: {argv[0]}")
    files = sorted(p for p in root.rglob("*") if p.is_file())
    return {str(p.relative_to(root)): hashlib.sha256(p.read_bytes()).hexdigest() for p in files}


def test_criterion_8_determinism(tmp_path, capsys):
    a = _pipeline(tmp_path / "a")
    b = _pipeline(tmp_path / "b")
    capsys.readouterr()
    differ = sorted(k for k in a.keys() | b.keys() if a.get(k) != b.get(k))
    ok = not differ and len(a) >= 8
    record(8, ok, f"synth, predict, evaluate and report run twice: {len(a)} artifacts, "
           f"{len(differ)} checksums differ {differ if differ else ''}".rstrip())
    assert ok


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q", "-p", "no:cacheprovider"]))
