"""Factorial runs over conditions, and the report built from their rows."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Any, Callable, Mapping, Sequence

import jsonschema
import numpy as np

from pulse.agent.backends import InferenceBackend
from pulse.agent.runtime import RunCondition, run_users
from pulse.evalkit.analytics import DEFAULT_EDGES, confidence_bins, tool_usage_stats
from pulse.evalkit.metrics import balanced_accuracy, continuous_metrics, macro_f1
from pulse.evalkit.rows import EvalRow, make_row, sort_rows
from pulse.evalkit.stats import DEFAULT_B, bootstrap_ci, paired_diff
from pulse.memory import MemoryLog
from pulse.model import BINARY_TARGETS, CONTINUOUS_SCORES, FOCUS_TARGETS
from pulse.retrieval import PeerIndex, build_peer_index
from pulse.timestore import Store

log = logging.getLogger(__name__)

REPORT_FORMAT = "pulse-factorial-report"


def assign_folds(users: Sequence[str], folds: int, seed: int) -> dict[str, int]:
    """Shuffle users with ``seed`` and deal them round-robin into folds."""
    if folds < 2:
        raise ValueError("need at least 2 folds")
    order = sorted(users)
    perm = np.random.default_rng(seed).permutation(len(order))
    return {order[j]: k % folds for k, j in enumerate(perm)}


def fold_indices(store: Store, users: Sequence[str], folds: int, seed: int) -> dict[str, PeerIndex]:
    """Peer index per evaluation user, built only from users outside its fold."""
    fold_of = assign_folds(users, folds, seed)
    cache: dict = {}
    out: dict[str, PeerIndex] = {}
    for k in range(folds):
        held = [u for u, f in fold_of.items() if f == k]
        if not held:
            continue
        train = [u for u in store.user_ids if fold_of.get(u) != k]
        index = build_peer_index(store, train, eval_users=held, feature_cache=cache)
        for u in held:
            out[u] = index
    return out


def default_comparisons(conditions: Sequence[RunCondition]) -> list[tuple[str, str]]:
    """Ordered (A, B) pairs: agentic over structured, richer modality over poorer."""
    rank = {"diary_only": 0, "sensing_only": 1, "multimodal": 2}
    pairs = []
    for i, x in enumerate(conditions):
        for y in conditions[i + 1 :]:
            if x.architecture != y.architecture:
                a, b = (x, y) if x.architecture == "agentic" else (y, x)
            else:
                a, b = (x, y) if rank[x.modality] >= rank[y.modality] else (y, x)
            pairs.append((a.name, b.name))
    return pairs


@dataclass
class FactorialResult:
    report: dict[str, Any]
    rows: list[EvalRow]


def run_condition(
    store: Store,
    condition: RunCondition,
    backend: InferenceBackend,
    users: Sequence[str],
    peer_index_for: Callable[[str], PeerIndex | None],
    *,
    concurrency_limit: int = 5,
    memory: MemoryLog | None = None,
    **kwargs: Any,
) -> tuple[list[EvalRow], dict[str, str]]:
    """Rows for one condition plus ``{user: reason}`` for aborted users."""
    runs = run_users(
        store,
        users,
        condition,
        backend,
        concurrency_limit=concurrency_limit,
        peer_index_for=peer_index_for,
        memory=memory if memory is not None else MemoryLog(),
        **kwargs,
    )
    rows, aborted = [], {}
    for uid in sorted(runs):
        run = runs[uid]
        entries = store.entries(uid)
        for j, pred in enumerate(run.predictions):
            i = run.first_index + j
            rows.append(make_row(condition.name, uid, i, entries[i], pred))
        if run.aborted:
            aborted[uid] = run.aborted
    return rows, aborted


def run_factorial(
    store: Store,
    conditions: Sequence[RunCondition],
    backend: InferenceBackend | Mapping[str, InferenceBackend],
    seed: int = 0,
    *,
    folds: int = 5,
    users: Sequence[str] | None = None,
    B: int = DEFAULT_B,
    concurrency_limit: int = 5,
    comparisons: Sequence[tuple[str, str]] | None = None,
    edges: Sequence[float] = DEFAULT_EDGES,
) -> FactorialResult:
    """Run every condition over every entry of the evaluation users.

    Peer indices come from cross-validation folds so that no user ever
    retrieves from an index containing their own entries.
    """
    users = sorted(users if users is not None else store.user_ids)
    indices = fold_indices(store, users, folds, seed)
    rows: list[EvalRow] = []
    aborted: dict[str, dict[str, str]] = {}
    for cond in conditions:
        be = backend[cond.name] if isinstance(backend, Mapping) else backend
        log.info("running %s over %d users", cond.name, len(users))
        r, ab = run_condition(store, cond, be, users, indices.get, concurrency_limit=concurrency_limit)
        rows.extend(r)
        aborted[cond.name] = ab
    report = build_report(
        rows,
        [c.name for c in conditions],
        B=B,
        seed=seed,
        comparisons=comparisons if comparisons is not None else default_comparisons(conditions),
        aborted=aborted,
        edges=edges,
        folds=folds,
    )
    return FactorialResult(report, sort_rows(rows))


def _condition_block(rows: list[EvalRow], B: int, seed: int, edges: Sequence[float], ci_targets: Sequence[str]) -> dict[str, Any]:
    targets: dict[str, Any] = {}
    for t in BINARY_TARGETS:
        pred = [r.pred[t] for r in rows]
        act = [r.actual[t] for r in rows]
        ba = balanced_accuracy(pred, act)
        f1 = macro_f1(pred, act)
        ci = bootstrap_ci(list(zip(pred, act)), balanced_accuracy, B, seed).to_json() if t in ci_targets else None
        targets[t] = {
            "n": len(rows),
            "positive_rate": sum(act) / len(act),
            "ba": float(ba),
            "ba_degenerate": ba.degenerate,
            "macro_f1": float(f1),
            "f1_degenerate": f1.degenerate,
            "ci": ci,
        }
    continuous = {
        s: continuous_metrics([r.pred_cont[s] for r in rows], [r.actual_cont[s] for r in rows]).to_json()
        for s in CONTINUOUS_SCORES
    }
    return {
        "n_rows": len(rows),
        "n_users": len({r.user_id for r in rows}),
        "targets": targets,
        "mean_ba_focus": sum(targets[t]["ba"] for t in FOCUS_TARGETS) / len(FOCUS_TARGETS),
        "continuous": continuous,
        "confidence_bins": confidence_bins(rows, edges),
        "tool_usage": tool_usage_stats(rows),
        "mean_turns": sum(r.turns_used for r in rows) / len(rows),
        "max_turns": max(r.turns_used for r in rows),
    }


def build_report(
    rows: Sequence[EvalRow],
    conditions: Sequence[str] | None = None,
    *,
    B: int = DEFAULT_B,
    seed: int = 0,
    comparisons: Sequence[tuple[str, str]] | None = None,
    aborted: Mapping[str, Mapping[str, str]] | None = None,
    edges: Sequence[float] = DEFAULT_EDGES,
    folds: int | None = None,
    ci_targets: Sequence[str] = FOCUS_TARGETS,
) -> dict[str, Any]:
    """Metrics per condition and paired comparisons; a pure function of the rows."""
    by_cond: dict[str, list[EvalRow]] = {}
    for r in sort_rows(rows):
        by_cond.setdefault(r.condition, []).append(r)
    names = list(conditions) if conditions is not None else sorted(by_cond)
    if comparisons is None:
        comparisons = default_comparisons([RunCondition.parse(n) for n in names])
    report: dict[str, Any] = {
        "format": REPORT_FORMAT,
        "version": 1,
        "config": {
            "seed": seed,
            "B": B,
            "folds": folds,
            "confidence_edges": list(edges),
            "focus_targets": list(FOCUS_TARGETS),
        },
        "conditions": {},
        "comparisons": [],
    }
    for name in names:
        cond_rows = by_cond.get(name, [])
        block = _condition_block(cond_rows, B, seed, edges, ci_targets) if cond_rows else {"n_rows": 0}
        block["aborted_users"] = dict(sorted((aborted or {}).get(name, {}).items()))
        report["conditions"][name] = block
    for a, b in comparisons:
        ra = {r.key: r for r in by_cond.get(a, [])}
        rb = {r.key: r for r in by_cond.get(b, [])}
        keys = sorted(ra.keys() & rb.keys())
        if not keys:
            continue
        for t in FOCUS_TARGETS:
            act = np.asarray([ra[k].actual[t] for k in keys], dtype=bool)
            pa = np.asarray([ra[k].pred[t] for k in keys], dtype=bool)
            pb = np.asarray([rb[k].pred[t] for k in keys], dtype=bool)
            delta, p, lo, hi = paired_diff(pa, pb, act, B, seed)
            report["comparisons"].append(
                {"a": a, "b": b, "target": t, "n": len(keys), "delta": delta, "p_one_sided": p, "ci_lo": lo, "ci_hi": hi}
            )
    return report


_NUM = {"type": "number"}
_NUM_OR_NULL = {"type": ["number", "null"]}

REPORT_SCHEMA: dict[str, Any] = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": ["format", "version", "config", "conditions", "comparisons"],
    "properties": {
        "format": {"const": REPORT_FORMAT},
        "version": {"const": 1},
        "config": {
            "type": "object",
            "required": ["seed", "B", "confidence_edges", "focus_targets"],
        },
        "conditions": {
            "type": "object",
            "additionalProperties": {
                "type": "object",
                "required": ["n_rows", "aborted_users"],
                "properties": {
                    "n_rows": {"type": "integer", "minimum": 0},
                    "mean_ba_focus": {"type": "number", "minimum": 0, "maximum": 1},
                    "targets": {
                        "type": "object",
                        "required": list(BINARY_TARGETS),
                        "additionalProperties": {
                            "type": "object",
                            "required": ["ba", "macro_f1", "ba_degenerate", "f1_degenerate", "n"],
                            "properties": {
                                "ba": {"type": "number", "minimum": 0, "maximum": 1},
                                "macro_f1": {"type": "number", "minimum": 0, "maximum": 1},
                                "ci": {
                                    "type": ["object", "null"],
                                    "required": ["point", "lo95", "hi95"],
                                },
                            },
                        },
                    },
                    "continuous": {
                        "type": "object",
                        "additionalProperties": {
                            "type": "object",
                            "required": ["mae", "pearson_r"],
                            "properties": {"mae": _NUM, "pearson_r": _NUM_OR_NULL},
                        },
                    },
                    "confidence_bins": {
                        "type": "array",
                        "items": {"type": "object", "required": ["lo", "hi", "n", "mean_accuracy"]},
                    },
                    "aborted_users": {"type": "object", "additionalProperties": {"type": "string"}},
                },
            },
        },
        "comparisons": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["a", "b", "target", "n", "delta", "p_one_sided", "ci_lo", "ci_hi"],
                "properties": {
                    "delta": _NUM,
                    "p_one_sided": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
                },
            },
        },
    },
}


def validate_report(report: Mapping[str, Any]) -> None:
    jsonschema.validate(report, REPORT_SCHEMA)


def _f(x: Any, nd: int = 3) -> str:
    return "n/a" if x is None else f"{x:.{nd}f}"


def _p(p: float) -> str:
    return "<.0001" if p < 1e-4 else f"{p:.4f}"


def render_markdown(report: Mapping[str, Any]) -> str:
    conds = report["conditions"]
    names = [n for n in conds if conds[n].get("n_rows")]
    out = ["# Factorial report", ""]
    out += ["## Balanced accuracy, focus targets", ""]
    out.append("| Condition | " + " | ".join(FOCUS_TARGETS) + " | Mean |")
    out.append("|---" * (len(FOCUS_TARGETS) + 2) + "|")
    for n in names:
        t = conds[n]["targets"]
        cells = []
        for tg in FOCUS_TARGETS:
            ci = t[tg]["ci"]
            cell = _f(t[tg]["ba"])
            if ci:
                cell += f" [{_f(ci['lo95'])}, {_f(ci['hi95'])}]"
            cells.append(cell)
        out.append(f"| {n} | " + " | ".join(cells) + f" | {_f(conds[n]['mean_ba_focus'])} |")
    out += ["", "## All targets (BA / macro F1)", ""]
    out.append("| Target | " + " | ".join(names) + " |")
    out.append("|---" * (len(names) + 1) + "|")
    for tg in BINARY_TARGETS:
        cells = []
        for n in names:
            x = conds[n]["targets"][tg]
            flag = "*" if x["ba_degenerate"] else ""
            cells.append(f"{_f(x['ba'])}{flag} / {_f(x['macro_f1'])}")
        out.append(f"| {tg} | " + " | ".join(cells) + " |")
    out += ["", "## Continuous scores (MAE / r)", ""]
    out.append("| Score | " + " | ".join(names) + " |")
    out.append("|---" * (len(names) + 1) + "|")
    for s in CONTINUOUS_SCORES:
        cells = [f"{_f(conds[n]['continuous'][s]['mae'], 2)} / {_f(conds[n]['continuous'][s]['pearson_r'], 2)}" for n in names]
        out.append(f"| {s} | " + " | ".join(cells) + " |")
    if report["comparisons"]:
        out += ["", "## Paired comparisons (one-sided bootstrap)", ""]
        out.append("| A | B | Target | n | Delta | 95% CI | p |")
        out.append("|---|---|---|---|---|---|---|")
        for c in report["comparisons"]:
            out.append(
                f"| {c['a']} | {c['b']} | {c['target']} | {c['n']} | {c['delta']:+.3f} | "
                f"[{c['ci_lo']:+.3f}, {c['ci_hi']:+.3f}] | {_p(c['p_one_sided'])} |"
            )
    out += ["", "## Confidence calibration", ""]
    out.append("| Condition | Bin | n | Accuracy |")
    out.append("|---|---|---|---|")
    for n in names:
        for b in conds[n]["confidence_bins"]:
            lo = "" if b["lo"] is None else f"{b['lo']:.2f}"
            hi = "" if b["hi"] is None else f"{b['hi']:.2f}"
            out.append(f"| {n} | [{lo}, {hi}) | {b['n']} | {_f(b['mean_accuracy'])} |")
    out += ["", "## Tool usage", ""]
    out.append("| Condition | Mean calls | Mean turns | Max turns |")
    out.append("|---|---|---|---|")
    for n in names:
        c = conds[n]
        out.append(f"| {n} | {c['tool_usage']['mean_calls']:.2f} | {c['mean_turns']:.2f} | {c['max_turns']} |")
    aborted = {n: conds[n]["aborted_users"] for n in conds if conds[n]["aborted_users"]}
    if aborted:
        out += ["", "## Aborted users", ""]
        for n, users in aborted.items():
            for u, msg in users.items():
                out.append(f"- {n} / {u}: {msg}")
    return "\n".join(out) + "\n"
