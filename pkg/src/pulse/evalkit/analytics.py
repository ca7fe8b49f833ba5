"""Confidence calibration bins and tool-usage summaries."""

from __future__ import annotations

from collections import Counter
from typing import Any, Sequence

from pulse.evalkit.rows import EvalRow
from pulse.model import FOCUS_TARGETS

DEFAULT_EDGES = (0.65, 0.80)


def confidence_bins(
    rows: Sequence[EvalRow],
    edges: Sequence[float] = DEFAULT_EDGES,
    targets: Sequence[str] = FOCUS_TARGETS,
) -> list[dict[str, Any]]:
    """Mean focus-target accuracy of rows grouped by stated confidence.

    Bins are ``[-inf, e0), [e0, e1), ..., [e_last, inf)``.
    """
    edges = list(edges)
    if any(b <= a for a, b in zip(edges, edges[1:])):
        raise ValueError("edges must be strictly increasing")
    bounds = [None, *edges, None]
    sums = [0.0] * (len(edges) + 1)
    counts = [0] * (len(edges) + 1)
    for r in sorted(rows, key=lambda r: (r.user_id, r.entry_index)):
        j = sum(1 for e in edges if r.confidence >= e)
        counts[j] += 1
        sums[j] += r.focus_accuracy(targets)
    return [
        {
            "lo": bounds[j],
            "hi": bounds[j + 1],
            "n": counts[j],
            "correct_sum": sums[j],
            "mean_accuracy": sums[j] / counts[j] if counts[j] else None,
        }
        for j in range(len(counts))
    ]


def tool_usage_stats(rows: Sequence[EvalRow], bucket_width: int = 5) -> dict[str, Any]:
    """Calls per prediction, share of predictions using each tool, and both by entry position."""
    rows = sorted(rows, key=lambda r: (r.user_id, r.entry_index))
    n = len(rows)
    freq: Counter[str] = Counter()
    for r in rows:
        freq.update(set(r.tool_trace))
    buckets: dict[int, list[EvalRow]] = {}
    for r in rows:
        buckets.setdefault(r.entry_index // bucket_width, []).append(r)
    return {
        "n": n,
        "mean_calls": sum(len(r.tool_trace) for r in rows) / n if n else 0.0,
        "tool_frequency": {t: c / n for t, c in sorted(freq.items())},
        "by_entry_bucket": [
            {
                "entries": f"{b * bucket_width + 1}-{(b + 1) * bucket_width}",
                "n": len(rs),
                "mean_calls": sum(len(r.tool_trace) for r in rs) / len(rs),
                "mean_confidence": sum(r.confidence for r in rs) / len(rs),
            }
            for b, rs in sorted(buckets.items())
        ],
    }
