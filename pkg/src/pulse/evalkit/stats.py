"""Bootstrap inference and two-sample representativeness tests."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Any, Callable, Iterator, Mapping, Sequence

import numpy as np
from scipy import stats as sps

from pulse.evalkit.metrics import Score, accuracy, balanced_accuracy, macro_f1

DEFAULT_B = 10_000
_CHUNK_CELLS = 2_000_000


class DegenerateDistributionWarning(UserWarning):
    """Most bootstrap resamples produced a degenerate metric value."""


class PairingError(ValueError):
    """Rows of two conditions do not cover the same entries."""


def resample_indices(n: int, B: int, seed: int) -> Iterator[np.ndarray]:
    """Chunks of bootstrap index rows; the stream equals B draws of size n."""
    rng = np.random.default_rng(seed)
    per = max(1, _CHUNK_CELLS // max(n, 1))
    left = B
    while left > 0:
        m = min(per, left)
        yield rng.integers(0, n, size=(m, n))
        left -= m


# -- vectorized metric kernels ----------------------------------------------
# Each maps (pred, actual, idx[m, n]) to (values[m], degenerate[m]) using the
# same arithmetic as the scalar function.


def _counts(p: np.ndarray, a: np.ndarray, idx: np.ndarray):
    ps, as_ = p[idx], a[idx]
    n = idx.shape[1]
    tp = np.sum(ps & as_, axis=1)
    fp = np.sum(ps & ~as_, axis=1)
    pos = np.sum(as_, axis=1)
    fn = pos - tp
    tn = (n - pos) - fp
    return tp, fp, tn, fn


def _ba_batch(p, a, idx):
    tp, fp, tn, fn = _counts(p, a, idx)
    pos, neg = tp + fn, tn + fp
    with np.errstate(divide="ignore", invalid="ignore"):
        tpr = tp / pos
        tnr = tn / neg
        both = (tpr + tnr) / 2.0
    out = np.where(pos == 0, tnr, np.where(neg == 0, tpr, both))
    return out, (pos == 0) | (neg == 0)


def _f1_batch(p, a, idx):
    tp, fp, tn, fn = _counts(p, a, idx)
    with np.errstate(divide="ignore", invalid="ignore"):
        f_pos = np.where(tp + fn == 0, 0.0, 2.0 * tp / (2.0 * tp + fp + fn))
        f_neg = np.where(tn + fp == 0, 0.0, 2.0 * tn / (2.0 * tn + fn + fp))
    return (f_pos + f_neg) / 2.0, (tp + fn == 0) | (tn + fp == 0)


def _acc_batch(p, a, idx):
    return np.mean(p[idx] == a[idx], axis=1), np.zeros(idx.shape[0], dtype=bool)


_KERNELS: dict[Callable[..., Any], Callable[..., tuple[np.ndarray, np.ndarray]]] = {
    balanced_accuracy: _ba_batch,
    macro_f1: _f1_batch,
    accuracy: _acc_batch,
}


def _replicates(
    pred: np.ndarray, actual: np.ndarray, metric: Callable[..., float], B: int, seed: int
) -> tuple[np.ndarray, np.ndarray]:
    n = len(actual)
    kernel = _KERNELS.get(metric)
    vals, degs = [], []
    for idx in resample_indices(n, B, seed):
        if kernel is not None:
            v, d = kernel(pred, actual, idx)
        else:
            v = np.empty(idx.shape[0])
            d = np.zeros(idx.shape[0], dtype=bool)
            for j, row in enumerate(idx):
                s = metric(pred[row].tolist(), actual[row].tolist())
                v[j] = float(s)
                d[j] = bool(getattr(s, "degenerate", False))
        vals.append(v)
        degs.append(d)
    return np.concatenate(vals), np.concatenate(degs)


@dataclass(frozen=True)
class BootstrapCI:
    point: float
    lo95: float
    hi95: float
    B: int
    seed: int
    n: int
    degenerate_fraction: float

    @property
    def degenerate(self) -> bool:
        return self.degenerate_fraction > 0.5

    def to_json(self) -> dict[str, Any]:
        return {
            "point": self.point,
            "lo95": self.lo95,
            "hi95": self.hi95,
            "B": self.B,
            "seed": self.seed,
            "n": self.n,
            "degenerate_fraction": self.degenerate_fraction,
        }


def bootstrap_ci(
    rows: Sequence[tuple[Any, Any]],
    metric: Callable[..., float] = balanced_accuracy,
    B: int = DEFAULT_B,
    seed: int = 0,
) -> BootstrapCI:
    """Percentile 95% interval of ``metric`` over rows resampled with replacement.

    ``rows`` are (pred, actual) pairs. They are sorted first, so the result
    does not depend on row order.
    """
    if B < 1:
        raise ValueError("B must be >= 1")
    if not rows:
        raise ValueError("empty input")
    ordered = sorted((p, a) for p, a in rows)
    pred = np.asarray([p for p, _ in ordered])
    actual = np.asarray([a for _, a in ordered])
    point = float(metric(pred.tolist(), actual.tolist()))
    vals, degs = _replicates(pred, actual, metric, B, seed)
    frac = float(np.mean(degs))
    if frac > 0.5:
        warnings.warn(
            f"metric degenerate in {frac:.0%} of {B} resamples", DegenerateDistributionWarning, stacklevel=2
        )
    lo, hi = np.percentile(vals, [2.5, 97.5])
    return BootstrapCI(point, float(lo), float(hi), B, seed, len(ordered), frac)


@dataclass(frozen=True)
class DiffTest:
    target: str
    delta: float
    p_one_sided: float
    ci_lo: float
    ci_hi: float
    B: int
    seed: int
    n: int

    def to_json(self) -> dict[str, Any]:
        return {
            "target": self.target,
            "delta": self.delta,
            "p_one_sided": self.p_one_sided,
            "ci_lo": self.ci_lo,
            "ci_hi": self.ci_hi,
            "B": self.B,
            "seed": self.seed,
            "n": self.n,
        }


def paired_arrays(rows_a: Sequence[Any], rows_b: Sequence[Any], target: str) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Align two condition's rows by (user, entry); returns (pred_a, pred_b, actual)."""
    def by_key(rows: Sequence[Any], side: str) -> dict[tuple[str, int], Any]:
        out: dict[tuple[str, int], Any] = {}
        for r in rows:
            if r.key in out:
                raise PairingError(f"duplicate row {r.key} in {side}")
            out[r.key] = r
        return out

    a, b = by_key(rows_a, "A"), by_key(rows_b, "B")
    if a.keys() != b.keys():
        only_a = sorted(a.keys() - b.keys())[:3]
        only_b = sorted(b.keys() - a.keys())[:3]
        raise PairingError(f"entry sets differ (only in A: {only_a}, only in B: {only_b})")
    keys = sorted(a)
    for k in keys:
        if a[k].actual[target] != b[k].actual[target]:
            raise PairingError(f"ground truth differs for {k}")
    pa = np.asarray([a[k].pred[target] for k in keys], dtype=bool)
    pb = np.asarray([b[k].pred[target] for k in keys], dtype=bool)
    act = np.asarray([a[k].actual[target] for k in keys], dtype=bool)
    return pa, pb, act


def paired_diff(
    pred_a: np.ndarray, pred_b: np.ndarray, actual: np.ndarray, B: int = DEFAULT_B, seed: int = 0
) -> tuple[float, float, float, float]:
    """(delta, p_one_sided, ci_lo, ci_hi) for BA_A - BA_B with shared resamples."""
    if B < 1:
        raise ValueError("B must be >= 1")
    if not len(actual):
        raise ValueError("empty input")
    delta = float(balanced_accuracy(pred_a, actual)) - float(balanced_accuracy(pred_b, actual))
    diffs = []
    for idx in resample_indices(len(actual), B, seed):
        va, _ = _ba_batch(pred_a, actual, idx)
        vb, _ = _ba_batch(pred_b, actual, idx)
        diffs.append(va - vb)
    d = np.concatenate(diffs)
    p = (int(np.sum(d <= 0.0)) + 1) / (B + 1)
    lo, hi = np.percentile(d, [2.5, 97.5])
    return delta, p, float(lo), float(hi)


def bootstrap_diff_test(
    rows_a: Sequence[Any], rows_b: Sequence[Any], target: str, B: int = DEFAULT_B, seed: int = 0
) -> DiffTest:
    """One-sided paired bootstrap test that A's balanced accuracy exceeds B's.

    p = (#{resampled delta <= 0} + 1) / (B + 1).
    """
    pa, pb, act = paired_arrays(rows_a, rows_b, target)
    delta, p, lo, hi = paired_diff(pa, pb, act, B, seed)
    return DiffTest(target, delta, p, lo, hi, B, seed, len(act))


# -- representativeness -------------------------------------------------------


@dataclass(frozen=True)
class MannWhitney:
    u: float
    z: float
    p: float
    rank_biserial_r: float
    n1: int
    n2: int
    degenerate: bool

    def to_json(self) -> dict[str, Any]:
        return {
            "test": "mann_whitney",
            "U": self.u,
            "z": self.z,
            "p": self.p,
            "rank_biserial_r": self.rank_biserial_r,
            "n1": self.n1,
            "n2": self.n2,
            "degenerate": self.degenerate,
        }


def mann_whitney_u(x: Sequence[float], y: Sequence[float]) -> MannWhitney:
    """Two-sided Mann-Whitney U with normal approximation, tie and continuity correction.

    ``U`` counts pairs where x beats y (ties count half); the rank-biserial
    correlation is ``1 - 2U / (n1 n2)``.
    """
    xa = np.asarray(x, dtype=float)
    ya = np.asarray(y, dtype=float)
    n1, n2 = len(xa), len(ya)
    if n1 == 0 or n2 == 0:
        raise ValueError("empty group")
    ranks = sps.rankdata(np.concatenate([xa, ya]))
    u1 = float(ranks[:n1].sum() - n1 * (n1 + 1) / 2.0)
    u2 = n1 * n2 - u1
    r = 1.0 - 2.0 * u1 / (n1 * n2)
    n = n1 + n2
    _, counts = np.unique(ranks, return_counts=True)
    tie = float(np.sum(counts.astype(float) ** 3 - counts))
    var = n1 * n2 / 12.0 * ((n + 1) - tie / (n * (n - 1))) if n > 1 else 0.0
    degenerate = n1 < 2 or n2 < 2 or var <= 0.0
    if var <= 0.0:
        return MannWhitney(u1, 0.0, 1.0, r, n1, n2, True)
    mu = n1 * n2 / 2.0
    z = (max(u1, u2) - mu - 0.5) / math.sqrt(var)
    p = float(min(max(2.0 * sps.norm.sf(z), 0.0), 1.0))
    return MannWhitney(u1, float(z), p, r, n1, n2, degenerate)


@dataclass(frozen=True)
class ChiSquare:
    chi2: float
    dof: int
    p: float
    categories: tuple[str, ...]
    table: tuple[tuple[int, ...], tuple[int, ...]]
    degenerate: bool

    def to_json(self) -> dict[str, Any]:
        return {
            "test": "chi2",
            "chi2": self.chi2,
            "dof": self.dof,
            "p": self.p,
            "categories": list(self.categories),
            "table": [list(r) for r in self.table],
            "degenerate": self.degenerate,
        }


def chi_square(x: Sequence[Any], y: Sequence[Any]) -> ChiSquare:
    """Pearson chi-square on the 2 x k table of category counts."""
    cats = sorted({str(v) for v in x} | {str(v) for v in y})
    row_x = tuple(sum(1 for v in x if str(v) == c) for c in cats)
    row_y = tuple(sum(1 for v in y if str(v) == c) for c in cats)
    total = len(x) + len(y)
    if len(cats) < 2 or not x or not y:
        return ChiSquare(0.0, 0, 1.0, tuple(cats), (row_x, row_y), True)
    chi2 = 0.0
    for row, n_row in ((row_x, len(x)), (row_y, len(y))):
        for j, obs in enumerate(row):
            expected = n_row * (row_x[j] + row_y[j]) / total
            chi2 += (obs - expected) ** 2 / expected
    dof = len(cats) - 1
    degenerate = min(row_x + row_y) == 0
    return ChiSquare(chi2, dof, float(sps.chi2.sf(chi2, dof)), tuple(cats), (row_x, row_y), degenerate)


def _is_continuous(values: Sequence[Any]) -> bool:
    return all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in values)


def representativeness(
    sample_a: Mapping[str, Sequence[Any]], sample_b: Mapping[str, Sequence[Any]]
) -> dict[str, dict[str, Any]]:
    """Per-measure comparison of two samples.

    Numeric measures get a Mann-Whitney U test, anything else a chi-square
    test on category counts.
    """
    if set(sample_a) != set(sample_b):
        raise ValueError("samples must report the same measures")
    out: dict[str, dict[str, Any]] = {}
    for name in sorted(sample_a):
        xa, xb = list(sample_a[name]), list(sample_b[name])
        if _is_continuous(xa) and _is_continuous(xb):
            if len(xa) < 2 or len(xb) < 2:
                res = mann_whitney_u(xa, xb).to_json() if xa and xb else {"test": "mann_whitney", "degenerate": True}
                res["degenerate"] = True
            else:
                res = mann_whitney_u(xa, xb).to_json()
        else:
            res = chi_square(xa, xb).to_json()
        out[name] = res
    return out


__all__ = [
    "BootstrapCI",
    "ChiSquare",
    "DEFAULT_B",
    "DegenerateDistributionWarning",
    "DiffTest",
    "MannWhitney",
    "PairingError",
    "Score",
    "bootstrap_ci",
    "bootstrap_diff_test",
    "chi_square",
    "mann_whitney_u",
    "paired_arrays",
    "paired_diff",
    "representativeness",
    "resample_indices",
]
