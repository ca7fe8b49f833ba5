"""Slow, obviously-correct reference implementations used only by tests.

None of these import from ``pulse``; they are written from the textbook
definitions so that agreement with the library is evidence, not tautology.
"""

from __future__ import annotations

import itertools
import math
import re
from collections import Counter
from datetime import timedelta


def ba(pred, act):
    tp = sum(1 for p, a in zip(pred, act) if p and a)
    fn = sum(1 for p, a in zip(pred, act) if not p and a)
    tn = sum(1 for p, a in zip(pred, act) if not p and not a)
    fp = sum(1 for p, a in zip(pred, act) if p and not a)
    rates = []
    if tp + fn:
        rates.append(tp / (tp + fn))
    if tn + fp:
        rates.append(tn / (tn + fp))
    return sum(rates) / len(rates)


def macro_f1(pred, act):
    scores = []
    for cls in (True, False):
        tp = sum(1 for p, a in zip(pred, act) if p == cls and a == cls)
        fp = sum(1 for p, a in zip(pred, act) if p == cls and a != cls)
        fn = sum(1 for p, a in zip(pred, act) if p != cls and a == cls)
        if tp + fn == 0:
            scores.append(0.0)  # class absent from the truth scores zero
            continue
        denom = 2 * tp + fp + fn
        scores.append(0.0 if denom == 0 else 2 * tp / denom)
    return sum(scores) / len(scores)


def mae(pred, act):
    return sum(abs(p - a) for p, a in zip(pred, act)) / len(pred)


def pearson(x, y):
    n = len(x)
    mx, my = sum(x) / n, sum(y) / n
    sxy = sum((a - mx) * (b - my) for a, b in zip(x, y))
    sxx = sum((a - mx) ** 2 for a in x)
    syy = sum((b - my) ** 2 for b in y)
    if sxx == 0 or syy == 0:
        return None
    return sxy / math.sqrt(sxx * syy)


def mann_whitney_u1(x, y):
    """U for sample x by direct pair counting, ties count one half."""
    u = 0.0
    for a in x:
        for b in y:
            u += 1.0 if a > b else 0.5 if a == b else 0.0
    return u


def rank_biserial(x, y):
    return 1.0 - 2.0 * mann_whitney_u1(x, y) / (len(x) * len(y))


def exact_bootstrap_moments(pairs, metric):
    """Exact mean and variance of metric under resampling with replacement.

    Enumerates every multiset of size n with its multinomial probability
    n! / prod(c_i!) / n^n, which is the same distribution as all n^n ordered
    resamples but small enough to walk for n <= 8.
    """
    n = len(pairs)
    total = n**n
    m1 = m2 = 0.0
    for combo in itertools.combinations_with_replacement(range(n), n):
        counts = Counter(combo)
        w = math.factorial(n)
        for c in counts.values():
            w //= math.factorial(c)
        sample = [pairs[i] for i in combo]
        v = metric([p for p, _ in sample], [a for _, a in sample])
        m1 += w * v
        m2 += w * v * v
    mean = m1 / total
    return mean, m2 / total - mean * mean


# -- retrieval ---------------------------------------------------------------


def tokens(text):
    return [t for t in re.split(r"[^0-9a-z]+", text.lower()) if t]


def dense_tfidf(corpus):
    """Dense smooth-idf TF-IDF: idf = ln((1+N)/(1+df)) + 1, rows L2-normalised."""
    vocab = sorted({t for d in corpus for t in tokens(d)})
    df = Counter(t for d in corpus for t in set(tokens(d)))
    n = len(corpus)
    idf = {t: math.log((1 + n) / (1 + df[t])) + 1 for t in vocab}

    def vec(text):
        c = Counter(t for t in tokens(text) if t in idf)
        v = [c[t] * idf[t] for t in vocab]
        norm = math.sqrt(sum(x * x for x in v))
        return [x / norm for x in v] if norm else [0.0] * len(v)

    return vec


def dense_cos(a, b):
    na = math.sqrt(sum(x * x for x in a))
    nb = math.sqrt(sum(x * x for x in b))
    if na == 0 or nb == 0:
        return 0.0
    return sum(x * y for x, y in zip(a, b)) / (na * nb)


def exhaustive_rank(candidates, query_vec, exclude_user, k):
    """candidates: (entry_ref, user_id, vector). Full scan and sort."""
    scored = []
    for ref, uid, v in candidates:
        if uid == exclude_user:
            continue
        scored.append((dense_cos(query_vec, v), ref))
    scored.sort(key=lambda t: (-t[0], t[1]))
    return scored[:k]


# -- temporal boundary -------------------------------------------------------


def visible(events, boundary):
    """Brute-force filter: keep events stamped strictly before the boundary."""
    return [e for e in events if e.timestamp < boundary]
