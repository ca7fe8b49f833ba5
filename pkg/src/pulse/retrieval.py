"""Cross-user calibration: TF-IDF diary vectors, day fingerprints, peer index.

TF-IDF uses lowercase unigram tokens split on non-alphanumerics, raw term
counts, smooth idf ``ln((1 + N) / (1 + df)) + 1`` and L2 normalization.
Fingerprints hold the fifteen numeric day features in ``timestore.FEATURES``
order, z-normalized against training-fold statistics; missing features are 0.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

import numpy as np

from pulse.model import BINARY_TARGETS, EmaEntry
from pulse.timestore import FEATURES, DailyAggregates, Store, open_context

INDEX_FORMAT = "pulse-peer-index"
INDEX_VERSION = 1

SparseVector = dict[int, float]

_TOKEN_SPLIT = re.compile(r"[^0-9a-z]+")


class FoldLeakageError(ValueError):
    """Training fold overlaps the evaluation users."""


def tokenize(text: str) -> list[str]:
    return [t for t in _TOKEN_SPLIT.split(text.lower()) if t]


@dataclass
class TfidfModel:
    vocabulary: dict[str, int]
    idf: list[float]
    doc_count: int

    def embed(self, text: str) -> SparseVector:
        counts: dict[int, int] = {}
        for tok in tokenize(text):
            j = self.vocabulary.get(tok)
            if j is not None:
                counts[j] = counts.get(j, 0) + 1
        vec = {j: c * self.idf[j] for j, c in counts.items()}
        norm = math.sqrt(sum(v * v for v in vec.values()))
        if norm == 0.0:
            return {}
        return {j: v / norm for j, v in sorted(vec.items())}

    def to_json(self) -> dict[str, Any]:
        return {"vocabulary": self.vocabulary, "idf": self.idf, "doc_count": self.doc_count}

    @classmethod
    def from_json(cls, obj: Mapping[str, Any]) -> TfidfModel:
        return cls(dict(obj["vocabulary"]), list(obj["idf"]), int(obj["doc_count"]))


def fit_tfidf(corpus: Sequence[str]) -> TfidfModel:
    if not corpus:
        raise ValueError("corpus must be non-empty")
    vocab: dict[str, int] = {}
    df: list[int] = []
    for doc in corpus:
        seen = set()
        for tok in tokenize(doc):
            if tok not in vocab:
                vocab[tok] = len(vocab)
                df.append(0)
            seen.add(vocab[tok])
        for j in seen:
            df[j] += 1
    n = len(corpus)
    idf = [math.log((1 + n) / (1 + d)) + 1.0 for d in df]
    return TfidfModel(vocab, idf, n)


def embed(model: TfidfModel, text: str) -> SparseVector:
    return model.embed(text)


def cosine(a: Sequence[float] | SparseVector, b: Sequence[float] | SparseVector) -> float:
    """Cosine similarity; 0.0 when either vector has zero norm."""
    if isinstance(a, dict) or isinstance(b, dict):
        if not (isinstance(a, dict) and isinstance(b, dict)):
            raise TypeError("cannot mix sparse and dense vectors")
        if len(a) > len(b):
            a, b = b, a
        dot = sum(v * b.get(j, 0.0) for j, v in a.items())
        na = math.sqrt(sum(v * v for v in a.values()))
        nb = math.sqrt(sum(v * v for v in b.values()))
    else:
        if len(a) != len(b):
            raise ValueError(f"dimension mismatch: {len(a)} != {len(b)}")
        dot = math.fsum(x * y for x, y in zip(a, b))
        na = math.sqrt(math.fsum(x * x for x in a))
        nb = math.sqrt(math.fsum(y * y for y in b))
    if na == 0.0 or nb == 0.0:
        return 0.0
    return max(-1.0, min(1.0, dot / (na * nb)))


def raw_features(agg: DailyAggregates) -> list[float | None]:
    return [None if getattr(agg, f) is None else float(getattr(agg, f)) for f in FEATURES]


@dataclass
class NormStats:
    mean: list[float]
    std: list[float]

    @classmethod
    def fit(cls, rows: Iterable[Sequence[float | None]]) -> NormStats:
        cols: list[list[float]] = [[] for _ in FEATURES]
        for row in rows:
            for j, v in enumerate(row):
                if v is not None:
                    cols[j].append(v)
        mean = [sum(c) / len(c) if c else 0.0 for c in cols]
        std = [
            math.sqrt(sum((v - m) ** 2 for v in c) / len(c)) if c else 0.0
            for c, m in zip(cols, mean)
        ]
        return cls(mean, std)


@dataclass
class Fingerprint:
    values: list[float]
    mask: list[bool]


def fingerprint(raw: Sequence[float | None], stats: NormStats) -> Fingerprint:
    values, mask = [], []
    for v, m, s in zip(raw, stats.mean, stats.std):
        if v is None:
            values.append(0.0)
            mask.append(False)
        else:
            values.append((v - m) / s if s > 0 else 0.0)
            mask.append(True)
    return Fingerprint(values, mask)


def entry_outcomes(entry: EmaEntry) -> dict[str, Any]:
    return {
        "pa_score": entry.pa_score,
        "na_score": entry.na_score,
        "er_desire_score": entry.er_desire_score,
        "binary_targets": {k: bool(entry.binary_targets[k]) for k in BINARY_TARGETS},
    }


def entry_ref(user_id: str, index: int) -> str:
    return f"{user_id}:{index:04d}"


@dataclass
class PeerRow:
    user_id: str
    entry_ref: str
    outcomes: dict[str, Any]
    diary: str | None = None
    tfidf: SparseVector | None = None
    fingerprint: list[float] | None = None

    def to_json(self) -> dict[str, Any]:
        return {
            "user_id": self.user_id,
            "entry_ref": self.entry_ref,
            "outcomes": self.outcomes,
            "diary": self.diary,
            "tfidf": None if self.tfidf is None else [[j, v] for j, v in sorted(self.tfidf.items())],
            "fingerprint": self.fingerprint,
        }

    @classmethod
    def from_json(cls, obj: Mapping[str, Any]) -> PeerRow:
        tfidf = obj.get("tfidf")
        return cls(
            user_id=obj["user_id"],
            entry_ref=obj["entry_ref"],
            outcomes=obj["outcomes"],
            diary=obj.get("diary"),
            tfidf=None if tfidf is None else {int(j): float(v) for j, v in tfidf},
            fingerprint=obj.get("fingerprint"),
        )


@dataclass
class PeerIndex:
    rows: list[PeerRow]
    tfidf_model: TfidfModel | None
    stats: NormStats
    users: frozenset[str] = field(default_factory=frozenset)

    def __post_init__(self) -> None:
        self._sensing = [r for r in self.rows if r.fingerprint is not None]
        self._matrix = np.array([r.fingerprint for r in self._sensing], dtype=float).reshape(-1, len(FEATURES))
        self._norms = np.linalg.norm(self._matrix, axis=1)
        self._sensing_users = np.array([r.user_id for r in self._sensing], dtype=object)

    def embed_text(self, text: str) -> SparseVector:
        return self.tfidf_model.embed(text) if self.tfidf_model else {}

    def embed_day(self, agg: DailyAggregates) -> list[float]:
        return fingerprint(raw_features(agg), self.stats).values

    def to_json(self) -> dict[str, Any]:
        return {
            "format": INDEX_FORMAT,
            "version": INDEX_VERSION,
            "users": sorted(self.users),
            "tfidf": None if self.tfidf_model is None else self.tfidf_model.to_json(),
            "normalization": {"features": list(FEATURES), "mean": self.stats.mean, "std": self.stats.std},
            "rows": [r.to_json() for r in self.rows],
        }

    @classmethod
    def from_json(cls, obj: Mapping[str, Any]) -> PeerIndex:
        if obj.get("format") != INDEX_FORMAT or obj.get("version") != INDEX_VERSION:
            raise ValueError("not a version-1 peer index")
        tfidf = obj.get("tfidf")
        norm = obj["normalization"]
        return cls(
            rows=[PeerRow.from_json(r) for r in obj["rows"]],
            tfidf_model=None if tfidf is None else TfidfModel.from_json(tfidf),
            stats=NormStats(list(norm["mean"]), list(norm["std"])),
            users=frozenset(obj.get("users", [])),
        )

    def save(self, path: Path | str) -> None:
        Path(path).write_text(json.dumps(self.to_json(), sort_keys=True, separators=(",", ":")), encoding="utf-8")

    @classmethod
    def load(cls, path: Path | str) -> PeerIndex:
        return cls.from_json(json.loads(Path(path).read_text(encoding="utf-8")))


def entry_day_features(store: Store, user_id: str, entry: EmaEntry) -> list[float | None] | None:
    """Raw features of the entry's local day, observed just before the entry."""
    ctx = open_context(store, user_id, entry.timestamp)
    agg = ctx.daily_aggregates(ctx.ema_date)
    if not agg.any_available:
        return None
    return raw_features(agg)


def build_peer_index(
    store: Store,
    train_users: Iterable[str],
    eval_users: Iterable[str] = (),
    *,
    feature_cache: dict[tuple[str, int], list[float | None] | None] | None = None,
) -> PeerIndex:
    """Index every training-fold entry that has a diary or a same-day fingerprint."""
    train = sorted(set(train_users))
    overlap = set(train) & set(eval_users)
    if overlap:
        raise FoldLeakageError(f"training fold contains evaluation users: {sorted(overlap)}")
    cache = {} if feature_cache is None else feature_cache
    staged: list[tuple[str, int, EmaEntry, list[float | None] | None]] = []
    for uid in train:
        for i, entry in enumerate(store.entries(uid)):
            key = (uid, i)
            if key not in cache:
                cache[key] = entry_day_features(store, uid, entry)
            staged.append((uid, i, entry, cache[key]))
    stats = NormStats.fit(f for *_, f in staged if f is not None)
    diaries = [e.diary for _, _, e, _ in staged if e.diary]
    model = fit_tfidf(diaries) if diaries else None
    rows = []
    for uid, i, entry, feats in staged:
        has_diary = bool(entry.diary)
        if not has_diary and feats is None:
            continue
        rows.append(
            PeerRow(
                user_id=uid,
                entry_ref=entry_ref(uid, i),
                outcomes=entry_outcomes(entry),
                diary=entry.diary if has_diary else None,
                tfidf=model.embed(entry.diary) if has_diary and model else None,
                fingerprint=None if feats is None else fingerprint(feats, stats).values,
            )
        )
    return PeerIndex(rows=rows, tfidf_model=model, stats=stats, users=frozenset(train))


@dataclass(frozen=True)
class PeerMatch:
    entry_ref: str
    user_id: str
    similarity: float
    outcomes: dict[str, Any]
    diary: str | None = None


def rank_peers(
    index: PeerIndex,
    query: Sequence[float] | SparseVector,
    space: str,
    exclude_user: str | None,
    k: int,
) -> list[PeerMatch]:
    """Top-k rows by cosine similarity, excluding ``exclude_user`` first.

    Ties are broken by ``entry_ref`` ascending.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    if space == "text":
        if not isinstance(query, dict):
            raise TypeError("text queries are sparse vectors")
        scored = [
            (cosine(query, r.tfidf), r)
            for r in index.rows
            if r.tfidf is not None and r.user_id != exclude_user
        ]
    elif space == "sensing":
        rows = index._sensing
        if not rows:
            return []
        q = np.asarray(query, dtype=float)
        if q.shape != (len(FEATURES),):
            raise ValueError(f"dimension mismatch: {q.shape[0]} != {len(FEATURES)}")
        qn = float(np.linalg.norm(q))
        dots = index._matrix @ q
        denom = index._norms * qn
        sims = np.divide(dots, denom, out=np.zeros_like(dots), where=denom > 0)
        sims = np.clip(sims, -1.0, 1.0)
        keep = index._sensing_users != exclude_user
        scored = [(float(s), r) for s, r, ok in zip(sims, rows, keep) if ok]
    else:
        raise ValueError(f"unknown space {space!r}")
    scored.sort(key=lambda sr: (-sr[0], sr[1].entry_ref))
    return [
        PeerMatch(r.entry_ref, r.user_id, s, r.outcomes, r.diary)
        for s, r in scored[:k]
    ]
