"""JSONL persistence for profiles, sensing events and EMA entries."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Iterable, Iterator, TypeVar

from pulse.model import DataError, EmaEntry, SensingEvent, UserProfile

T = TypeVar("T")

PROFILES_FILE = "profiles.jsonl"
EVENTS_FILE = "events.jsonl"
EMA_FILE = "ema.jsonl"


@dataclass
class Dataset:
    profiles: list[UserProfile]
    events: list[SensingEvent]
    entries: list[EmaEntry]


def dumps(obj: Any) -> str:
    """Canonical JSON used for every persisted or hashed record."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False, allow_nan=False)


def write_jsonl(path: Path | str, records: Iterable[dict[str, Any]]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(dumps(rec))
            fh.write("\n")


def iter_jsonl(path: Path | str, parse: Callable[[dict[str, Any]], T]) -> Iterator[T]:
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                yield parse(json.loads(line))
            except (ValueError, KeyError, TypeError) as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from exc


def save_dataset(directory: Path | str, ds: Dataset) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    write_jsonl(directory / PROFILES_FILE, (p.to_json() for p in ds.profiles))
    write_jsonl(directory / EVENTS_FILE, (e.to_json() for e in ds.events))
    write_jsonl(directory / EMA_FILE, (e.to_json() for e in ds.entries))


def load_dataset(directory: Path | str) -> Dataset:
    directory = Path(directory)
    return Dataset(
        profiles=list(iter_jsonl(directory / PROFILES_FILE, UserProfile.from_json)),
        events=list(iter_jsonl(directory / EVENTS_FILE, SensingEvent.from_json)),
        entries=list(iter_jsonl(directory / EMA_FILE, EmaEntry.from_json)),
    )
