"""Dataset manifest: clip entries tagged with a motion category."""
from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

from .io import SchemaError, read_document, read_header, write_document

CATEGORIES = ("climb-up", "climb-down", "up-and-down", "standing", "sitting", "sit-and-stand", "terrain")

# per-category clip counts of the reference training set
REFERENCE_COUNTS = {"climb-up": 39, "climb-down": 36, "up-and-down": 13, "standing": 7, "sitting": 12,
                    "sit-and-stand": 5, "terrain": 11}
REFERENCE_TOTAL = 123

SCENARIO_CATEGORY = {"flat-walk": "terrain", "stairs-up": "climb-up", "stairs-down": "climb-down",
                     "sit": "sit-and-stand", "step-stones": "terrain"}


@dataclass(frozen=True)
class ManifestEntry:
    path: str
    category: str
    length: int

    def __post_init__(self):
        if self.category not in CATEGORIES:
            raise SchemaError(f"unknown category {self.category!r}; expected one of {CATEGORIES}")
        if int(self.length) < 1:
            raise SchemaError("clip length must be positive")


@dataclass
class DatasetManifest:
    entries: list = field(default_factory=list)

    def counts(self) -> dict:
        c = Counter(e.category for e in self.entries)
        return {k: c.get(k, 0) for k in CATEGORIES}

    @property
    def total(self) -> int:
        return len(self.entries)

    def add(self, path, category: str, length: int) -> None:
        self.entries.append(ManifestEntry(str(path), category, int(length)))

    def write(self, path) -> Path:
        return write_document(path, "manifest", {
            "entries": [{"path": e.path, "category": e.category, "length": e.length} for e in self.entries],
            "counts": self.counts(), "total": self.total})

    @classmethod
    def read(cls, path) -> "DatasetManifest":
        d = read_document(path, "manifest")
        try:
            m = cls([ManifestEntry(e["path"], e["category"], int(e["length"])) for e in d["entries"]])
        except (KeyError, TypeError) as exc:
            raise SchemaError(f"{path}: malformed manifest ({exc!r})") from exc
        if "counts" in d and d["counts"] != m.counts():
            raise SchemaError(f"{path}: stored counts disagree with the entries")
        if "total" in d and d["total"] != m.total:
            raise SchemaError(f"{path}: stored total disagrees with the entries")
        return m


def check_counts(counts: dict, total: int) -> None:
    """Category counts must use the taxonomy and sum to the total."""
    bad = set(counts) - set(CATEGORIES)
    if bad:
        raise SchemaError(f"unknown categories: {sorted(bad)}")
    if sum(counts.values()) != total:
        raise SchemaError(f"category counts sum to {sum(counts.values())}, manifest total is {total}")


def manifest_from_clips(paths) -> DatasetManifest:
    """Tag clip files by their scenario."""
    m = DatasetManifest()
    for p in sorted(str(p) for p in paths):
        d = read_header(p, "clip")
        scenario = d.get("scenario")
        if scenario not in SCENARIO_CATEGORY:
            raise SchemaError(f"{p}: no category for scenario {scenario!r}")
        m.add(p, SCENARIO_CATEGORY[scenario], int(d["frames"]))
    return m
