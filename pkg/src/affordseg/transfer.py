"""Transfer table: object/part label paths to affordance vectors.

A table row maps a pattern such as ``cabinet/drawer`` or ``*/knob`` to 15
presence values from {0, 0.5, 1}. Lookups go from the most specific
candidate pattern to the most general one, see :func:`candidate_patterns`.
"""
from __future__ import annotations

from dataclasses import dataclass
from importlib import resources

import numpy as np

from .core import (
    AFFORDANCES,
    NUM_AFFORDANCES,
    AffordanceTensor,
    CoverageMask,
    PartLabelMap,
    canonical_affordance,
)

WILDCARD = "*"
MAX_ENTRIES = 500
PRESENCE_VALUES = (0.0, 0.5, 1.0)


class TableParseError(ValueError):
    def __init__(self, message: str, line: int, source: str | None = None):
        where = f"{source}:{line}" if source else f"line {line}"
        super().__init__(f"{where}: {message}")
        self.line = line
        self.source = source


def validate_pattern(pattern: str) -> None:
    segments = pattern.split("/")
    if not pattern or any(not s for s in segments):
        raise ValueError(f"malformed pattern {pattern!r}")
    if WILDCARD in segments[1:] or any(WILDCARD in s and s != WILDCARD for s in segments):
        raise ValueError(f"wildcard may only be the entire first segment: {pattern!r}")


@dataclass(frozen=True)
class TransferEntry:
    pattern: str
    vector: tuple[float, ...]

    def __post_init__(self):
        validate_pattern(self.pattern)
        vec = tuple(float(v) for v in self.vector)
        if len(vec) != NUM_AFFORDANCES:
            raise ValueError(f"{self.pattern}: expected {NUM_AFFORDANCES} values, got {len(vec)}")
        if any(v not in PRESENCE_VALUES for v in vec):
            raise ValueError(f"{self.pattern}: values must be 0, 0.5 or 1")
        object.__setattr__(self, "vector", vec)


class TransferTable:
    """Immutable pattern -> affordance vector lookup."""

    def __init__(self, entries):
        entries = tuple(entries)
        if len(entries) > MAX_ENTRIES:
            raise ValueError(f"table has {len(entries)} entries, limit is {MAX_ENTRIES}")
        lookup: dict[str, tuple[float, ...]] = {}
        for e in entries:
            if e.pattern in lookup:
                raise ValueError(f"duplicate pattern {e.pattern!r}")
            lookup[e.pattern] = e.vector
        self._entries = entries
        self._lookup = lookup

    @property
    def entries(self) -> tuple[TransferEntry, ...]:
        return self._entries

    def __len__(self):
        return len(self._entries)

    def __contains__(self, pattern: str) -> bool:
        return pattern in self._lookup

    def get(self, pattern: str):
        return self._lookup.get(pattern)

    def with_entry(self, entry: TransferEntry) -> "TransferTable":
        return TransferTable(self._entries + (entry,))

    def to_tsv(self) -> str:
        lines = ["\t".join(("pattern",) + AFFORDANCES)]
        for e in self._entries:
            lines.append("\t".join([e.pattern] + [_format_value(v) for v in e.vector]))
        return "\n".join(lines) + "\n"


def _format_value(v: float) -> str:
    return "0.5" if v == 0.5 else str(int(v))


def parse_table(text: str, source: str | None = None) -> TransferTable:
    """Parse the TSV transfer table format.

    The first non-comment line is a header ``pattern`` followed by the 15
    affordance names (aliases allowed). Each further line holds a pattern and
    15 cells from {0, 0.5, 1}. Lines starting with ``#`` are comments.
    """
    column_order = None
    entries: list[TransferEntry] = []
    seen: dict[str, int] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        cells = line.split()
        if column_order is None:
            if cells[0].lower() != "pattern":
                raise TableParseError("header must start with 'pattern'", lineno, source)
            column_order = []
            for name in cells[1:]:
                try:
                    column_order.append(AFFORDANCES.index(canonical_affordance(name)))
                except KeyError:
                    raise TableParseError(f"unknown affordance column {name!r}", lineno, source) from None
            if sorted(column_order) != list(range(NUM_AFFORDANCES)):
                raise TableParseError(
                    f"header must name each of the {NUM_AFFORDANCES} affordances exactly once",
                    lineno,
                    source,
                )
            continue
        pattern, values = cells[0], cells[1:]
        if len(values) != NUM_AFFORDANCES:
            raise TableParseError(
                f"expected {NUM_AFFORDANCES} values for {pattern!r}, got {len(values)}", lineno, source
            )
        vec = [0.0] * NUM_AFFORDANCES
        for col, cell in zip(column_order, values):
            try:
                v = float(cell)
            except ValueError:
                raise TableParseError(f"non-numeric cell {cell!r}", lineno, source) from None
            if v not in PRESENCE_VALUES:
                raise TableParseError(f"value {cell!r} not in {{0, 0.5, 1}}", lineno, source)
            vec[col] = v
        if pattern in seen:
            raise TableParseError(
                f"duplicate pattern {pattern!r} (first defined on line {seen[pattern]})", lineno, source
            )
        if len(entries) == MAX_ENTRIES:
            raise TableParseError(f"more than {MAX_ENTRIES} entries", lineno, source)
        try:
            entries.append(TransferEntry(pattern, tuple(vec)))
        except ValueError as exc:
            raise TableParseError(str(exc), lineno, source) from None
        seen[pattern] = lineno
    if column_order is None:
        raise TableParseError("missing header line", 1, source)
    return TransferTable(entries)


def load_table(path) -> TransferTable:
    with open(path, encoding="utf-8") as f:
        return parse_table(f.read(), source=str(path))


def bundled_table() -> TransferTable:
    """The transfer table shipped with the package; covers the simulator catalog."""
    text = resources.files("affordseg").joinpath("data/transfer_table.tsv").read_text("utf-8")
    return parse_table(text, source="transfer_table.tsv")


def candidate_patterns(path: str) -> list[str]:
    """Lookup order for ``path``, most specific first.

    For ``s1/s2/.../sn``: the full path, then ``*/s2/.../sn``, then the same
    two forms for every shorter suffix, and finally the bare wildcard. The
    wildcard therefore stands for any (possibly multi-segment) prefix.
    """
    segments = path.split("/")
    out: list[str] = []
    for start in range(len(segments)):
        suffix = segments[start:]
        out.append("/".join(suffix))
        if len(suffix) > 1:
            out.append("/".join([WILDCARD] + suffix[1:]))
    out.append(WILDCARD)
    seen = set()
    return [p for p in out if not (p in seen or seen.add(p))]


def resolve(table: TransferTable, path: str):
    """Vector of the most specific matching pattern, or None when nothing matches."""
    if not path:
        raise ValueError("empty label path")
    for pattern in candidate_patterns(path):
        vec = table.get(pattern)
        if vec is not None:
            return vec
    return None


def resolve_map(table: TransferTable, labels: PartLabelMap) -> tuple[AffordanceTensor, CoverageMask]:
    """Per-pixel affordance ground truth and coverage for a part label map."""
    top = int(labels.indices.max(initial=0))
    lut = np.zeros((top + 1, NUM_AFFORDANCES), dtype=np.float32)
    valid = np.zeros(top + 1, dtype=np.uint8)
    for idx, path in labels.legend.items():
        if idx > top:
            continue
        vec = resolve(table, path)
        if vec is not None:
            lut[idx] = vec
            valid[idx] = 1
    values = lut[labels.indices].transpose(2, 0, 1)
    return AffordanceTensor(values), CoverageMask(valid[labels.indices])
