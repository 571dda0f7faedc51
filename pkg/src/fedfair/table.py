"""Per-user accuracy tables and their CSV / JSON forms.

CSV layout::

    [split,]user,local,fedavg,<method>,...

one row per user, accuracies in percent with two decimals. The optional
leading ``split`` column lets several splits share one file.
"""

from __future__ import annotations

import csv
import io
import json
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import FormatError, LengthMismatch, MissingColumn, RangeError

LOCAL = "local"
FEDAVG = "fedavg"


def canonical(name: str) -> str:
    """Lookup key for a method name: 'Per-FedAvg', 'perfedavg', 'PER_FEDAVG' all match."""
    return re.sub(r"[^a-z0-9]", "", name.lower())


@dataclass
class AccuracyTable:
    users: list[str]
    columns: dict[str, np.ndarray] = field(default_factory=dict)
    split_id: str = ""

    def __post_init__(self):
        self.users = [str(u) for u in self.users]
        self.columns = {k: self._checked(k, v) for k, v in self.columns.items()}

    def _checked(self, name, values) -> np.ndarray:
        v = np.asarray(values, dtype=np.float64)
        if v.shape != (len(self.users),):
            raise LengthMismatch(f"column {name!r} has {v.size} values for {len(self.users)} users")
        if (v < 0).any() or (v > 100).any() or not np.isfinite(v).all():
            raise RangeError(f"column {name!r} has values outside [0, 100]")
        return v

    def add(self, name: str, values) -> None:
        self.columns[name] = self._checked(name, values)

    @property
    def methods(self) -> list[str]:
        return list(self.columns)

    def column(self, name: str) -> np.ndarray:
        key = canonical(name)
        for k, v in self.columns.items():
            if canonical(k) == key:
                return v
        raise MissingColumn(f"no column {name!r} in table (have: {', '.join(self.columns)})")

    def resolve(self, name: str) -> str:
        key = canonical(name)
        for k in self.columns:
            if canonical(k) == key:
                return k
        raise MissingColumn(f"no column {name!r} in table (have: {', '.join(self.columns)})")

    def to_csv(self, with_split: bool = False) -> str:
        buf = io.StringIO()
        write_csv([self], buf, with_split=with_split)
        return buf.getvalue()

    def to_json(self) -> str:
        d = {"split_id": self.split_id, "users": self.users,
             "columns": {k: v.tolist() for k, v in self.columns.items()}}
        return json.dumps(d, indent=2) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "AccuracyTable":
        d = json.loads(text)
        return cls(d["users"], d["columns"], d.get("split_id", ""))


def write_csv(tables: list[AccuracyTable], f, with_split: bool | None = None) -> None:
    if with_split is None:
        with_split = len(tables) > 1
    methods = tables[0].methods
    w = csv.writer(f, lineterminator="\n")
    w.writerow((["split"] if with_split else []) + ["user"] + methods)
    for t in tables:
        if t.methods != methods:
            raise FormatError("tables written to one CSV must share their columns")
        for i, u in enumerate(t.users):
            w.writerow(([t.split_id] if with_split else []) + [u] + [f"{t.columns[m][i]:.2f}" for m in methods])


def read_csv(path, split_id: str | None = None) -> list[AccuracyTable]:
    """Read every split in a table CSV (one table when there is no split column)."""
    text = Path(path).read_text()
    rows = [r for r in csv.reader(io.StringIO(text)) if r]
    if not rows:
        raise FormatError(f"{path}: empty table")
    header = [h.strip() for h in rows[0]]
    has_split = header[0].lower() == "split"
    off = 1 if has_split else 0
    if len(header) <= off or header[off].lower() != "user":
        raise FormatError(f"{path}: header must start with [split,]user")
    methods = header[off + 1:]
    groups: dict[str, list[list[str]]] = {}
    for r in rows[1:]:
        if len(r) != len(header):
            raise FormatError(f"{path}: row {r!r} has {len(r)} fields, expected {len(header)}")
        key = r[0] if has_split else (split_id or Path(path).stem)
        groups.setdefault(key, []).append(r)
    tables = []
    for key, rs in groups.items():
        try:
            cols = {m: [float(r[off + 1 + j]) for r in rs] for j, m in enumerate(methods)}
        except ValueError as e:
            raise FormatError(f"{path}: {e}") from None
        tables.append(AccuracyTable([r[off] for r in rs], cols, key))
    return tables


def read_table(path, split: str | None = None) -> AccuracyTable:
    tables = read_csv(path)
    if split is None:
        if len(tables) != 1:
            raise FormatError(f"{path} holds splits {[t.split_id for t in tables]}; pick one")
        return tables[0]
    for t in tables:
        if canonical(t.split_id) == canonical(split):
            return t
    raise MissingColumn(f"{path}: no split {split!r} (have {[t.split_id for t in tables]})")
