"""Panel + refreshment sample data model.

Rows are stored as 0-based integer codes with a separate boolean missing
mask.  Levels are 1-based at every public boundary (cell access, CSV,
schema files); a missing cell is reported as ``None``.

Structural missingness (refreshment Y1 and W, attriter Y2) is never stored
as a flag; it is derived from ``origin`` and ``w``.
"""
from __future__ import annotations

import csv
import enum
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

MISSING_TOKEN = "NA"
ORIGIN_COL = "_origin"
W_COL = "_w"
WEIGHT_COL = "_weight"


class PanelDataError(Exception):
    pass


class SchemaMismatch(PanelDataError):
    pass


class StructuralViolation(PanelDataError):
    pass


class ParseError(PanelDataError):
    def __init__(self, message: str, row: int | None = None, column: str | None = None):
        loc = []
        if row is not None:
            loc.append(f"row {row}")
        if column is not None:
            loc.append(f"column {column!r}")
        super().__init__(f"{message} ({', '.join(loc)})" if loc else message)
        self.row = row
        self.column = column


class Role(str, enum.Enum):
    X = "X"
    Y1 = "Y1"
    Y2 = "Y2"


class Origin(enum.IntEnum):
    PANEL = 0
    REFRESH = 1


_ROLE_ORDER = {Role.X: 0, Role.Y1: 1, Role.Y2: 2}


@dataclass(frozen=True)
class VariableSchema:
    name: str
    role: Role
    levels: int

    def __post_init__(self):
        object.__setattr__(self, "role", Role(self.role))
        if self.levels < 2:
            raise SchemaMismatch(f"variable {self.name!r} needs at least 2 levels, got {self.levels}")


@dataclass(frozen=True)
class Schema:
    """Ordered variable list: X block, then Y1, then Y2."""

    variables: tuple[VariableSchema, ...]

    def __post_init__(self):
        vs = tuple(self.variables)
        object.__setattr__(self, "variables", vs)
        ranks = [_ROLE_ORDER[v.role] for v in vs]
        if ranks != sorted(ranks):
            raise SchemaMismatch("variables must be ordered X, then Y1, then Y2")
        names = [v.name for v in vs]
        if len(set(names)) != len(names):
            raise SchemaMismatch("duplicate variable names")
        for n in names:
            if n.startswith("_"):
                raise SchemaMismatch(f"variable name {n!r} collides with reserved columns")

    @classmethod
    def from_roles(cls, spec: Iterable[tuple[str, str, int]]) -> "Schema":
        return cls(tuple(VariableSchema(n, Role(r), int(d)) for n, r, d in spec))

    def __len__(self) -> int:
        return len(self.variables)

    def __iter__(self):
        return iter(self.variables)

    @property
    def names(self) -> list[str]:
        return [v.name for v in self.variables]

    @property
    def levels(self) -> np.ndarray:
        return np.array([v.levels for v in self.variables], dtype=np.int64)

    def indices(self, role: Role) -> np.ndarray:
        return np.array([j for j, v in enumerate(self.variables) if v.role == role], dtype=np.int64)

    @property
    def x_idx(self) -> np.ndarray:
        return self.indices(Role.X)

    @property
    def y1_idx(self) -> np.ndarray:
        return self.indices(Role.Y1)

    @property
    def y2_idx(self) -> np.ndarray:
        return self.indices(Role.Y2)

    def index(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise KeyError(f"unknown variable {name!r}") from None

    def to_json(self) -> list[dict]:
        return [{"name": v.name, "role": v.role.value, "levels": v.levels} for v in self.variables]

    @classmethod
    def from_json(cls, items: list[dict]) -> "Schema":
        return cls.from_roles((d["name"], d["role"], d["levels"]) for d in items)


def read_schema(path) -> Schema:
    with open(path) as fh:
        return Schema.from_json(json.load(fh))


def write_schema(schema: Schema, path) -> None:
    with open(path, "w") as fh:
        json.dump(schema.to_json(), fh, indent=2)
        fh.write("\n")


@dataclass(frozen=True)
class PanelDataset:
    """Concatenated panel rows followed by refreshment rows.

    ``codes`` holds 0-based levels; entries under ``missing`` are
    meaningless (kept at 0).  ``w`` is 0/1 where ``w_missing`` is False.
    Arrays are made read-only on construction.
    """

    schema: Schema
    codes: np.ndarray
    missing: np.ndarray
    w: np.ndarray
    w_missing: np.ndarray
    origin: np.ndarray
    weights: np.ndarray | None = None

    def __post_init__(self):
        codes = np.array(self.codes, dtype=np.int16, copy=True)
        missing = np.array(self.missing, dtype=bool, copy=True)
        codes[missing] = 0
        w_missing = np.array(self.w_missing, dtype=bool, copy=True)
        w = np.array(self.w, dtype=np.int8, copy=True)
        w[w_missing] = 0
        origin = np.array(self.origin, dtype=np.int8, copy=True)
        weights = None if self.weights is None else np.array(self.weights, dtype=float, copy=True)
        arrays = {"codes": codes, "missing": missing, "w": w, "w_missing": w_missing, "origin": origin}
        if weights is not None:
            arrays["weights"] = weights
        for name, arr in arrays.items():
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        n = origin.shape[0]
        q = len(self.schema)
        if codes.shape != (n, q) or missing.shape != (n, q):
            raise SchemaMismatch(f"expected {n}x{q} code matrix, got {codes.shape}")
        if w.shape != (n,) or w_missing.shape != (n,):
            raise SchemaMismatch("w arrays must have one entry per row")
        if weights is not None and weights.shape != (n,):
            raise SchemaMismatch("weights must have one entry per row")

    @property
    def n(self) -> int:
        return int(self.origin.shape[0])

    @property
    def panel(self) -> np.ndarray:
        return self.origin == Origin.PANEL

    @property
    def refresh(self) -> np.ndarray:
        return self.origin == Origin.REFRESH

    @property
    def n_panel(self) -> int:
        return int(self.panel.sum())

    @property
    def n_refresh(self) -> int:
        return int(self.refresh.sum())

    @property
    def n_cp(self) -> int:
        return int((self.panel & ~self.w_missing & (self.w == 1)).sum())

    @property
    def n_ip(self) -> int:
        return self.n_panel - self.n_cp

    @property
    def row_weights(self) -> np.ndarray:
        if self.weights is None:
            return np.ones(self.n)
        return self.weights

    def structural_mask(self) -> np.ndarray:
        """Cells missing by design: refreshment Y1 and attriter Y2."""
        mask = np.zeros((self.n, len(self.schema)), dtype=bool)
        y1, y2 = self.schema.y1_idx, self.schema.y2_idx
        mask[np.ix_(self.refresh, y1)] = True
        attriter = self.panel & ~self.w_missing & (self.w == 0)
        mask[np.ix_(attriter, y2)] = True
        return mask

    def item_missing_mask(self) -> np.ndarray:
        return self.missing & ~self.structural_mask()

    def cell(self, i: int, j: int) -> int | None:
        """1-based level of cell (i, j), or None when missing."""
        if self.missing[i, j]:
            return None
        return int(self.codes[i, j]) + 1

    def w_value(self, i: int) -> int | None:
        return None if self.w_missing[i] else int(self.w[i])

    def equals(self, other: "PanelDataset") -> bool:
        if self.schema != other.schema:
            return False
        same = (
            np.array_equal(self.missing, other.missing)
            and np.array_equal(self.codes, other.codes)
            and np.array_equal(self.w_missing, other.w_missing)
            and np.array_equal(self.w, other.w)
            and np.array_equal(self.origin, other.origin)
        )
        return same and np.array_equal(self.row_weights, other.row_weights)


@dataclass
class ValidationReport:
    errors: list[tuple[int, str, str]] = field(default_factory=list)
    item_missing_counts: dict[str, dict[str, int]] = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return not self.errors


def _row_to_codes(values: Sequence[int | None], schema: Schema, row: int):
    q = len(schema)
    if len(values) != q:
        raise SchemaMismatch(f"row {row}: expected {q} values, got {len(values)}")
    codes = np.zeros(q, dtype=np.int16)
    miss = np.zeros(q, dtype=bool)
    for j, (v, var) in enumerate(zip(values, schema)):
        if v is None:
            miss[j] = True
            continue
        if not isinstance(v, (int, np.integer)) or not 1 <= v <= var.levels:
            raise SchemaMismatch(f"row {row}, {var.name}: level {v!r} outside 1..{var.levels}")
        codes[j] = v - 1
    return codes, miss


def concatenate(
    panel_rows: Sequence[Sequence[int | None]],
    panel_w: Sequence[int],
    refresh_rows: Sequence[Sequence[int | None]],
    schema: Schema,
    weights: Sequence[float] | None = None,
) -> PanelDataset:
    """Stack panel rows (with observed W) above refreshment rows.

    Rows hold 1-based levels or None.  A refreshment row carrying a Y1
    value, or an attriter carrying a Y2 value, is a StructuralViolation.
    """
    if len(panel_w) != len(panel_rows):
        raise SchemaMismatch("panel_w must have one entry per panel row")
    y1, y2 = schema.y1_idx, schema.y2_idx
    codes, miss = [], []
    for i, (row, w) in enumerate(zip(panel_rows, panel_w)):
        if w not in (0, 1):
            raise SchemaMismatch(f"panel row {i}: w must be 0 or 1, got {w!r}")
        c, m = _row_to_codes(row, schema, i)
        if w == 0 and not m[y2].all():
            raise StructuralViolation(f"panel row {i}: attriter (w=0) has an observed Y2 value")
        codes.append(c)
        miss.append(m)
    for k, row in enumerate(refresh_rows):
        i = len(panel_rows) + k
        c, m = _row_to_codes(row, schema, i)
        if not m[y1].all():
            raise StructuralViolation(f"refreshment row {i}: Y1 must be missing")
        codes.append(c)
        miss.append(m)
    n_p, n_r = len(panel_rows), len(refresh_rows)
    q = len(schema)
    n = n_p + n_r
    w_arr = np.concatenate([np.asarray(panel_w, dtype=np.int8), np.zeros(n_r, dtype=np.int8)])
    w_missing = np.concatenate([np.zeros(n_p, bool), np.ones(n_r, bool)])
    origin = np.concatenate([np.full(n_p, Origin.PANEL), np.full(n_r, Origin.REFRESH)]).astype(np.int8)
    return PanelDataset(
        schema=schema,
        codes=np.array(codes, dtype=np.int16).reshape(n, q),
        missing=np.array(miss, dtype=bool).reshape(n, q),
        w=w_arr,
        w_missing=w_missing,
        origin=origin,
        weights=None if weights is None else np.asarray(weights, dtype=float),
    )


def validate(ds: PanelDataset) -> ValidationReport:
    """Report every invariant violation and per-variable item-missing counts."""
    report = ValidationReport()
    schema = ds.schema
    levels = schema.levels
    bad = ~ds.missing & ((ds.codes < 0) | (ds.codes >= levels[None, :]))
    for i, j in zip(*np.nonzero(bad)):
        report.errors.append((int(i), schema.names[j], "SchemaMismatch"))
    panel, refresh = ds.panel, ds.refresh
    for i in np.nonzero(~(panel | refresh))[0]:
        report.errors.append((int(i), ORIGIN_COL, "SchemaMismatch"))
    for i in np.nonzero(refresh & ~ds.w_missing)[0]:
        report.errors.append((int(i), W_COL, "StructuralViolation"))
    for i in np.nonzero(panel & ds.w_missing)[0]:
        report.errors.append((int(i), W_COL, "StructuralViolation"))
    for i in np.nonzero(panel & ~ds.w_missing & ~np.isin(ds.w, (0, 1)))[0]:
        report.errors.append((int(i), W_COL, "SchemaMismatch"))
    y1, y2 = schema.y1_idx, schema.y2_idx
    for i, jj in zip(*np.nonzero(refresh[:, None] & ~ds.missing[:, y1])):
        report.errors.append((int(i), schema.names[y1[jj]], "StructuralViolation"))
    attriter = panel & ~ds.w_missing & (ds.w == 0)
    for i, jj in zip(*np.nonzero(attriter[:, None] & ~ds.missing[:, y2])):
        report.errors.append((int(i), schema.names[y2[jj]], "StructuralViolation"))
    if ds.weights is not None:
        for i in np.nonzero(~(np.isfinite(ds.weights) & (ds.weights > 0)))[0]:
            report.errors.append((int(i), WEIGHT_COL, "SchemaMismatch"))
    report.errors.sort()

    item = ds.item_missing_mask()
    completer = panel & ~ds.w_missing & (ds.w == 1)
    for j, var in enumerate(schema):
        counts = {"refresh": int(item[refresh, j].sum())}
        if var.role == Role.Y2:
            counts["wave2"] = int(item[completer, j].sum())
        else:
            counts["wave1"] = int(item[panel, j].sum())
        report.item_missing_counts[var.name] = counts
    return report


def read_dataset(path, schema: Schema) -> PanelDataset:
    """Read the CSV layout written by :func:`write_dataset`."""
    path = Path(path)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError("empty file") from None
        missing_cols = [c for c in schema.names + [ORIGIN_COL, W_COL] if c not in header]
        if missing_cols:
            raise ParseError(f"missing columns {missing_cols}", row=0)
        pos = {c: header.index(c) for c in header}
        has_weight = WEIGHT_COL in pos
        q = len(schema)
        codes, miss, w, w_miss, origin, weights = [], [], [], [], [], []
        levels = schema.levels
        for r, rec in enumerate(reader, start=1):
            if not rec:
                continue
            if len(rec) != len(header):
                raise ParseError(f"expected {len(header)} fields, got {len(rec)}", row=r)
            org = rec[pos[ORIGIN_COL]]
            if org not in ("panel", "refresh"):
                raise ParseError(f"bad origin {org!r}", row=r, column=ORIGIN_COL)
            wv = rec[pos[W_COL]]
            if org == "refresh":
                if wv != MISSING_TOKEN:
                    raise ParseError("StructuralViolation: refreshment row with w populated", row=r, column=W_COL)
                w.append(0)
                w_miss.append(True)
            else:
                if wv not in ("0", "1"):
                    raise ParseError(f"panel w must be 0 or 1, got {wv!r}", row=r, column=W_COL)
                w.append(int(wv))
                w_miss.append(False)
            c_row = np.zeros(q, dtype=np.int16)
            m_row = np.zeros(q, dtype=bool)
            for j, name in enumerate(schema.names):
                tok = rec[pos[name]]
                if tok == MISSING_TOKEN:
                    m_row[j] = True
                    continue
                try:
                    lv = int(tok)
                except ValueError:
                    raise ParseError(f"bad level {tok!r}", row=r, column=name) from None
                if not 1 <= lv <= levels[j]:
                    raise SchemaMismatch(f"row {r}, column {name!r}: level {lv} outside 1..{levels[j]}")
                c_row[j] = lv - 1
            codes.append(c_row)
            miss.append(m_row)
            origin.append(Origin.PANEL if org == "panel" else Origin.REFRESH)
            if has_weight:
                try:
                    weights.append(float(rec[pos[WEIGHT_COL]]))
                except ValueError:
                    raise ParseError("bad weight", row=r, column=WEIGHT_COL) from None
    n = len(origin)
    ds = PanelDataset(
        schema=schema,
        codes=np.array(codes, dtype=np.int16).reshape(n, q),
        missing=np.array(miss, dtype=bool).reshape(n, q),
        w=np.array(w, dtype=np.int8),
        w_missing=np.array(w_miss, dtype=bool),
        origin=np.array(origin, dtype=np.int8),
        weights=np.array(weights) if has_weight else None,
    )
    report = validate(ds)
    if report.errors:
        i, col, kind = report.errors[0]
        raise ParseError(kind, row=i + 1, column=col)
    return ds


def write_dataset(ds: PanelDataset, path) -> None:
    names = ds.schema.names
    header = names + [ORIGIN_COL, W_COL] + ([WEIGHT_COL] if ds.weights is not None else [])
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for i in range(ds.n):
            row = [MISSING_TOKEN if ds.missing[i, j] else str(int(ds.codes[i, j]) + 1) for j in range(len(names))]
            row.append("panel" if ds.origin[i] == Origin.PANEL else "refresh")
            row.append(MISSING_TOKEN if ds.w_missing[i] else str(int(ds.w[i])))
            if ds.weights is not None:
                row.append(repr(float(ds.weights[i])))
            writer.writerow(row)


def completed(ds: PanelDataset, codes: np.ndarray, w: np.ndarray) -> PanelDataset:
    """A fully observed copy of ``ds`` with the given codes and W."""
    return PanelDataset(
        schema=ds.schema,
        codes=codes,
        missing=np.zeros_like(ds.missing),
        w=w,
        w_missing=np.zeros(ds.n, dtype=bool),
        origin=ds.origin,
        weights=ds.weights,
    )


def write_completed(ds: PanelDataset, path) -> None:
    """Write a completed dataset; refreshment W is written as imputed."""
    names = ds.schema.names
    header = names + [ORIGIN_COL, W_COL] + ([WEIGHT_COL] if ds.weights is not None else [])
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for i in range(ds.n):
            row = [str(int(c) + 1) for c in ds.codes[i]]
            row.append("panel" if ds.origin[i] == Origin.PANEL else "refresh")
            row.append(str(int(ds.w[i])))
            if ds.weights is not None:
                row.append(repr(float(ds.weights[i])))
            writer.writerow(row)


def read_completed(path, schema: Schema) -> PanelDataset:
    """Inverse of :func:`write_completed` (no structural checks)."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        pos = {c: header.index(c) for c in header}
        for c in schema.names + [ORIGIN_COL, W_COL]:
            if c not in pos:
                raise ParseError(f"missing column {c!r}", row=0)
        rows = [r for r in reader if r]
    idx = [pos[c] for c in schema.names]
    codes = np.array([[int(r[k]) - 1 for k in idx] for r in rows], dtype=np.int16).reshape(len(rows), len(schema))
    if (codes < 0).any() or (codes >= schema.levels[None, :]).any():
        raise SchemaMismatch(f"{path}: level outside schema range")
    origin = np.array([Origin.PANEL if r[pos[ORIGIN_COL]] == "panel" else Origin.REFRESH for r in rows], dtype=np.int8)
    w = np.array([int(r[pos[W_COL]]) for r in rows], dtype=np.int8)
    weights = None
    if WEIGHT_COL in pos:
        weights = np.array([float(r[pos[WEIGHT_COL]]) for r in rows])
    return PanelDataset(schema, codes, np.zeros_like(codes, dtype=bool), w, np.zeros(len(rows), bool), origin, weights)
