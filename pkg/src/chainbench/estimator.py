"""Baseline cardinality estimator: per-column equi-depth histograms combined
under the independence assumption.

Statistics are exact full scans (no sampling): at desk scale exactness is
affordable and removes a noise source, so any drift in estimate quality is
attributable to the staleness of the catalog, not to sampling error. A
catalog is immutable once built and pinned to the state it was built on,
which is what makes the refreshed-vs-stale comparison meaningful.

Composition rules: estimate = product of table row counts, filter
selectivities, and equi-join selectivities (1 / max ndv). Range predicates
interpolate fractional bucket coverage; equality uses the most-common-value
list with an ndv fallback; substring predicates use fixed constants (0.005
contains / 0.995 not-contains) so their failure mode stays transparent.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .chain_model import SCHEMA
from .memstore import SPJQuery, Store


class EstimateError(KeyError):
    pass


@dataclass(frozen=True)
class ColumnStats:
    n_rows: int  # total rows scanned, nulls included
    null_fraction: float
    ndv: int  # distinct non-null values, exact
    boundaries: tuple = ()  # equi-depth bucket bounds over non-null values
    mcv: tuple[tuple[object, float], ...] = ()  # (value, fraction of non-null)
    bool_true_fraction: float | None = None

    @property
    def mcv_mass(self) -> float:
        return sum(f for _, f in self.mcv)

    @property
    def n_buckets(self) -> int:
        return max(0, len(self.boundaries) - 1)


def build_column_stats(values: list, n_buckets: int = 100, mcv_k: int = 10) -> ColumnStats:
    n_rows = len(values)
    non_null = [v for v in values if v is not None]
    null_fraction = 1.0 - len(non_null) / n_rows if n_rows else 0.0

    freq: dict = {}
    for v in non_null:
        freq[v] = freq.get(v, 0) + 1
    ndv = len(freq)

    bool_true_fraction = None
    if non_null and all(isinstance(v, bool) for v in non_null):
        bool_true_fraction = sum(1 for v in non_null if v) / len(non_null)
        return ColumnStats(n_rows, null_fraction, ndv, (), (), bool_true_fraction)

    boundaries: tuple = ()
    if non_null:
        ordered = sorted(non_null)
        n = len(ordered)
        buckets = min(n_buckets, n)
        # Upper bound at each bucket's last rank: populations are equal to
        # within one row by construction.
        bounds = [ordered[0]]
        for j in range(1, buckets + 1):
            bounds.append(ordered[(j * n) // buckets - 1])
        boundaries = tuple(bounds)

    top = sorted(freq.items(), key=lambda kv: (-kv[1], kv[0]))[:mcv_k]
    mcv = tuple((v, c / len(non_null)) for v, c in top) if non_null else ()
    return ColumnStats(n_rows, null_fraction, ndv, boundaries, mcv, bool_true_fraction)


@dataclass
class StatsCatalog:
    built_at: str
    row_counts: dict[str, int]
    columns: dict[tuple[str, str], ColumnStats] = field(default_factory=dict)

    def stats(self, table: str, column: str) -> ColumnStats:
        try:
            return self.columns[(table, column)]
        except KeyError:
            raise EstimateError(f"no statistics for {table}.{column}") from None


def refresh(
    store: Store,
    label: str = "",
    n_buckets: int = 100,
    columns: set[tuple[str, str]] | None = None,
) -> StatsCatalog:
    """Build a catalog from full column scans of the current store state.

    ``columns`` restricts the scan; by default every schema column is covered.
    Rebuilding on an unchanged store yields an identical catalog.
    """
    wanted = columns if columns is not None else {
        (table, name) for table, cols in SCHEMA.items() for name, _ in cols
    }
    cat = StatsCatalog(
        built_at=label,
        row_counts={table: store.row_count(table) for table in SCHEMA},
    )
    for table, name in sorted(wanted):
        values = [getattr(row, name) for row in store.rows(table)]
        cat.columns[(table, name)] = build_column_stats(values, n_buckets=n_buckets)
    return cat


def _interval_fraction(stats: ColumnStats, lo, hi) -> float:
    """Fraction of non-null mass inside [lo, hi], by bucket interpolation."""
    bounds = stats.boundaries
    if not bounds or lo > hi:
        return 0.0
    buckets = len(bounds) - 1
    if buckets == 0:
        return 1.0 if lo <= bounds[0] <= hi else 0.0
    total = 0.0
    for j in range(1, buckets + 1):
        b_lo, b_hi = bounds[j - 1], bounds[j]
        if b_hi < lo or b_lo > hi:
            continue
        if b_lo == b_hi:
            total += 1.0
            continue
        if isinstance(b_lo, (int, float)) and not isinstance(b_lo, bool):
            overlap = min(hi, b_hi) - max(lo, b_lo)
            total += max(0.0, min(1.0, overlap / (b_hi - b_lo)))
        else:
            # Non-numeric ordering: count fully covered buckets, half credit
            # for partially covered ones.
            total += 1.0 if (lo <= b_lo and b_hi <= hi) else 0.5
    return min(1.0, total / buckets)


def _equality_fraction(stats: ColumnStats, value) -> float:
    for v, f in stats.mcv:
        if v == value:
            return f
    k = len(stats.mcv)
    if stats.ndv <= k:
        return 0.0
    return (1.0 - stats.mcv_mass) / (stats.ndv - k)


def _filter_selectivity(stats: ColumnStats, op: str, value) -> float:
    non_null = 1.0 - stats.null_fraction
    if stats.n_rows == 0:
        return 0.0
    if op == "range":
        lo, hi = value
        return non_null * _interval_fraction(stats, lo, hi)
    if op == "ge":
        if not stats.boundaries:
            return 0.0
        return non_null * _interval_fraction(stats, value, stats.boundaries[-1])
    if op == "le":
        if not stats.boundaries:
            return 0.0
        return non_null * _interval_fraction(stats, stats.boundaries[0], value)
    if op == "eq":
        return non_null * _equality_fraction(stats, value)
    if op == "ne":
        return non_null * (1.0 - _equality_fraction(stats, value))
    if op == "is_true":
        return non_null * (stats.bool_true_fraction or 0.0)
    if op == "is_false":
        frac = stats.bool_true_fraction if stats.bool_true_fraction is not None else 1.0
        return non_null * (1.0 - frac)
    if op == "contains":
        return 0.005
    if op == "not_contains":
        return 0.995
    raise ValueError(f"unknown filter op {op!r}")


def estimate(cat: StatsCatalog, q: SPJQuery) -> float:
    """Estimated output cardinality of the join+filter; never negative."""
    amap = q.alias_map
    result = 1.0
    for table in amap.values():
        result *= cat.row_counts[table]
    for f in q.filters:
        stats = cat.stats(amap[f.alias], f.column)
        result *= _filter_selectivity(stats, f.op, f.value)
    for edge in q.joins:
        left = cat.stats(amap[edge.left_alias], edge.left_column)
        right = cat.stats(amap[edge.right_alias], edge.right_column)
        top_ndv = max(left.ndv, right.ndv)
        result *= (1.0 / top_ndv) if top_ndv else 0.0
    return max(0.0, result)


# ---------------------------------------------------------------------------
# JSON round trip, so a stale ("initial") catalog can be pinned and replayed.


def _encode_value(v):
    if v is None:
        return None
    if isinstance(v, bool):
        return {"t": v}
    if isinstance(v, int):
        return {"i": str(v)}
    if isinstance(v, float):
        return {"f": v}
    if isinstance(v, bytes):
        return {"b": "0x" + v.hex()}
    if isinstance(v, str):
        return {"s": v}
    if isinstance(v, tuple):  # list-valued columns such as function_sighashes
        return {"l": [_encode_value(x) for x in v]}
    raise TypeError(f"unsupported stat value {type(v).__name__}")


def _decode_value(v):
    if v is None:
        return None
    if "t" in v:
        return v["t"]
    if "i" in v:
        return int(v["i"])
    if "f" in v:
        return v["f"]
    if "b" in v:
        return bytes.fromhex(v["b"][2:])
    if "l" in v:
        return tuple(_decode_value(x) for x in v["l"])
    return v["s"]


def catalog_to_dict(cat: StatsCatalog) -> dict:
    return {
        "built_at": cat.built_at,
        "row_counts": dict(sorted(cat.row_counts.items())),
        "columns": {
            f"{table}.{col}": {
                "n_rows": st.n_rows,
                "null_fraction": st.null_fraction,
                "ndv": st.ndv,
                "boundaries": [_encode_value(b) for b in st.boundaries],
                "mcv": [[_encode_value(v), f] for v, f in st.mcv],
                "bool_true_fraction": st.bool_true_fraction,
            }
            for (table, col), st in sorted(cat.columns.items())
        },
    }


def catalog_from_dict(data: dict) -> StatsCatalog:
    cat = StatsCatalog(built_at=data["built_at"], row_counts=dict(data["row_counts"]))
    for key, st in data["columns"].items():
        table, col = key.rsplit(".", 1)
        cat.columns[(table, col)] = ColumnStats(
            n_rows=st["n_rows"],
            null_fraction=st["null_fraction"],
            ndv=st["ndv"],
            boundaries=tuple(_decode_value(b) for b in st["boundaries"]),
            mcv=tuple((_decode_value(v), f) for v, f in st["mcv"]),
            bool_true_fraction=st["bool_true_fraction"],
        )
    return cat


def save_catalog(cat: StatsCatalog, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(catalog_to_dict(cat), fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_catalog(path: str | Path) -> StatsCatalog:
    with open(path, encoding="utf-8") as fh:
        return catalog_from_dict(json.load(fh))
