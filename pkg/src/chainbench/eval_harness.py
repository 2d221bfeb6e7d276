"""Experiment machinery: subquery enumeration, Q-error drift series, latency
measurement, and plan-regret matrices.

Q-error is the multiplicative estimation error max(e, a) / min(e, a) with
both operands clamped up to 1 first, so a true-zero or estimated-zero
cardinality yields a finite, symmetric value. Regret matrices compare how a
plan optimized for one state performs on another, per estimated cost (c_e)
or measured latency (c_r); against targets without plan capture the matrix
runs in recorded-measurement mode, consuming externally captured values.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

from . import estimator, memstore
from .memstore import SPJQuery, Store


@dataclass(frozen=True)
class QErrorPoint:
    state: str
    subquery: str
    estimated: float
    actual: int
    qerror: float
    policy: str  # "refreshed" | "initial"


@dataclass(frozen=True)
class PlanMeasurement:
    plan_for: str  # state the plan was optimized on (S_x)
    run_on: str  # state the plan was executed on (S_y)
    c_e: float | None = None  # optimizer-estimated cost, abstract units
    c_r: float | None = None  # measured latency, ms (median)
    reps: int = 0

    def __post_init__(self) -> None:
        if self.c_r is not None:
            if self.c_r <= 0:
                raise ValueError("measured latency must be positive")
            if self.reps < 11:
                raise ValueError("latency measurements require reps >= 11")


class LatencyError(RuntimeError):
    pass


def qerror(estimated: float, actual: float) -> float:
    e = max(float(estimated), 1.0)
    a = max(float(actual), 1.0)
    return max(e, a) / min(e, a)


def enumerate_subqueries(q: SPJQuery, max_tables: int) -> list[SPJQuery]:
    """Every connected induced subquery with 1..max_tables tables.

    Each subquery keeps all filters applicable to its tables and all join
    edges internal to it, in a canonical order (table-set lexicographic).
    """
    aliases = sorted(q.alias_map)
    adj: dict[str, set[str]] = {a: set() for a in aliases}
    for e in q.joins:
        adj[e.left_alias].add(e.right_alias)
        adj[e.right_alias].add(e.left_alias)

    found: set[frozenset[str]] = {frozenset((a,)) for a in aliases}
    frontier = list(found)
    while frontier:
        current = frontier.pop()
        if len(current) >= max_tables:
            continue
        for member in current:
            for neighbor in adj[member]:
                if neighbor in current:
                    continue
                grown = current | {neighbor}
                if grown not in found:
                    found.add(grown)
                    frontier.append(grown)

    amap = q.alias_map
    subsets = sorted(tuple(sorted(s)) for s in found if len(s) <= max_tables)
    out = []
    for subset in subsets:
        members = set(subset)
        out.append(
            SPJQuery(
                tables=tuple((a, amap[a]) for a in subset),
                joins=tuple(e for e in q.joins if e.left_alias in members and e.right_alias in members),
                filters=tuple(f for f in q.filters if f.alias in members),
            )
        )
    return out


def subquery_columns(q: SPJQuery) -> set[tuple[str, str]]:
    """(table, column) pairs a catalog must cover to estimate ``q``."""
    amap = q.alias_map
    cols = {(amap[f.alias], f.column) for f in q.filters}
    for e in q.joins:
        cols.add((amap[e.left_alias], e.left_column))
        cols.add((amap[e.right_alias], e.right_column))
    return cols


def evaluate_state(
    label: str,
    store: Store,
    subqueries: Sequence[SPJQuery],
    catalog: estimator.StatsCatalog,
    policy: str,
) -> list[QErrorPoint]:
    """Estimate vs exact count for each subquery on one frozen state."""
    points = []
    for sub in subqueries:
        est = estimator.estimate(catalog, sub)
        actual = memstore.count(store, sub)
        points.append(
            QErrorPoint(
                state=label,
                subquery=sub.label(),
                estimated=est,
                actual=actual,
                qerror=qerror(est, actual),
                policy=policy,
            )
        )
    return points


def drift_experiment(
    states: Sequence[tuple[str, Store]],
    q: SPJQuery,
    max_tables: int,
    policy: str,
    n_buckets: int = 100,
) -> list[QErrorPoint]:
    """Q-error series across states for every subquery of ``q``.

    With ``policy="refreshed"`` the catalog is rebuilt on every state; with
    ``policy="initial"`` the first state's catalog is reused throughout.
    Actual counts always come from the current state.
    """
    if not states:
        raise ValueError("drift_experiment needs at least one state")
    if policy not in ("refreshed", "initial"):
        raise ValueError(f"unknown policy {policy!r}")
    subqueries = enumerate_subqueries(q, max_tables)
    needed = set().union(*(subquery_columns(s) for s in subqueries))
    points: list[QErrorPoint] = []
    catalog = None
    for label, store in states:
        if policy == "refreshed" or catalog is None:
            built_on = label if policy == "refreshed" else states[0][0]
            source = store if policy == "refreshed" else states[0][1]
            catalog = estimator.refresh(source, label=built_on, n_buckets=n_buckets, columns=needed)
        points.extend(evaluate_state(label, store, subqueries, catalog, policy))
    return points


@dataclass(frozen=True)
class LatencyResult:
    median_ms: float
    samples: tuple[float, ...]


def measure_latency(executor, query_text: str, reps: int = 11) -> LatencyResult:
    """Median (lower-middle) of ``reps`` sequential executions, all samples kept.

    Executors exposing ``timed_execute(sql) -> ms`` report their own timings;
    otherwise ``execute(sql)`` is timed with a wall clock.
    """
    if reps < 11:
        raise ValueError(f"reps must be >= 11, got {reps}")
    samples: list[float] = []
    timed = getattr(executor, "timed_execute", None)
    for attempt in range(reps):
        try:
            if timed is not None:
                samples.append(float(timed(query_text)))
            else:
                start = time.perf_counter()
                executor.execute(query_text)
                samples.append((time.perf_counter() - start) * 1000.0)
        except Exception as exc:
            raise LatencyError(f"execution failed at attempt {attempt}: {exc}") from exc
    ordered = sorted(samples)
    median = ordered[(len(ordered) - 1) // 2]
    return LatencyResult(median_ms=median, samples=tuple(samples))


TIE_TOLERANCE = 0.005


@dataclass
class RegretMatrix:
    """Square table of cost ratios: cell (x, y) = C(P(S_x), S_y) / C(P(S_y), S_y)."""

    states: tuple[str, ...]
    metric: str  # "ce" | "cr"
    ratios: dict[tuple[str, str], float]

    def ratio(self, plan_for: str, run_on: str) -> float:
        return self.ratios[(plan_for, run_on)]

    def cell_text(self, plan_for: str, run_on: str) -> str:
        if plan_for == run_on:
            return "-"
        r = self.ratios[(plan_for, run_on)]
        if abs(r - 1.0) <= TIE_TOLERANCE:
            return "1.00×"
        if r > 1.0:
            return f"↓{r:.2f}×"  # regression
        return f"↑{1.0 / r:.2f}×"  # speedup

    def rows(self) -> list[list[str]]:
        header = ["plan"] + list(self.states)
        out = [header]
        for x in self.states:
            out.append([f"P({x})"] + [self.cell_text(x, y) for y in self.states])
        return out


def regret_matrix(measurements: Iterable[PlanMeasurement], metric: str) -> RegretMatrix:
    """Build the regret matrix from (plan state, run state) measurements.

    Requires one measurement per (plan, state) pair for the chosen metric,
    including the diagonal denominators C(P(S_y), S_y).
    """
    if metric not in ("ce", "cr"):
        raise ValueError(f"unknown metric {metric!r}")
    pick: Callable[[PlanMeasurement], float | None] = (lambda m: m.c_e) if metric == "ce" else (lambda m: m.c_r)
    values: dict[tuple[str, str], float] = {}
    states: set[str] = set()
    for m in measurements:
        states.add(m.plan_for)
        states.add(m.run_on)
        v = pick(m)
        if v is not None:
            values[(m.plan_for, m.run_on)] = v
    ordered = tuple(sorted(states))
    ratios: dict[tuple[str, str], float] = {}
    for y in ordered:
        if (y, y) not in values:
            raise ValueError(f"missing measurement for plan P({y}) on state {y} ({metric})")
        base = values[(y, y)]
        for x in ordered:
            if x == y:
                continue
            if (x, y) not in values:
                raise ValueError(f"missing measurement for plan P({x}) on state {y} ({metric})")
            ratios[(x, y)] = values[(x, y)] / base
    return RegretMatrix(states=ordered, metric=metric, ratios=ratios)
