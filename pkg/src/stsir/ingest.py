"""Loading and preparing county-level case panels.

Case files follow the NYT county layout (``date,county,state,fips,cases,deaths``)
with cumulative counts; everything downstream works on daily counts.
"""
from __future__ import annotations

import csv
import datetime as dt
import os
from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np


class DataError(ValueError):
    """Raised for malformed or inconsistent input data."""


@dataclass(frozen=True)
class RawCumulativeRecord:
    date: dt.date
    region_id: str
    cumulative_cases: int
    cumulative_deaths: int

    def __post_init__(self):
        if self.cumulative_cases < 0 or self.cumulative_deaths < 0:
            raise DataError(f"negative cumulative count for {self.region_id} on {self.date}")


@dataclass
class PanelData:
    """County x day panel of daily counts.

    ``sym`` and ``deaths`` are (m, T) arrays of daily counts. ``smoothed`` is an
    optional (m, T) float array of 3-day centered averages of ``sym``.
    """

    region_ids: list[str]
    dates: list[dt.date]
    sym: np.ndarray
    deaths: np.ndarray
    sus_init: np.ndarray
    poverty: np.ndarray
    smoothed: np.ndarray | None = None

    def __post_init__(self):
        self.sym = np.asarray(self.sym)
        self.deaths = np.asarray(self.deaths)
        self.sus_init = np.asarray(self.sus_init, dtype=float)
        self.poverty = np.asarray(self.poverty, dtype=float)
        m, T = len(self.region_ids), len(self.dates)
        if m < 1 or T < 2:
            raise DataError(f"panel needs at least 1 region and 2 days, got {m}x{T}")
        for name in ("sym", "deaths"):
            arr = getattr(self, name)
            if arr.shape != (m, T):
                raise DataError(f"{name} has shape {arr.shape}, expected {(m, T)}")
            if np.any(arr < 0):
                raise DataError(f"{name} contains negative counts")
        if self.sus_init.shape != (m,) or self.poverty.shape != (m,):
            raise DataError("sus_init and poverty must have one entry per region")
        if np.any(self.sus_init <= 0):
            raise DataError("sus_init must be positive")
        totals = self.sym.sum(axis=1)
        bad = np.nonzero(totals >= self.sus_init)[0]
        if bad.size:
            rid = self.region_ids[bad[0]]
            raise DataError(f"region {rid}: total cases {totals[bad[0]]} exceed susceptibles {self.sus_init[bad[0]]}")
        if self.smoothed is not None:
            self.smoothed = np.asarray(self.smoothed, dtype=float)
            if self.smoothed.shape != (m, T) or np.any(self.smoothed < 0):
                raise DataError("smoothed must be a non-negative (m, T) array")

    @property
    def m(self) -> int:
        return len(self.region_ids)

    @property
    def T(self) -> int:
        return len(self.dates)

    def with_smoothing(self) -> "PanelData":
        sm = np.vstack([smooth_3day_centered(row) for row in self.sym.astype(float)])
        return PanelData(self.region_ids, self.dates, self.sym, self.deaths,
                         self.sus_init, self.poverty, smoothed=sm)

    def subset(self, rows: Sequence[int]) -> "PanelData":
        rows = list(rows)
        return PanelData(
            [self.region_ids[r] for r in rows], list(self.dates),
            self.sym[rows], self.deaths[rows], self.sus_init[rows], self.poverty[rows],
            None if self.smoothed is None else self.smoothed[rows],
        )

    def truncate(self, n_days: int) -> "PanelData":
        """First ``n_days`` days of the panel."""
        return PanelData(
            self.region_ids, self.dates[:n_days], self.sym[:, :n_days], self.deaths[:, :n_days],
            self.sus_init, self.poverty,
            None if self.smoothed is None else self.smoothed[:, :n_days],
        )


@dataclass
class AdjacencyGraph:
    """Undirected neighbour structure in CSR form (``adj``/``offsets``/``num``)."""

    m: int
    adj: np.ndarray
    num: np.ndarray
    offsets: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        self.adj = np.asarray(self.adj, dtype=np.int64)
        self.num = np.asarray(self.num, dtype=np.int64)
        if self.offsets is None:
            self.offsets = np.concatenate([[0], np.cumsum(self.num)]).astype(np.int64)
        else:
            self.offsets = np.asarray(self.offsets, dtype=np.int64)
        if self.num.shape != (self.m,) or int(self.num.sum()) != len(self.adj):
            raise DataError("num must have m entries summing to len(adj)")
        nbrs = [set(self.neighbors(i)) for i in range(self.m)]
        for i, s in enumerate(nbrs):
            if len(s) != self.num[i]:
                raise DataError(f"duplicate neighbour entries for region index {i}")
            if i in s:
                raise DataError(f"self-loop at region index {i}")
            for l in s:
                if i not in nbrs[l]:
                    raise DataError(f"asymmetric adjacency between {i} and {l}")

    @classmethod
    def from_edges(cls, m: int, edges: Iterable[tuple[int, int]]) -> "AdjacencyGraph":
        nb: list[set[int]] = [set() for _ in range(m)]
        for a, b in edges:
            if a == b:
                raise DataError(f"self-loop at region index {a}")
            nb[a].add(b)
            nb[b].add(a)
        adj = [l for s in nb for l in sorted(s)]
        return cls(m, np.array(adj, dtype=np.int64), np.array([len(s) for s in nb]))

    @classmethod
    def ring(cls, m: int) -> "AdjacencyGraph":
        if m < 3:
            return cls.from_edges(m, [(i, i + 1) for i in range(m - 1)])
        return cls.from_edges(m, [(i, (i + 1) % m) for i in range(m)])

    def neighbors(self, i: int) -> np.ndarray:
        return self.adj[self.offsets[i]:self.offsets[i + 1]]

    def edges(self) -> list[tuple[int, int]]:
        return [(i, int(l)) for i in range(self.m) for l in self.neighbors(i) if i < l]

    def is_connected(self) -> bool:
        seen = {0}
        queue = deque([0])
        while queue:
            i = queue.popleft()
            for l in self.neighbors(i):
                if int(l) not in seen:
                    seen.add(int(l))
                    queue.append(int(l))
        return len(seen) == self.m

    def permuted(self, perm: Sequence[int]) -> "AdjacencyGraph":
        """Graph with region ``k`` relabelled as ``perm[k]``."""
        return AdjacencyGraph.from_edges(self.m, [(perm[a], perm[b]) for a, b in self.edges()])


def cumulative_to_daily(series) -> np.ndarray:
    """Difference a cumulative series, clamping downward revisions to zero."""
    x = np.asarray(series, dtype=np.int64)
    if x.ndim != 1 or x.size < 1:
        raise ValueError("series must be a non-empty 1-d sequence")
    out = np.empty_like(x)
    out[0] = x[0]
    out[1:] = np.maximum(np.diff(x), 0)
    return out


def smooth_3day_centered(series) -> np.ndarray:
    """Centered 3-day moving average; the two endpoints average over 2 days."""
    x = np.asarray(series, dtype=float)
    if x.ndim != 1 or x.size < 1:
        raise ValueError("series must be a non-empty 1-d sequence")
    if x.size == 1:
        return x.copy()
    # written as deviations from the centre value so constant series come back exactly
    out = np.empty_like(x)
    out[1:-1] = x[1:-1] + ((x[:-2] - x[1:-1]) + (x[2:] - x[1:-1])) / 3.0
    out[0] = x[0] + (x[1] - x[0]) / 2.0
    out[-1] = x[-1] + (x[-2] - x[-1]) / 2.0
    return np.maximum(out, 0.0) if np.all(x >= 0) else out


def _parse_date(text: str, where: str) -> dt.date:
    try:
        return dt.date.fromisoformat(text.strip())
    except ValueError as exc:
        raise DataError(f"{where}: bad date {text!r}") from exc


def _read_rows(path, required: Sequence[str]):
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = [c for c in required if c not in (reader.fieldnames or [])]
        if missing:
            raise DataError(f"{path}: missing columns {missing}")
        for row in reader:
            yield reader.line_num, row


def _read_keyed_column(path, column: str) -> dict[str, float]:
    out = {}
    for line, row in _read_rows(path, ["fips", column]):
        try:
            out[row["fips"].strip()] = float(row[column])
        except (TypeError, ValueError) as exc:
            raise DataError(f"{path}:{line}: cannot parse {column}={row[column]!r}") from exc
    return out


def read_case_records(path) -> list[RawCumulativeRecord]:
    records = []
    for line, row in _read_rows(path, ["date", "fips", "cases", "deaths"]):
        where = f"{path}:{line}"
        try:
            cases = int(float(row["cases"]))
            deaths = int(float(row["deaths"] or 0))
        except (TypeError, ValueError) as exc:
            raise DataError(f"{where}: unparseable counts") from exc
        fips = (row["fips"] or "").strip()
        if not fips:
            raise DataError(f"{where}: empty fips")
        try:
            records.append(RawCumulativeRecord(_parse_date(row["date"], where), fips, cases, deaths))
        except DataError as exc:
            raise DataError(f"{where}: {exc}") from exc
    return records


def load_panel(cases_path, population_path, covariate_path,
               date_range: tuple[dt.date | str, dt.date | str]) -> PanelData:
    """Build a daily-count panel from cumulative NYT-style records.

    Regions are sorted by id. A region missing on a given day carries its last
    cumulative value forward (zero before its first record), so it contributes
    no new cases that day. Differencing is done over the full file history so
    that the first day of ``date_range`` is a true daily count.
    """
    start, end = (d if isinstance(d, dt.date) else _parse_date(d, "date_range") for d in date_range)
    if end < start:
        raise DataError("empty date range")
    records = read_case_records(cases_path)
    pop = _read_keyed_column(population_path, "population")
    cov = _read_keyed_column(covariate_path, "pct_poverty")

    region_ids = sorted({r.region_id for r in records})
    if not region_ids:
        raise DataError(f"{cases_path}: no case records")
    for rid in region_ids:
        if rid not in pop:
            raise DataError(f"region {rid} missing from population file {population_path}")
        if rid not in cov:
            raise DataError(f"region {rid} missing from covariate file {covariate_path}")

    first = min(min(r.date for r in records), start)
    n_all = (end - first).days + 1
    index = {rid: k for k, rid in enumerate(region_ids)}
    cum_c = np.full((len(region_ids), n_all), -1, dtype=np.int64)
    cum_d = np.full_like(cum_c, -1)
    for r in records:
        j = (r.date - first).days
        if 0 <= j < n_all:
            cum_c[index[r.region_id], j] = r.cumulative_cases
            cum_d[index[r.region_id], j] = r.cumulative_deaths
    for arr in (cum_c, cum_d):
        for row in arr:
            last = 0
            for j in range(n_all):
                if row[j] < 0:
                    row[j] = last
                else:
                    last = row[j]
    sym = np.vstack([cumulative_to_daily(row) for row in cum_c])
    deaths = np.vstack([cumulative_to_daily(row) for row in cum_d])
    lo = (start - first).days
    dates = [start + dt.timedelta(days=k) for k in range(n_all - lo)]
    return PanelData(
        region_ids, dates, sym[:, lo:], deaths[:, lo:],
        np.array([pop[r] for r in region_ids]), np.array([cov[r] for r in region_ids]),
    )


def load_adjacency(path, region_ids: Sequence[str]) -> AdjacencyGraph:
    index = {rid: k for k, rid in enumerate(region_ids)}
    edges = []
    for line, row in _read_rows(path, ["fips_a", "fips_b"]):
        a, b = row["fips_a"].strip(), row["fips_b"].strip()
        for name in (a, b):
            if name not in index:
                raise DataError(f"{path}:{line}: unknown region {name!r}")
        if a == b:
            raise DataError(f"{path}:{line}: self-loop at region {a!r}")
        edges.append((index[a], index[b]))
    return AdjacencyGraph.from_edges(len(region_ids), edges)


def _atomic_write(path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    tmp = f"{path}.tmp"
    with open(tmp, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)
    os.replace(tmp, path)


def write_panel_csvs(panel: PanelData, cases_path, population_path, covariate_path,
                     county: str = "", state: str = "") -> None:
    """Write a panel in the ingest formats, with cumulative case and death counts."""
    cc = np.cumsum(panel.sym, axis=1)
    cd = np.cumsum(panel.deaths, axis=1)
    rows = [
        (d.isoformat(), county or rid, state, rid, int(cc[i, j]), int(cd[i, j]))
        for j, d in enumerate(panel.dates)
        for i, rid in enumerate(panel.region_ids)
    ]
    _atomic_write(cases_path, ["date", "county", "state", "fips", "cases", "deaths"], rows)
    _atomic_write(population_path, ["fips", "population"],
                  [(rid, repr(float(s))) for rid, s in zip(panel.region_ids, panel.sus_init)])
    _atomic_write(covariate_path, ["fips", "pct_poverty"],
                  [(rid, repr(float(x))) for rid, x in zip(panel.region_ids, panel.poverty)])


def write_adjacency(graph: AdjacencyGraph, region_ids: Sequence[str], path) -> None:
    _atomic_write(path, ["fips_a", "fips_b"],
                  [(region_ids[a], region_ids[b]) for a, b in graph.edges()])
