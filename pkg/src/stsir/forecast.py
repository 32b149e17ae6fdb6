"""Posterior prediction and forward simulation."""
from __future__ import annotations

import datetime as dt
import math
import zlib
from dataclasses import dataclass, field

import numpy as np

from .ingest import AdjacencyGraph, PanelData
from .mcmc import ChainTrace, SamplerError
from .model import (
    ICPT_SCALAR, ICPT_TIME, TAUY, DataModel, Layout, ModelSpec, ParamVector, Variant,
    build_design, log_mean, transmission_term,
)


class SimulationError(RuntimeError):
    """Raised when a scenario produces an exploding epidemic."""


@dataclass
class ForecastResult:
    region_ids: list[str]
    mean: np.ndarray
    lower95: np.ndarray
    upper95: np.ndarray
    n_draws: int
    draws: np.ndarray | None = None

    def rows(self):
        for k, rid in enumerate(self.region_ids):
            yield rid, float(self.mean[k]), float(self.lower95[k]), float(self.upper95[k]), self.n_draws


def _check_trace(trace: ChainTrace, panel: PanelData, spec: ModelSpec) -> None:
    if len(trace) == 0:
        raise SamplerError("trace has no draws")
    if trace.spec.digest() != spec.digest():
        raise SamplerError("trace was produced by a different model spec")
    if trace.layout.m != panel.m or trace.layout.T != panel.T:
        raise SamplerError(f"trace is for a {trace.layout.m}x{trace.layout.T} panel, "
                           f"got {panel.m}x{panel.T}")


def next_day_predictor(trace: ChainTrace, panel: PanelData, spec: ModelSpec,
                       graph: AdjacencyGraph | None) -> np.ndarray:
    """``log mu_{i,T+1}`` for every draw, shape (n_draws, m).

    Susceptibles are advanced one day with the observed day-T counts. The
    time-varying intercept of M4 has no value beyond day T, so its last value is
    carried forward.
    """
    design = build_design(panel, spec, graph)
    lay = design.layout
    counts = design.counts
    st = design.state
    last = counts[:, -1]
    s_next = st.sus[:, -1] - last - spec.phi * last - spec.beta_rc * last - panel.deaths[:, -1]
    s_next = np.maximum(s_next, 0.0)
    ext = np.concatenate([counts, np.zeros((panel.m, 1))], axis=1)
    L_next = transmission_term(ext, spec, graph)[:, -1]
    th = trace.theta
    eta = np.log(s_next + spec.offset)[None, :] + th[:, [lay.i_b1]] * L_next[None, :]
    eta = eta + th[:, [lay.i_b2]] * design.x[None, :] + th[:, lay.i_u:lay.i_tau]
    if lay.icpt_kind == ICPT_SCALAR:
        eta = eta + th[:, [0]]
    elif lay.icpt_kind == ICPT_TIME:
        eta = eta + th[:, [lay.T - 1]]
    else:
        eta = eta + th[:, : lay.m]
    return eta


def _predictive(eta: np.ndarray, trace: ChainTrace, spec: ModelSpec, rng) -> np.ndarray:
    if spec.data_model == DataModel.LOGNORMAL:
        tau_y = trace.theta[:, trace.layout.i_tau + TAUY].reshape((-1,) + (1,) * (eta.ndim - 1))
        ystar = eta + rng.standard_normal(eta.shape) / np.sqrt(tau_y)
        return np.maximum(np.exp(ystar) - spec.offset, 0.0)
    return rng.poisson(np.exp(eta)).astype(float)


def one_step_forecast(trace: ChainTrace, panel: PanelData, spec: ModelSpec,
                      graph: AdjacencyGraph | None, seed: int = 0) -> ForecastResult:
    """Posterior predictive distribution of day T+1, with equal-tailed 95% intervals.

    Each region draws from its own stream keyed by its id, so relabeling or
    reordering regions permutes the result exactly.
    """
    _check_trace(trace, panel, spec)
    eta = next_day_predictor(trace, panel, spec, graph)
    draws = np.empty_like(eta)
    for k, rid in enumerate(panel.region_ids):
        rng = np.random.default_rng([seed, zlib.crc32(str(rid).encode())])
        draws[:, k] = _predictive(eta[:, k], trace, spec, rng)
    srt = np.sort(draws, axis=0)
    lo, hi = np.quantile(srt, [0.025, 0.975], axis=0)
    return ForecastResult(list(panel.region_ids), srt.mean(axis=0), lo, hi, len(trace), draws)


def replicate_within_sample(trace: ChainTrace, panel: PanelData, spec: ModelSpec,
                            graph: AdjacencyGraph | None = None, seed: int = 0) -> np.ndarray:
    """One replicate data set per stored mean snapshot, shape (n, m, T)."""
    if trace.mu_snapshots is None:
        raise SamplerError("trace has no mean snapshots; rerun with store_mu=True")
    mu = np.maximum(np.asarray(trace.mu_snapshots, dtype=float), 0.0)
    return _predictive(np.log(mu + 1e-300), trace, spec, np.random.default_rng(seed))


# --- simulation -------------------------------------------------------------

def sample_icar(graph: AdjacencyGraph, tau: float, rng: np.random.Generator) -> np.ndarray:
    """Draw a zero-sum ICAR field with precision ``tau`` on a connected graph."""
    m = graph.m
    if m == 1:
        return np.zeros(1)
    Q = np.zeros((m, m))
    for i in range(m):
        Q[i, i] = graph.num[i]
        Q[i, graph.neighbors(i)] = -1.0
    w, V = np.linalg.eigh(tau * Q)
    keep = w > 1e-9 * w.max()
    b = V[:, keep] @ (rng.standard_normal(int(keep.sum())) / np.sqrt(w[keep]))
    return b - b.mean()


@dataclass
class SimScenario:
    m: int
    T: int
    params: ParamVector
    spec: ModelSpec
    graph: AdjacencyGraph | None
    sus_init: np.ndarray
    poverty: np.ndarray
    seed: int = 0
    death_prob: float = 0.02
    death_lag: int = 2
    start_date: dt.date = dt.date(2020, 4, 2)
    region_ids: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.sus_init = np.broadcast_to(np.asarray(self.sus_init, dtype=float), (self.m,)).copy()
        self.poverty = np.broadcast_to(np.asarray(self.poverty, dtype=float), (self.m,)).copy()
        if not self.region_ids:
            width = max(2, len(str(self.m)))
            self.region_ids = [f"R{k + 1:0{width}d}" for k in range(self.m)]
        if len(self.region_ids) != self.m:
            raise ValueError("region_ids must have m entries")
        if self.T < 2:
            raise ValueError("need T >= 2")


def simulate_panel(scenario: SimScenario) -> PanelData:
    """Forward-simulate daily counts from the model with known parameters.

    Day-1 counts are Poisson with mean ``day1_rate * S_i1``. Each later day runs
    the accounting update, then draws Poisson counts from the model mean; a day's
    symptomatic plus asymptomatic infections are capped by the susceptibles left.
    Deaths are Binomial(cases ``death_lag`` days earlier, ``death_prob``).
    """
    sc, spec = scenario, scenario.spec
    m, T = sc.m, sc.T
    rng = np.random.default_rng(sc.seed)
    lay = Layout(spec, m, T)
    p = lay.unpack(lay.pack(sc.params))
    sym = np.zeros((m, T), dtype=np.int64)
    deaths = np.zeros((m, T), dtype=np.int64)
    sus = np.empty((m, T))
    sus[:, 0] = sc.sus_init
    sym[:, 0] = rng.poisson(spec.day1_rate * sc.sus_init)
    nbrs = [sc.graph.neighbors(i) for i in range(m)] if sc.graph is not None else [np.zeros(0, int)] * m
    for j in range(1, T):
        prev = sym[:, j - 1].astype(float)
        rc = spec.beta_rc * prev if j - 1 >= 1 else np.zeros(m)
        s = sus[:, j - 1] - prev - spec.phi * prev - rc - deaths[:, j - 1]
        sus[:, j] = np.maximum(s, 0.0)
        ty = (1.0 + spec.phi) * prev
        mu = np.empty(m)
        for i in range(m):
            nty = float(ty[nbrs[i]].sum()) if spec.variant == Variant.M2 else 0.0
            mu[i] = math.exp(log_mean(spec, p, i, j, prev[i], sus[i, j], sc.poverty[i], nty))
        if np.any(mu > 10.0 * sc.sus_init):
            i = int(np.argmax(mu / sc.sus_init))
            raise SimulationError(f"explosive scenario: day {j + 1}, region {sc.region_ids[i]} "
                                  f"has mean {mu[i]:.4g} > 10 x susceptibles")
        cap = np.floor(np.maximum(sus[:, j] - 1.0, 0.0) / (1.0 + spec.phi))
        sym[:, j] = np.minimum(rng.poisson(mu), cap).astype(np.int64)
        if j >= sc.death_lag:
            deaths[:, j] = rng.binomial(sym[:, j - sc.death_lag], sc.death_prob)
    dates = [sc.start_date + dt.timedelta(days=k) for k in range(T)]
    return PanelData(list(sc.region_ids), dates, sym, deaths, sc.sus_init.copy(), sc.poverty.copy())


def scenario_from_dict(d: dict) -> SimScenario:
    """Build a scenario from its JSON form.

    ``params`` takes ``b0``, ``b1``, ``b2``, ``tau_b``, ``tau_v`` and optionally the
    vectors ``b_spatial``, ``b0_time``, ``b0_space``, ``v``. Missing spatial vectors
    are drawn from their priors; a missing ``poverty`` vector is standard normal.
    """
    d = dict(d)
    m, T, seed = int(d["m"]), int(d["T"]), int(d.get("seed", 0))
    spec = ModelSpec.from_dict(d.get("model", {}))
    graph_def = d.get("graph", "ring")
    if graph_def == "ring":
        graph = AdjacencyGraph.ring(m)
    else:
        graph = AdjacencyGraph.from_edges(m, [tuple(e) for e in graph_def])
    # parameter-level randomness uses its own stream so the count draws stay keyed to `seed`
    rng = np.random.default_rng([seed, 7])
    pd_ = dict(d.get("params", {}))
    b0 = float(pd_.get("b0", -9.5))
    tau_b = float(pd_.get("tau_b", 4.0))
    tau_v = float(pd_.get("tau_v", 4.0))
    p = ParamVector(b0_scalar=b0, b1=float(pd_.get("b1", 0.8)), b2=float(pd_.get("b2", 0.0)),
                    tau_b=tau_b, tau_v=tau_v)
    if spec.has_spatial_icar:
        p.b_spatial = np.asarray(pd_["b_spatial"], float) if "b_spatial" in pd_ else sample_icar(graph, tau_b, rng)
    if spec.variant == Variant.M4:
        p.b0_time = np.asarray(pd_.get("b0_time", np.full(T, b0)), float)
    if spec.variant == Variant.M5:
        p.b0_space = (np.asarray(pd_["b0_space"], float) if "b0_space" in pd_
                      else sample_icar(graph, tau_b, rng))
        p.v_uncorr = (np.asarray(pd_["v"], float) if "v" in pd_
                      else b0 + rng.standard_normal(m) / math.sqrt(tau_v))
    pov = d.get("poverty")
    poverty = rng.standard_normal(m) if pov is None else np.asarray(pov, float)
    start = d.get("start_date", "2020-04-02")
    return SimScenario(
        m=m, T=T, params=p, spec=spec, graph=graph, sus_init=d.get("sus_init", 1e5), poverty=poverty,
        seed=seed, death_prob=float(d.get("death_prob", 0.02)), death_lag=int(d.get("death_lag", 2)),
        start_date=dt.date.fromisoformat(start) if isinstance(start, str) else start,
        region_ids=list(d.get("region_ids", [])),
    )
