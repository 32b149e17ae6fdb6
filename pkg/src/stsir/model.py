"""Space-time SIR model: accounting recursion, mean functions, likelihoods, priors.

For day ``j >= 2`` the Poisson mean is ``mu_ij = (S_ij + eps) * f(...)`` with

    log f = intercept + b1 * L_ij + b2 * x_i + u_i

where the transmission term ``L_ij`` depends only on data (given ``phi``), so the
model is a Poisson log-linear model with a data-derived offset ``log(S_ij + eps)``.
Day-1 cells use the fixed mean ``day1_rate * S_i1``.
"""
from __future__ import annotations

import enum
import hashlib
import json
import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np
from scipy.special import gammaln

from .ingest import AdjacencyGraph, PanelData

LOG_2PI = math.log(2.0 * math.pi)
ZERO_SUM_TOL = 1e-9


class ModelError(ValueError):
    """Inconsistent model configuration or parameter values."""


class Variant(enum.IntEnum):
    M1 = 1
    M2 = 2
    M3 = 3
    M4 = 4
    M5 = 5

    @classmethod
    def parse(cls, value) -> "Variant":
        if isinstance(value, cls):
            return value
        if isinstance(value, str):
            v = value.strip().upper()
            if v in cls.__members__:
                return cls[v]
            value = v.lstrip("M")
        try:
            return cls(int(value))
        except (ValueError, TypeError) as exc:
            raise ModelError(f"unknown variant {value!r}") from exc


class DataModel(str, enum.Enum):
    POISSON = "poisson"
    LOGNORMAL = "lognormal"

    @classmethod
    def parse(cls, value) -> "DataModel":
        try:
            return cls(str(value.value if isinstance(value, cls) else value).lower())
        except ValueError as exc:
            raise ModelError(f"unknown data model {value!r}") from exc


@dataclass(frozen=True)
class PriorConfig:
    fixed_effect_prec_shape: float = 2.0
    fixed_effect_prec_rate: float = 0.5
    icar_prec_shape: float = 0.01
    icar_prec_rate: float = 0.01
    lognormal_obs_prec_shape: float = 2.0
    lognormal_obs_prec_rate: float = 0.5

    def __post_init__(self):
        for k, v in asdict(self).items():
            if not v > 0:
                raise ModelError(f"prior {k} must be positive, got {v}")


@dataclass(frozen=True)
class ModelSpec:
    variant: Variant = Variant.M3
    phi: float = 0.25
    beta_rc: float = 0.1
    data_model: DataModel = DataModel.POISSON
    offset: float = 0.001
    include_icar: bool = True
    prior: PriorConfig = field(default_factory=PriorConfig)
    m4_text_form: bool = False
    day1_rate: float = 0.001

    def __post_init__(self):
        object.__setattr__(self, "variant", Variant.parse(self.variant))
        object.__setattr__(self, "data_model", DataModel.parse(self.data_model))
        if isinstance(self.prior, dict):
            object.__setattr__(self, "prior", PriorConfig(**self.prior))
        if not 0.0 <= self.phi <= 1.0:
            raise ModelError(f"phi must lie in [0, 1], got {self.phi}")
        if not 0.0 <= self.beta_rc <= 1.0:
            raise ModelError(f"beta_rc must lie in [0, 1], got {self.beta_rc}")
        if self.offset < 0:
            raise ModelError("offset must be non-negative")
        if not self.day1_rate > 0:
            raise ModelError("day1_rate must be positive")

    @property
    def has_b2(self) -> bool:
        return self.variant >= Variant.M3

    @property
    def has_spatial_icar(self) -> bool:
        return self.include_icar and self.variant != Variant.M5

    @property
    def needs_graph(self) -> bool:
        return self.variant in (Variant.M2, Variant.M5) or self.has_spatial_icar

    def to_dict(self) -> dict:
        d = asdict(self)
        d["variant"] = int(self.variant)
        d["data_model"] = self.data_model.value
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        d = dict(d)
        prior = d.pop("prior", {}) or {}
        # flat "prior.xxx" keys are accepted too
        for k in [k for k in d if k.startswith("prior.")]:
            prior[k[len("prior."):]] = d.pop(k)
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ModelError(f"unknown model keys {sorted(unknown)}")
        return cls(prior=PriorConfig(**prior), **d)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ModelSpec":
        return cls.from_dict(json.loads(text))

    def digest(self) -> str:
        return hashlib.sha256(self.to_json().encode()).hexdigest()[:16]

    def evolve(self, **changes) -> "ModelSpec":
        return replace(self, **changes)


@dataclass
class ParamVector:
    b0_scalar: float = 0.0
    b0_time: np.ndarray | None = None
    b0_space: np.ndarray | None = None
    b1: float = 0.0
    b2: float = 0.0
    b_spatial: np.ndarray | None = None
    v_uncorr: np.ndarray | None = None
    tau0: float = 1.0
    tau1: float = 1.0
    tau2: float = 1.0
    tau_b: float = 1.0
    tau_v: float = 1.0
    tau_y: float = 1.0


@dataclass
class LatentState:
    sus: np.ndarray
    asym: np.ndarray
    removed_recov: np.ndarray
    mu: np.ndarray | None = None
    floored: bool = False


# --- accounting -------------------------------------------------------------

def run_accounting(counts: np.ndarray, deaths: np.ndarray, sus_init: np.ndarray,
                   phi: float, beta_rc: float):
    """Susceptible recursion on raw (m, T) arrays; returns ``(sus, asym, rc, floored)``."""
    counts = np.atleast_2d(np.asarray(counts, dtype=float))
    deaths = np.atleast_2d(np.asarray(deaths, dtype=float))
    m, T = counts.shape
    asym = phi * counts
    rc = beta_rc * counts
    rc[:, 0] = 0.0
    sus = np.empty((m, T))
    sus[:, 0] = sus_init
    floored = False
    for j in range(1, T):
        s = sus[:, j - 1] - counts[:, j - 1] - asym[:, j - 1] - rc[:, j - 1] - deaths[:, j - 1]
        if np.any(s < 0):
            floored = True
            s = np.maximum(s, 0.0)
        sus[:, j] = s
    return sus, asym, rc, floored


def accounting_forward(panel: PanelData, spec: ModelSpec) -> LatentState:
    """Run the susceptible accounting recursion over the observed counts.

    Recovery removal on day 1 is zero; susceptibles are floored at zero and
    ``floored`` records whether that happened.
    """
    sus, asym, rc, floored = run_accounting(panel.sym, panel.deaths, panel.sus_init,
                                         spec.phi, spec.beta_rc)
    return LatentState(sus=sus, asym=asym, removed_recov=rc, floored=floored)


# --- mean function ----------------------------------------------------------

def log_mean(spec: ModelSpec, params: ParamVector, i: int, j: int, sym_prev: float,
             sus: float, poverty: float = 0.0, neighbor_ty: float = 0.0) -> float:
    """Scalar ``log mu_ij`` for day index ``j >= 1`` (0-based) of region ``i``.

    ``sym_prev`` is the previous day's symptomatic count; ``neighbor_ty`` the
    previous-day total infectives summed over the neighbours (M2 only).
    """
    if j < 1:
        raise ModelError("log_mean is defined from the second day on")
    eps = spec.offset
    asym = spec.phi * sym_prev
    ty = sym_prev + asym
    v = spec.variant
    u = 0.0
    if v != Variant.M5 and spec.include_icar and params.b_spatial is not None:
        u = float(params.b_spatial[i])
    if v == Variant.M1:
        f = params.b0_scalar + params.b1 * math.log(ty + eps) + u
    elif v == Variant.M2:
        f = params.b0_scalar + params.b1 * math.log(ty + neighbor_ty + eps) + u
    elif v == Variant.M3:
        f = params.b0_scalar + params.b1 * math.log(ty + eps) + params.b2 * poverty + u
    elif v == Variant.M4:
        if spec.m4_text_form:
            trans = math.log(ty + eps)
        else:
            trans = math.log(sym_prev + eps) + math.log(asym + eps)
        f = params.b0_time[j] + params.b1 * trans + params.b2 * poverty + u
    elif v == Variant.M5:
        f = (params.b0_space[i] + params.b1 * math.log(ty + eps) + params.b2 * poverty
             + params.v_uncorr[i])
    else:  # pragma: no cover - Variant.parse guards this
        raise ModelError(f"unknown variant {v!r}")
    return math.log(sus + eps) + f


def transmission_term(counts: np.ndarray, spec: ModelSpec, graph: AdjacencyGraph | None) -> np.ndarray:
    """``L_ij``, the data part multiplied by b1; column 0 is unused (zero)."""
    eps = spec.offset
    counts = np.asarray(counts, dtype=float)
    ty = (1.0 + spec.phi) * counts
    L = np.zeros_like(ty)
    # with offset 0 a zero count gives -inf here; the sampler rejects that start
    with np.errstate(divide="ignore"):
        if spec.variant == Variant.M2:
            nsum = np.zeros_like(ty)
            for i in range(counts.shape[0]):
                nb = graph.neighbors(i)
                if nb.size:
                    nsum[i] = ty[nb].sum(axis=0)
            L[:, 1:] = np.log(ty[:, :-1] + nsum[:, :-1] + eps)
        elif spec.variant == Variant.M4 and not spec.m4_text_form:
            L[:, 1:] = np.log(counts[:, :-1] + eps) + np.log(spec.phi * counts[:, :-1] + eps)
        else:
            L[:, 1:] = np.log(ty[:, :-1] + eps)
    return L


# --- parameter layout -------------------------------------------------------

TAU0, TAU1, TAU2, TAUB, TAUV, TAUY = range(6)
TAU_NAMES = ("tau0", "tau1", "tau2", "tau_b", "tau_v", "tau_y")

ICPT_SCALAR, ICPT_TIME, ICPT_SPACE = 0, 1, 2
U_NONE, U_ICAR, U_IID = 0, 1, 2


class Layout:
    """Flat parameter vector ``[intercepts, b1, b2, u(m), taus(6)]``.

    Entries that a variant does not use stay at their initial value and are
    neither sampled nor exported.
    """

    def __init__(self, spec: ModelSpec, m: int, T: int):
        self.spec, self.m, self.T = spec, m, T
        v = spec.variant
        if v == Variant.M4:
            self.icpt_kind, self.n_icpt = ICPT_TIME, T
        elif v == Variant.M5:
            self.icpt_kind, self.n_icpt = ICPT_SPACE, m
        else:
            self.icpt_kind, self.n_icpt = ICPT_SCALAR, 1
        if v == Variant.M5:
            self.u_kind = U_IID
        elif spec.include_icar:
            self.u_kind = U_ICAR
        else:
            self.u_kind = U_NONE
        self.i_b1 = self.n_icpt
        self.i_b2 = self.n_icpt + 1
        self.i_u = self.n_icpt + 2
        self.i_tau = self.i_u + m
        self.K = self.i_tau
        self.P = self.i_tau + 6

        loc = np.zeros(self.K, dtype=bool)
        loc[: self.n_icpt] = not (self.icpt_kind == ICPT_SPACE and m == 1)
        loc[self.i_b1] = True
        loc[self.i_b2] = spec.has_b2
        if self.u_kind == U_IID or (self.u_kind == U_ICAR and m > 1):
            loc[self.i_u:self.i_tau] = True
        self.location_active = loc

        tau = np.zeros(6, dtype=bool)
        tau[TAU0] = self.icpt_kind != ICPT_SPACE
        tau[TAU1] = True
        tau[TAU2] = spec.has_b2
        tau[TAUB] = self.u_kind == U_ICAR or self.icpt_kind == ICPT_SPACE
        tau[TAUV] = self.u_kind == U_IID
        tau[TAUY] = spec.data_model == DataModel.LOGNORMAL
        self.tau_active = tau

    @property
    def has_icar(self) -> bool:
        return bool(self.tau_active[TAUB])

    def names(self) -> list[str]:
        """Names of every flat slot (1-based element indices)."""
        if self.icpt_kind == ICPT_SCALAR:
            icpt = ["b0"]
        elif self.icpt_kind == ICPT_TIME:
            icpt = [f"b0_time[{j + 1}]" for j in range(self.T)]
        else:
            icpt = [f"b0_space[{i + 1}]" for i in range(self.m)]
        uname = "v" if self.u_kind == U_IID else "b_spatial"
        return icpt + ["b1", "b2"] + [f"{uname}[{i + 1}]" for i in range(self.m)] + list(TAU_NAMES)

    def exported(self) -> np.ndarray:
        """Indices of the slots that belong to this variant."""
        mask = np.concatenate([self.location_active, self.tau_active])
        if self.u_kind == U_ICAR or (self.icpt_kind == ICPT_SPACE):
            # ICAR vectors are reported even when degenerate (m == 1)
            if self.u_kind == U_ICAR:
                mask[self.i_u:self.i_tau] = True
            if self.icpt_kind == ICPT_SPACE:
                mask[: self.n_icpt] = True
        return np.nonzero(mask)[0]

    def exported_names(self) -> list[str]:
        names = self.names()
        return [names[k] for k in self.exported()]

    def pack(self, p: ParamVector) -> np.ndarray:
        th = np.zeros(self.P)
        if self.icpt_kind == ICPT_SCALAR:
            th[0] = p.b0_scalar
        elif self.icpt_kind == ICPT_TIME:
            th[: self.T] = _vec(p.b0_time, self.T, "b0_time")
        else:
            th[: self.m] = _vec(p.b0_space, self.m, "b0_space")
        th[self.i_b1] = p.b1
        th[self.i_b2] = p.b2 if self.spec.has_b2 else 0.0
        if self.u_kind == U_ICAR:
            th[self.i_u:self.i_tau] = _vec(p.b_spatial, self.m, "b_spatial")
        elif self.u_kind == U_IID:
            th[self.i_u:self.i_tau] = _vec(p.v_uncorr, self.m, "v_uncorr")
        th[self.i_tau:] = [p.tau0, p.tau1, p.tau2, p.tau_b, p.tau_v, p.tau_y]
        return th

    def unpack(self, th: np.ndarray) -> ParamVector:
        th = np.asarray(th, dtype=float)
        p = ParamVector(b1=float(th[self.i_b1]), b2=float(th[self.i_b2]))
        if self.icpt_kind == ICPT_SCALAR:
            p.b0_scalar = float(th[0])
        elif self.icpt_kind == ICPT_TIME:
            p.b0_time = th[: self.T].copy()
        else:
            p.b0_space = th[: self.m].copy()
        u = th[self.i_u:self.i_tau].copy()
        if self.u_kind == U_ICAR:
            p.b_spatial = u
        elif self.u_kind == U_IID:
            p.v_uncorr = u
        (p.tau0, p.tau1, p.tau2, p.tau_b, p.tau_v, p.tau_y) = map(float, th[self.i_tau:])
        return p


def _vec(x, n, name) -> np.ndarray:
    if x is None:
        return np.zeros(n)
    x = np.asarray(x, dtype=float)
    if x.shape != (n,):
        raise ModelError(f"{name} must have length {n}, got shape {x.shape}")
    return x


# --- design -----------------------------------------------------------------

@dataclass
class Design:
    """Everything the sampler needs, precomputed from data and spec."""

    spec: ModelSpec
    layout: Layout
    y: np.ndarray        # counts (Poisson) or log(smoothed + eps) (log-normal)
    lgy: np.ndarray      # log(y!) for Poisson, zeros otherwise
    log_sus: np.ndarray  # log(S_ij + eps)
    L: np.ndarray
    x: np.ndarray
    mu1: np.ndarray      # fixed day-1 mean
    adj: np.ndarray
    offsets: np.ndarray
    num: np.ndarray
    state: LatentState
    counts: np.ndarray   # series driving the accounting and transmission terms

    @property
    def m(self) -> int:
        return self.y.shape[0]

    @property
    def T(self) -> int:
        return self.y.shape[1]

    @property
    def lognormal(self) -> bool:
        return self.spec.data_model == DataModel.LOGNORMAL


def model_counts(panel: PanelData, spec: ModelSpec) -> np.ndarray:
    """Series the model is fitted to: raw counts, or smoothed ones in log-normal mode."""
    if spec.data_model == DataModel.LOGNORMAL:
        if panel.smoothed is None:
            panel = panel.with_smoothing()
        return panel.smoothed
    return panel.sym.astype(float)


def build_design(panel: PanelData, spec: ModelSpec, graph: AdjacencyGraph | None) -> Design:
    m, T = panel.m, panel.T
    if spec.needs_graph:
        if graph is None:
            raise ModelError(f"variant {spec.variant.name} needs an adjacency graph")
        if graph.m != m:
            raise ModelError(f"graph has {graph.m} regions, panel has {m}")
        if not graph.is_connected():
            raise ModelError("adjacency graph must be connected for the ICAR prior")
    if graph is None:
        graph = AdjacencyGraph(m, np.zeros(0, dtype=np.int64), np.zeros(m, dtype=np.int64))
    if spec.has_b2 and not np.all(np.isfinite(panel.poverty)):
        raise ModelError(f"variant {spec.variant.name} needs a finite poverty covariate")

    counts = model_counts(panel, spec)
    sus, asym, rc, floored = run_accounting(counts, panel.deaths, panel.sus_init, spec.phi, spec.beta_rc)
    state = LatentState(sus=sus, asym=asym, removed_recov=rc, floored=floored)
    eps = spec.offset
    log_sus = np.log(sus + eps)
    log_sus[:, 0] = 0.0
    if spec.data_model == DataModel.LOGNORMAL:
        y = np.log(counts + eps)
        lgy = np.zeros_like(y)
    else:
        y = panel.sym.astype(float)
        lgy = gammaln(y + 1.0)
    x = panel.poverty.astype(float) if spec.has_b2 else np.zeros(m)
    return Design(
        spec=spec, layout=Layout(spec, m, T), y=y, lgy=lgy, log_sus=log_sus,
        L=transmission_term(counts, spec, graph), x=x, mu1=spec.day1_rate * sus[:, 0],
        adj=graph.adj, offsets=graph.offsets, num=graph.num, state=state, counts=counts,
    )


def linear_predictor(design: Design, theta: np.ndarray) -> np.ndarray:
    """``log mu`` for every cell given flat parameters (column 0 = log of day-1 mean)."""
    lay = design.layout
    th = np.asarray(theta, dtype=float)
    with np.errstate(invalid="ignore"):
        eta = design.log_sus + th[lay.i_b1] * design.L + (th[lay.i_b2] * design.x + th[lay.i_u:lay.i_tau])[:, None]
    if lay.icpt_kind == ICPT_SCALAR:
        eta += th[0]
    elif lay.icpt_kind == ICPT_TIME:
        eta += th[None, : lay.T]
    else:
        eta += th[: lay.m, None]
    eta[:, 0] = np.log(design.mu1)
    return eta


def mean_matrix(design: Design, theta: np.ndarray) -> np.ndarray:
    return np.exp(linear_predictor(design, theta))


def latent_state(design: Design, theta: np.ndarray) -> LatentState:
    st = design.state
    return LatentState(st.sus, st.asym, st.removed_recov, mean_matrix(design, theta), st.floored)


# --- likelihood -------------------------------------------------------------

def poisson_deviance_cell(y: float, mu: float, offset: float) -> float:
    lam = mu + offset
    return -2.0 * (y * math.log(lam) - lam - math.lgamma(y + 1.0))


def _lognormal_ystar(panel: PanelData, spec: ModelSpec) -> np.ndarray:
    return np.log(model_counts(panel, spec) + spec.offset)


def total_deviance(panel: PanelData, state: LatentState, spec: ModelSpec,
                   tau_y: float | None = None) -> float:
    """Deviance summed over every (region, day) cell, day 1 included.

    In log-normal mode the cell term is ``-2 log N(log(y_sm + eps) | log mu, 1/tau_y)``.
    """
    if state.mu is None:
        raise ModelError("latent state has no mean matrix; evaluate the model first")
    mu = np.asarray(state.mu, dtype=float)
    if mu.shape != (panel.m, panel.T):
        raise ModelError(f"mean matrix has shape {mu.shape}, expected {(panel.m, panel.T)}")
    if spec.data_model == DataModel.LOGNORMAL:
        if tau_y is None or not tau_y > 0:
            raise ModelError("log-normal deviance needs a positive tau_y")
        r = _lognormal_ystar(panel, spec) - np.log(mu)
        return float(np.sum(LOG_2PI - math.log(tau_y) + tau_y * r * r))
    y = panel.sym.astype(float)
    lam = mu + spec.offset
    return float(-2.0 * np.sum(y * np.log(lam) - lam - gammaln(y + 1.0)))


def design_deviance(design: Design, theta: np.ndarray) -> float:
    eta = linear_predictor(design, theta)
    if design.lognormal:
        tau_y = float(theta[design.layout.i_tau + TAUY])
        r = design.y - eta
        return float(np.sum(LOG_2PI - math.log(tau_y) + tau_y * r * r))
    lam = np.exp(eta) + design.spec.offset
    return float(-2.0 * np.sum(design.y * np.log(lam) - lam - design.lgy))


# --- priors -----------------------------------------------------------------

def icar_quadratic(b: np.ndarray, graph: AdjacencyGraph) -> float:
    b = np.asarray(b, dtype=float)
    q = 0.0
    for i in range(graph.m):
        nb = graph.neighbors(i)
        nb = nb[nb > i]
        q += float(np.sum((b[i] - b[nb]) ** 2))
    return q


def icar_logpdf(b, tau_b: float, graph: AdjacencyGraph) -> float:
    """Pairwise-difference ICAR log-density, rank ``m - 1``, without the 2*pi constant."""
    b = np.asarray(b, dtype=float)
    return 0.5 * (graph.m - 1) * math.log(tau_b) - 0.5 * tau_b * icar_quadratic(b, graph)


def normal_logpdf(x, tau: float) -> float:
    x = np.atleast_1d(np.asarray(x, dtype=float))
    return float(np.sum(0.5 * math.log(tau) - 0.5 * LOG_2PI - 0.5 * tau * x * x))


def gamma_logpdf(x: float, shape: float, rate: float) -> float:
    return shape * math.log(rate) + (shape - 1.0) * math.log(x) - rate * x - math.lgamma(shape)


def log_prior(params: ParamVector, spec: ModelSpec, graph: AdjacencyGraph | None, T: int | None = None) -> float:
    """Log prior density of ``params`` (ICAR terms need ``graph``)."""
    if graph is not None:
        lay_m = graph.m
    else:
        vecs = [v for v in (params.b_spatial, params.v_uncorr, params.b0_space) if v is not None]
        lay_m = len(vecs[0]) if vecs else 1
    if T is None:
        T = len(params.b0_time) if params.b0_time is not None else 1
    lay = Layout(spec, lay_m, T)
    th = lay.pack(params)
    taus = th[lay.i_tau:]
    for k in np.nonzero(lay.tau_active)[0]:
        if not taus[k] > 0:
            raise ModelError(f"{TAU_NAMES[k]} must be positive, got {taus[k]}")
    pr = spec.prior
    fa, fb = pr.fixed_effect_prec_shape, pr.fixed_effect_prec_rate
    lp = 0.0
    if lay.icpt_kind == ICPT_SPACE:
        b0s = th[: lay.m]
        if abs(b0s.sum()) > ZERO_SUM_TOL:
            raise ModelError("b0_space must sum to zero")
        lp += icar_logpdf(b0s, taus[TAUB], graph)
    else:
        lp += normal_logpdf(th[: lay.n_icpt], taus[TAU0]) + gamma_logpdf(taus[TAU0], fa, fb)
    lp += normal_logpdf(th[lay.i_b1], taus[TAU1]) + gamma_logpdf(taus[TAU1], fa, fb)
    if spec.has_b2:
        lp += normal_logpdf(th[lay.i_b2], taus[TAU2]) + gamma_logpdf(taus[TAU2], fa, fb)
    u = th[lay.i_u:lay.i_tau]
    if lay.u_kind == U_ICAR:
        if abs(u.sum()) > ZERO_SUM_TOL:
            raise ModelError("b_spatial must sum to zero")
        lp += icar_logpdf(u, taus[TAUB], graph)
    elif lay.u_kind == U_IID:
        lp += normal_logpdf(u, taus[TAUV]) + gamma_logpdf(taus[TAUV], fa, fb)
    if lay.has_icar:
        lp += gamma_logpdf(taus[TAUB], pr.icar_prec_shape, pr.icar_prec_rate)
    if spec.data_model == DataModel.LOGNORMAL:
        lp += gamma_logpdf(taus[TAUY], pr.lognormal_obs_prec_shape, pr.lognormal_obs_prec_rate)
    return float(lp)


def log_posterior(design: Design, theta: np.ndarray, graph: AdjacencyGraph | None) -> float:
    """Unnormalised log posterior: ``-D/2`` plus the log prior."""
    params = design.layout.unpack(theta)
    return -0.5 * design_deviance(design, theta) + log_prior(params, design.spec, graph, design.T)
