"""Adaptive Metropolis-within-Gibbs sampler.

Location parameters are updated one scalar at a time with Gaussian random-walk
proposals; precisions get exact conjugate gamma draws. ICAR vectors are
re-centred to sum to zero after each sweep, with the removed mean moved into
the intercept.
"""
from __future__ import annotations

import csv
import json
import logging
import math
import os
from dataclasses import asdict, dataclass, field

import numpy as np

from . import backend
from .ingest import AdjacencyGraph, PanelData
from .model import (
    ICPT_SCALAR, ICPT_SPACE, ICPT_TIME, TAU_NAMES, TAU0, TAU1, TAU2, TAUB, TAUV, TAUY, U_ICAR, U_IID,
    Design, Layout, ModelSpec, ParamVector, Variant, build_design, linear_predictor,
    log_posterior,
)
from ._sweep_py import cell_values

log = logging.getLogger(__name__)

BLOCKS = ("b0", "b1", "b2", "spatial") + TAU_NAMES


class SamplerError(RuntimeError):
    """Raised when the chain cannot be started or produces invalid output."""


@dataclass(frozen=True)
class SamplerConfig:
    n_iter: int = 60000
    burn_in: int = 20000
    thin: int = 10
    seed: int = 0
    adapt_window: int = 50
    target_accept: float = 0.44
    init_scale: float = 0.1
    freeze: tuple[str, ...] = ()
    store_mu: bool = True

    def __post_init__(self):
        object.__setattr__(self, "freeze", tuple(self.freeze))
        if not 0 <= self.burn_in < self.n_iter:
            raise ValueError("need 0 <= burn_in < n_iter")
        if self.thin < 1:
            raise ValueError("thin must be >= 1")
        if self.adapt_window < 10:
            raise ValueError("adapt_window must be >= 10")
        if not 0 < self.target_accept < 1:
            raise ValueError("target_accept must lie in (0, 1)")
        if not self.init_scale > 0:
            raise ValueError("init_scale must be positive")
        bad = set(self.freeze) - set(BLOCKS)
        if bad:
            raise ValueError(f"unknown blocks to freeze: {sorted(bad)}; choose from {BLOCKS}")

    @property
    def n_kept(self) -> int:
        return (self.n_iter - self.burn_in) // self.thin

    def to_dict(self) -> dict:
        d = asdict(self)
        d["freeze"] = list(self.freeze)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SamplerConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown sampler keys {sorted(unknown)}")
        return cls(**d)


@dataclass
class ChainTrace:
    """Retained draws: ``theta`` is (n_draws, P) in the layout of ``layout``."""

    spec: ModelSpec
    layout: Layout
    theta: np.ndarray
    deviances: np.ndarray
    iterations: np.ndarray
    accept_rates: dict[str, float] = field(default_factory=dict)
    mu_snapshots: np.ndarray | None = None
    seed: int = 0

    def __len__(self) -> int:
        return len(self.deviances)

    @property
    def draws(self) -> list[ParamVector]:
        return [self.layout.unpack(t) for t in self.theta]

    def column(self, name: str) -> np.ndarray:
        return self.theta[:, self.layout.names().index(name)]

    def table(self) -> tuple[list[str], np.ndarray]:
        idx = self.layout.exported()
        return [self.layout.names()[k] for k in idx], self.theta[:, idx]

    def write_csv(self, path) -> None:
        names, vals = self.table()
        tmp = f"{path}.tmp"
        with open(tmp, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["iter"] + names + ["deviance"])
            for it, row, dev in zip(self.iterations, vals, self.deviances):
                w.writerow([int(it)] + [repr(float(v)) for v in row] + [repr(float(dev))])
        os.replace(tmp, path)
        meta = {
            "format": "stsir-trace/1", "spec_hash": self.spec.digest(), "model": self.spec.to_dict(),
            "m": self.layout.m, "T": self.layout.T, "seed": self.seed, "accept_rates": self.accept_rates,
        }
        tmp = f"{meta_path(path)}.tmp"
        with open(tmp, "w", encoding="utf-8") as fh:
            json.dump(meta, fh, indent=2, sort_keys=True)
        os.replace(tmp, meta_path(path))

    @classmethod
    def read_csv(cls, path, spec: ModelSpec | None = None) -> "ChainTrace":
        with open(meta_path(path), encoding="utf-8") as fh:
            meta = json.load(fh)
        stored = ModelSpec.from_dict(meta["model"])
        if stored.digest() != meta["spec_hash"]:
            raise SamplerError(f"{path}: trace metadata is corrupt (hash mismatch)")
        if spec is not None and spec.digest() != meta["spec_hash"]:
            raise SamplerError(f"{path}: trace was produced by a different model spec")
        lay = Layout(stored, meta["m"], meta["T"])
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
        header, body = rows[0], rows[1:]
        names = lay.exported_names()
        if header != ["iter"] + names + ["deviance"]:
            raise SamplerError(f"{path}: columns do not match the model layout")
        arr = np.array(body, dtype=float).reshape(len(body), len(header))
        theta = np.tile(lay.pack(initialize(stored, lay.m, lay.T)), (len(body), 1))
        theta[:, lay.exported()] = arr[:, 1:-1]
        return cls(stored, lay, theta, arr[:, -1], arr[:, 0].astype(int),
                   meta.get("accept_rates", {}), seed=meta.get("seed", 0))


def meta_path(path) -> str:
    root, _ = os.path.splitext(str(path))
    return root + ".meta.json"


def initialize(spec: ModelSpec, m: int, T: int) -> ParamVector:
    """Starting values: intercept -9, other location parameters 0, precisions 1.

    M5 has no free overall intercept (its spatial intercept is centred), so the
    -9 level goes into the unstructured effects instead.
    """
    p = ParamVector()
    if spec.variant == Variant.M4:
        p.b0_time = np.full(T, -9.0)
    elif spec.variant == Variant.M5:
        p.b0_space = np.zeros(m)
        p.v_uncorr = np.full(m, -9.0)
    else:
        p.b0_scalar = -9.0
    if spec.has_spatial_icar:
        p.b_spatial = np.zeros(m)
    return p


def gamma_posterior(prior_shape: float, prior_rate: float, quadratic_form: float, rank: int):
    if rank < 0 or quadratic_form < 0:
        raise ValueError("rank and quadratic_form must be non-negative")
    return prior_shape + 0.5 * rank, prior_rate + 0.5 * quadratic_form


def gibbs_precision(prior_shape: float, prior_rate: float, values=None, quadratic_form: float | None = None,
                    rank: int | None = None, rng: np.random.Generator | None = None) -> float:
    """One conjugate draw of a Gaussian precision.

    With only ``values`` given this is the iid case: rank ``len(values)`` and
    quadratic form ``sum(values**2)``. For an ICAR vector pass the pairwise
    quadratic form and rank ``m - 1``.
    """
    if quadratic_form is None:
        v = np.atleast_1d(np.asarray(values, dtype=float))
        quadratic_form = float(v @ v)
        rank = v.size if rank is None else rank
    if rank is None or rank < 1:
        raise ValueError("rank must be >= 1")
    shape, rate = gamma_posterior(prior_shape, prior_rate, quadratic_form, rank)
    rng = rng if rng is not None else np.random.default_rng()
    return float(rng.standard_gamma(shape) / rate)


def _kernel_inputs(design: Design) -> dict:
    lay = design.layout
    size = design.m * design.T
    return {
        "n_icpt": lay.n_icpt, "i_b1": lay.i_b1, "i_b2": lay.i_b2, "i_u": lay.i_u, "i_tau": lay.i_tau,
        "icpt_kind": lay.icpt_kind, "u_kind": lay.u_kind, "lognormal": design.lognormal,
        "eps": float(design.spec.offset),
        "y": np.ascontiguousarray(design.y, dtype=float), "lgy": np.ascontiguousarray(design.lgy, dtype=float),
        "L": np.ascontiguousarray(design.L, dtype=float), "x": np.ascontiguousarray(design.x, dtype=float),
        "adj": np.ascontiguousarray(design.adj, dtype=np.int64),
        "offsets": np.ascontiguousarray(design.offsets, dtype=np.int64),
        "num": np.ascontiguousarray(design.num, dtype=np.int64),
        "scratch_eta": np.empty(size), "scratch_cell": np.empty(size),
    }


def _centring(lay: Layout, m: int, active: np.ndarray) -> dict:
    """Slots of the ICAR vector and of the intercepts that absorb its mean.

    Moving the mean of a zero-sum vector into the intercept leaves the linear
    predictor unchanged, so re-centring does not perturb the likelihood.
    """
    out = {"icar_start": 0, "icar_end": 0, "comp": False, "comp_start": 0, "comp_end": 0, "comp_tau": TAU0}
    if m < 2:
        return out
    if lay.u_kind == U_ICAR:
        out.update(icar_start=lay.i_u, icar_end=lay.i_tau)
        if lay.icpt_kind == ICPT_TIME:
            out.update(comp_start=1, comp_end=lay.n_icpt)
        else:
            out.update(comp_start=0, comp_end=1)
    elif lay.icpt_kind == ICPT_SPACE:
        out.update(icar_start=0, icar_end=lay.n_icpt, comp_tau=TAUV)
        if lay.u_kind == U_IID:
            out.update(comp_start=lay.i_u, comp_end=lay.i_tau)
    else:
        return out
    if out["comp_end"] > out["comp_start"] and all(active[out["comp_start"]:out["comp_end"]]):
        out["comp"] = True
    return out


def _companions(design: Design, active: np.ndarray, centring: dict) -> dict:
    """Fixed companion directions for the b1 and b2 random-walk proposals.

    A b1 step of size ``delta`` also moves the intercept slots by ``-delta`` times
    the information-weighted mean of L over the cells each slot covers, which
    removes most of the b0/b1 posterior correlation. A b2 step moves the ICAR
    effects by ``-delta * (x - mean(x))`` and the intercept by ``-delta * mean(x)``
    (or, in M5, the unstructured effects by ``-delta * x``) so the linear
    predictor is unchanged and the move travels along the covariate/spatial
    ridge. Both are symmetric proposals accepted with the exact posterior ratio.
    """
    lay, m, T, K = design.layout, design.m, design.T, design.layout.K
    w = np.ones((m, T)) if design.lognormal else design.y + 0.5
    w[:, 0] = 0.0
    L, x = design.L, design.x
    out = {
        "L": np.ascontiguousarray(L, dtype=float), "x": np.ascontiguousarray(x, dtype=float),
        "c1_on": False, "c1_s": 0, "c1_e": 0, "c1_tau": TAU0, "c1_v": np.zeros(K),
        "c2_on": False, "c2_s": 0, "c2_e": 0, "c2_tau": TAU0, "c2_v": np.zeros(K),
        "c2_icar": False, "c2_w": np.zeros(K), "c2_qw": np.zeros(K), "c2_wqw": 0.0, "b2_neutral": False,
    }

    def free(a, b):
        return b > a and bool(np.all(active[a:b]))

    # b1
    if active[lay.i_b1]:
        if lay.icpt_kind == ICPT_SCALAR:
            s_, e_, tau = 0, 1, TAU0
            lbar = np.full((m, T), float((w * L).sum() / w.sum()))
            vals = lbar[:1, 0]
        elif lay.icpt_kind == ICPT_TIME:
            s_, e_, tau = 1, T, TAU0
            vals = (w * L).sum(axis=0)[1:] / np.maximum(w.sum(axis=0)[1:], 1e-300)
            lbar = np.concatenate([[0.0], vals])[None, :].repeat(m, axis=0)
        else:
            s_, e_, tau = lay.i_u, lay.i_tau, TAUV
            vals = (w * L).sum(axis=1) / np.maximum(w.sum(axis=1), 1e-300)
            lbar = vals[:, None].repeat(T, axis=1)
        if free(s_, e_):
            out["c1_v"][s_:e_] = -vals
            out["L"] = np.ascontiguousarray(L - lbar)
            out.update(c1_on=True, c1_s=s_, c1_e=e_, c1_tau=tau)

    # b2
    if active[lay.i_b2]:
        if lay.icpt_kind == ICPT_SPACE and lay.u_kind == U_IID and free(lay.i_u, lay.i_tau):
            out["c2_v"][lay.i_u:lay.i_tau] = -x
            out.update(c2_on=True, c2_s=lay.i_u, c2_e=lay.i_tau, c2_tau=TAUV, b2_neutral=True,
                       x=np.zeros(m))
        elif lay.icpt_kind == ICPT_SCALAR and free(0, 1):
            ic0, ic1 = centring["icar_start"], centring["icar_end"]
            if lay.u_kind == U_ICAR and free(ic0, ic1):
                xbar = float(x.mean())
                wv = np.zeros(K)
                wv[ic0:ic1] = -(x - xbar)
                qw = np.zeros(K)
                for i in range(m):
                    nb = design.adj[design.offsets[i]:design.offsets[i + 1]]
                    qw[ic0 + i] = design.num[i] * wv[ic0 + i] - wv[ic0 + nb].sum()
                out["c2_v"][0] = -xbar
                out.update(c2_on=True, c2_s=0, c2_e=1, c2_tau=TAU0, c2_icar=True, c2_w=wv, c2_qw=qw,
                           c2_wqw=float(wv @ qw), b2_neutral=True, x=np.zeros(m))
            else:
                wx = w.sum(axis=1)
                xbar = float((wx * x).sum() / wx.sum())
                out["c2_v"][0] = -xbar
                out.update(c2_on=True, c2_s=0, c2_e=1, c2_tau=TAU0, x=np.ascontiguousarray(x - xbar))
    return out


def _gibbs_shapes(design: Design) -> tuple[np.ndarray, np.ndarray]:
    lay, pr = design.layout, design.spec.prior
    fa, fb = pr.fixed_effect_prec_shape, pr.fixed_effect_prec_rate
    shape = np.array([
        fa + 0.5 * lay.n_icpt, fa + 0.5, fa + 0.5,
        pr.icar_prec_shape + 0.5 * (design.m - 1),
        fa + 0.5 * design.m,
        pr.lognormal_obs_prec_shape + 0.5 * design.m * design.T,
    ])
    rate = np.array([fb, fb, fb, pr.icar_prec_rate, fb, pr.lognormal_obs_prec_rate])
    return shape, rate


def _masks(lay: Layout, freeze) -> tuple[np.ndarray, np.ndarray]:
    active = lay.location_active.copy()
    if "b0" in freeze:
        active[: lay.n_icpt] = False
    if "b1" in freeze:
        active[lay.i_b1] = False
    if "b2" in freeze:
        active[lay.i_b2] = False
    if "spatial" in freeze:
        active[lay.i_u:lay.i_tau] = False
    tau = lay.tau_active.copy()
    for k, name in enumerate(TAU_NAMES):
        if name in freeze:
            tau[k] = False
    return active.astype(np.uint8), tau.astype(np.uint8)


def run_chain(panel: PanelData, spec: ModelSpec, graph: AdjacencyGraph | None,
              config: SamplerConfig = SamplerConfig(), init: ParamVector | None = None,
              kernel: str | None = None) -> ChainTrace:
    """Run one chain and return the retained draws.

    The chain is a deterministic function of ``config.seed``; each block of
    ``adapt_window`` sweeps consumes its random numbers up front.
    """
    design = build_design(panel, spec, graph)
    return run_design(design, graph, config, init, kernel)


def run_design(design: Design, graph: AdjacencyGraph | None, config: SamplerConfig,
               init: ParamVector | None = None, kernel: str | None = None) -> ChainTrace:
    lay = design.layout
    theta = lay.pack(init if init is not None else initialize(design.spec, design.m, design.T))
    if lay.has_icar and design.m > 1:
        for sl in ([slice(lay.i_u, lay.i_tau)] if lay.u_kind == U_ICAR else []) + \
                  ([slice(0, lay.n_icpt)] if lay.icpt_kind == ICPT_SPACE else []):
            if abs(theta[sl].sum()) > 1e-9:
                raise SamplerError("initial ICAR vector must sum to zero")
    lp0 = log_posterior(design, theta, graph)
    if not math.isfinite(lp0):
        raise SamplerError("log posterior is not finite at the initial values; check data offsets")

    run = backend.get(kernel)
    d = _kernel_inputs(design)
    eta = np.ascontiguousarray(linear_predictor(design, theta))
    cell = np.ascontiguousarray(cell_values(eta, design.y, design.lgy, design.spec.offset, design.lognormal))
    active, tau_active = _masks(lay, config.freeze)
    d.update(_centring(lay, design.m, active))
    d.update(_companions(design, active, d))
    post_shape, prior_rate = _gibbs_shapes(design)
    K, P = lay.K, lay.P
    scales = np.full(K, config.init_scale)
    rng = np.random.default_rng(config.seed)

    kept_theta = np.empty((config.n_kept, P))
    kept_dev = np.empty(config.n_kept)
    kept_iter = np.empty(config.n_kept, dtype=np.int64)
    n_kept = 0
    acc_post = np.zeros(K, dtype=np.int64)
    done = 0
    while done < config.n_iter:
        n = min(config.adapt_window, config.n_iter - done)
        if done < config.burn_in:
            n = min(n, config.burn_in - done)
        z = rng.standard_normal((n, K))
        logu = np.log(rng.random((n, K)))
        gam = rng.standard_gamma(post_shape, size=(n, 6))
        acc = np.zeros(K, dtype=np.int64)
        out_theta = np.empty((n, P))
        out_dev = np.empty(n)
        run(d, theta, eta, cell, z, logu, gam, scales, active, tau_active,
            post_shape, prior_rate, acc, out_theta, out_dev)
        its = np.arange(done + 1, done + n + 1)
        keep = (its > config.burn_in) & ((its - config.burn_in) % config.thin == 0)
        k = int(keep.sum())
        kept_theta[n_kept:n_kept + k] = out_theta[keep]
        kept_dev[n_kept:n_kept + k] = out_dev[keep]
        kept_iter[n_kept:n_kept + k] = its[keep]
        n_kept += k
        if done + n <= config.burn_in:
            rate = acc / n
            scales *= np.exp(0.05 * np.sign(rate - config.target_accept) * active)
        else:
            acc_post += acc
        done += n

    if not np.all(np.isfinite(kept_dev)):
        raise SamplerError("non-finite deviance in retained draws")
    n_post = config.n_iter - config.burn_in
    names = lay.names()
    rates = {names[k]: float(acc_post[k] / n_post) for k in np.nonzero(active)[0]}
    trace = ChainTrace(design.spec, lay, kept_theta[:n_kept], kept_dev[:n_kept], kept_iter[:n_kept],
                       rates, seed=config.seed)
    if config.store_mu:
        trace.mu_snapshots = mu_snapshots(design, trace)
    log.debug("chain done: %d draws, accept %s", n_kept, rates)
    return trace


def mu_snapshots(design: Design, trace: ChainTrace) -> np.ndarray:
    """Count-scale mean matrix for every retained draw, shape (n, m, T)."""
    return np.stack([np.exp(linear_predictor(design, th)) for th in trace.theta])


def posterior_summary(trace: ChainTrace) -> list[dict]:
    names, vals = trace.table()
    rows = []
    for name, col in zip(names, vals.T):
        rows.append({
            "parameter": name, "mean": float(col.mean()),
            "sd": float(col.std(ddof=1)) if len(col) > 1 else 0.0,
            "q2.5": float(np.quantile(col, 0.025)), "q97.5": float(np.quantile(col, 0.975)),
        })
    return rows
