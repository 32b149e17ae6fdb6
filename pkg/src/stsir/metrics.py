"""Convergence and fit summaries computed from stored draws."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .ingest import PanelData


@dataclass(frozen=True)
class DicResult:
    dic: float
    p_d: float
    mean_deviance: float


def dic(deviances) -> DicResult:
    """DIC with the variance-based effective parameter count ``pD = var(D) / 2``."""
    d = np.asarray(deviances, dtype=float)
    if d.ndim != 1 or d.size < 2:
        raise ValueError("need at least two deviance draws")
    if not np.all(np.isfinite(d)):
        raise ValueError("deviances must be finite")
    mean = float(d.mean())
    p_d = float(d.var(ddof=1) / 2.0)
    return DicResult(dic=mean + p_d, p_d=p_d, mean_deviance=mean)


def batch_means_var(x: np.ndarray) -> float:
    """Long-run variance of ``x`` from ``floor(sqrt(n))`` non-overlapping batch means."""
    x = np.asarray(x, dtype=float)
    n_batches = max(int(math.isqrt(x.size)), 2)
    size = x.size // n_batches
    if size < 1:
        return float(x.var(ddof=1))
    means = x[: n_batches * size].reshape(n_batches, size).mean(axis=1)
    return float(size * means.var(ddof=1))


def geweke_windows(a: np.ndarray, b: np.ndarray) -> tuple[float, bool]:
    """z-score comparing the means of two chain windows; ``(0, True)`` if degenerate."""
    se2 = batch_means_var(a) / a.size + batch_means_var(b) / b.size
    diff = float(a.mean() - b.mean())
    if not se2 > 0:
        return 0.0, True
    return diff / math.sqrt(se2), False


def _split(trace, frac_a: float, frac_b: float):
    x = np.asarray(trace, dtype=float)
    if x.ndim != 1 or x.size < 100:
        raise ValueError("Geweke diagnostic needs a 1-d trace of length >= 100")
    if not (0 < frac_a < 1 and 0 < frac_b < 1):
        raise ValueError("window fractions must lie in (0, 1)")
    if frac_a + frac_b > 1:
        raise ValueError("Geweke windows overlap")
    n = x.size
    return x[: int(frac_a * n)], x[n - int(frac_b * n):]


def geweke_z(trace, frac_a: float = 0.1, frac_b: float = 0.5) -> float:
    a, b = _split(trace, frac_a, frac_b)
    return geweke_windows(a, b)[0]


@dataclass
class GewekeReport:
    z: dict[str, float]
    window_a_frac: float = 0.1
    window_b_frac: float = 0.5
    degenerate: list[str] = field(default_factory=list)


def geweke_report(names, columns: np.ndarray, frac_a: float = 0.1, frac_b: float = 0.5) -> GewekeReport:
    rep = GewekeReport({}, frac_a, frac_b)
    for name, col in zip(names, np.asarray(columns, dtype=float).T):
        a, b = _split(col, frac_a, frac_b)
        z, degen = geweke_windows(a, b)
        rep.z[name] = z
        if degen:
            rep.degenerate.append(name)
    return rep


def _observed(panel) -> np.ndarray:
    if isinstance(panel, PanelData):
        return panel.sym.astype(float)
    return np.asarray(panel, dtype=float)


def mse_profile(mu_snapshots, panel) -> np.ndarray:
    """Per-cell posterior mean of ``(mu - y)^2`` over the retained draws."""
    mu = np.asarray(mu_snapshots, dtype=float)
    if mu.ndim != 3 or mu.shape[0] < 2:
        raise ValueError("need at least two (m, T) mean snapshots")
    return np.mean((mu - _observed(panel)[None]) ** 2, axis=0)


def mspe_profile(predictive_draws, panel) -> np.ndarray:
    """Per-cell mean of ``(y_rep - y)^2`` over posterior predictive replicates."""
    rep = np.asarray(predictive_draws, dtype=float)
    if rep.ndim != 3 or rep.shape[0] < 1:
        raise ValueError("need (n, m, T) predictive draws")
    return np.mean((rep - _observed(panel)[None]) ** 2, axis=0)


def rhat(chains) -> float:
    """Gelman-Rubin potential scale reduction for equal-length chains of one scalar."""
    x = np.asarray(chains, dtype=float)
    if x.ndim != 2 or x.shape[0] < 2 or x.shape[1] < 2:
        raise ValueError("need a (n_chains >= 2, n_draws >= 2) array")
    n = x.shape[1]
    w = float(x.var(axis=1, ddof=1).mean())
    b = float(n * x.mean(axis=1).var(ddof=1))
    if w == 0.0:
        return 1.0 if b == 0.0 else math.inf
    return math.sqrt(((n - 1) / n * w + b / n) / w)
