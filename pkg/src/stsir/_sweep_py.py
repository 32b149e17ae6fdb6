"""Pure-numpy Metropolis-within-Gibbs sweeps (fallback for the compiled kernel).

All randomness is supplied by the caller: ``z`` (proposal normals), ``logu``
(log uniforms) and ``gam`` (standard gamma variates with the posterior shapes),
so both backends walk the same chain.
"""
from __future__ import annotations

import math

import numpy as np

from .model import (
    ICPT_SCALAR, ICPT_SPACE, ICPT_TIME, LOG_2PI, TAU0, TAU1, TAU2, TAUB, TAUV, TAUY,
    U_ICAR, U_IID,
)


def cell_values(eta, y, lgy, eps, lognormal):
    """Per-cell Poisson log-likelihood, or squared residual in log-normal mode."""
    if lognormal:
        r = y - eta
        return r * r
    mu = np.exp(eta)
    return y * np.log(mu + eps) - mu - eps - lgy


def _icar_cond(vec, i, adj, offsets, num):
    nb = adj[offsets[i]:offsets[i + 1]]
    return vec[nb].sum() / num[i]


def _icar_q(vec, adj, offsets, m):
    q = 0.0
    for i in range(m):
        for l in adj[offsets[i]:offsets[i + 1]]:
            if l > i:
                q += (vec[i] - vec[l]) ** 2
    return q


def run_sweeps(d, theta, eta, cell, z, logu, gam, scales, active, tau_active,
               post_shape, prior_rate, acc, out_theta, out_dev):
    """Advance the chain ``len(z)`` sweeps, updating ``theta``/``eta``/``cell`` in place."""
    m, T = eta.shape
    n_icpt, i_b1, i_b2, i_u, i_tau = d["n_icpt"], d["i_b1"], d["i_b2"], d["i_u"], d["i_tau"]
    icpt_kind, u_kind = d["icpt_kind"], d["u_kind"]
    lognormal, eps = d["lognormal"], d["eps"]
    y, lgy, L, x = d["y"], d["lgy"], d["L"], d["x"]
    adj, offsets, num = d["adj"], d["offsets"], d["num"]
    K = i_tau
    # ICAR vector and the intercept slots that absorb its mean when re-centring
    ic0, ic1 = d["icar_start"], d["icar_end"]
    comp, p0, p1, ptau = d["comp"], d["comp_start"], d["comp_end"], d["comp_tau"]
    # companion directions of the b1 / b2 proposals (see mcmc._companions)
    c1 = (d["c1_on"], d["c1_s"], d["c1_e"], d["c1_tau"], d["c1_v"])
    c2 = (d["c2_on"], d["c2_s"], d["c2_e"], d["c2_tau"], d["c2_v"])
    c2_icar, c2_w, c2_qw, c2_wqw = d["c2_icar"], d["c2_w"], d["c2_qw"], d["c2_wqw"]
    b2_neutral = d["b2_neutral"]

    def companion_prior(c, dlt, taus):
        on, a, b, t, v = c
        if not on:
            return 0.0
        return -0.5 * taus[t] * float(np.sum(v[a:b] * (2.0 * dlt * theta[a:b] + dlt * dlt * v[a:b])))

    def block(k):
        """Cell slice and the eta increment per unit step for location slot ``k``."""
        if k < n_icpt:
            if icpt_kind == ICPT_SCALAR:
                return (slice(None), slice(1, None)), 1.0
            if icpt_kind == ICPT_TIME:
                return (slice(None), k), 1.0
            return (k, slice(1, None)), 1.0
        if k == i_b1:
            return (slice(None), slice(1, None)), L[:, 1:]
        if k == i_b2:
            return (slice(None), slice(1, None)), x[:, None]
        return (k - i_u, slice(1, None)), 1.0

    for s in range(z.shape[0]):
        taus = theta[i_tau:]
        for k in range(K):
            if not active[k]:
                continue
            cur = theta[k]
            prop = cur + scales[k] * z[s, k]
            if k < n_icpt:
                if icpt_kind == ICPT_SPACE:
                    mean = _icar_cond(theta[:n_icpt], k, adj, offsets, num)
                    dprior = -0.5 * taus[TAUB] * num[k] * ((prop - mean) ** 2 - (cur - mean) ** 2)
                else:
                    dprior = -0.5 * taus[TAU0] * (prop * prop - cur * cur)
            elif k == i_b1:
                dprior = -0.5 * taus[TAU1] * (prop * prop - cur * cur)
                dprior += companion_prior(c1, prop - cur, taus)
            elif k == i_b2:
                dprior = -0.5 * taus[TAU2] * (prop * prop - cur * cur)
                dprior += companion_prior(c2, prop - cur, taus)
                if c2_icar:
                    dlt = prop - cur
                    dprior += -0.5 * taus[TAUB] * (2.0 * dlt * float(c2_qw[ic0:ic1] @ theta[ic0:ic1])
                                                   + dlt * dlt * c2_wqw)
            elif u_kind == U_ICAR:
                i = k - i_u
                mean = _icar_cond(theta[i_u:i_tau], i, adj, offsets, num)
                dprior = -0.5 * taus[TAUB] * num[i] * ((prop - mean) ** 2 - (cur - mean) ** 2)
            else:
                dprior = -0.5 * taus[TAUV] * (prop * prop - cur * cur)

            if comp and ic0 <= k < ic1:
                # prior of the intercept implied after re-centring
                mc = theta[ic0:ic1].mean()
                step = (prop - cur) / (ic1 - ic0)
                dprior += -0.5 * taus[ptau] * step * (2.0 * theta[p0:p1].sum() + (p1 - p0) * (2.0 * mc + step))

            sl, coef = block(k)
            if (icpt_kind == ICPT_TIME and k == 0) or (k == i_b2 and b2_neutral):
                # day-1 intercept has no likelihood term; a neutral b2 move keeps eta
                new_eta = new_cell = None
                dll = 0.0
            else:
                new_eta = eta[sl] + (prop - cur) * coef
                new_cell = cell_values(new_eta, y[sl], lgy[sl], eps, lognormal)
                if lognormal:
                    dll = -0.5 * taus[TAUY] * float(np.sum(new_cell - cell[sl]))
                else:
                    dll = float(np.sum(new_cell - cell[sl]))
            if logu[s, k] < dll + dprior:
                theta[k] = prop
                if k == i_b1 and c1[0]:
                    theta[c1[1]:c1[2]] += (prop - cur) * c1[4][c1[1]:c1[2]]
                elif k == i_b2:
                    if c2[0]:
                        theta[c2[1]:c2[2]] += (prop - cur) * c2[4][c2[1]:c2[2]]
                    if c2_icar:
                        theta[ic0:ic1] += (prop - cur) * c2_w[ic0:ic1]
                if new_eta is not None:
                    eta[sl] = new_eta
                    cell[sl] = new_cell
                acc[k] += 1

        if ic1 > ic0:
            c = theta[ic0:ic1].mean()
            theta[ic0:ic1] -= c
            if comp:
                theta[p0:p1] += c
            else:
                eta[:, 1:] -= c
                cell[:, 1:] = cell_values(eta[:, 1:], y[:, 1:], lgy[:, 1:], eps, lognormal)

        taus = theta[i_tau:]
        g = gam[s]
        if tau_active[TAU0]:
            taus[TAU0] = g[TAU0] / (prior_rate[TAU0] + 0.5 * float(np.sum(theta[:n_icpt] ** 2)))
        if tau_active[TAU1]:
            taus[TAU1] = g[TAU1] / (prior_rate[TAU1] + 0.5 * theta[i_b1] ** 2)
        if tau_active[TAU2]:
            taus[TAU2] = g[TAU2] / (prior_rate[TAU2] + 0.5 * theta[i_b2] ** 2)
        if tau_active[TAUV]:
            taus[TAUV] = g[TAUV] / (prior_rate[TAUV] + 0.5 * float(np.sum(theta[i_u:i_tau] ** 2)))
        if tau_active[TAUY]:
            taus[TAUY] = g[TAUY] / (prior_rate[TAUY] + 0.5 * float(np.sum(cell)))
        if tau_active[TAUB]:
            vec = theta[i_u:i_tau] if u_kind == U_ICAR else theta[:n_icpt]
            taus[TAUB] = g[TAUB] / (prior_rate[TAUB] + 0.5 * _icar_q(vec, adj, offsets, m))

        if lognormal:
            tau_y = taus[TAUY]
            out_dev[s] = m * T * (LOG_2PI - math.log(tau_y)) + tau_y * float(np.sum(cell))
        else:
            out_dev[s] = -2.0 * float(np.sum(cell))
        out_theta[s] = theta
