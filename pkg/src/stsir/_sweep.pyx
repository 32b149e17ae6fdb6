# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled Metropolis-within-Gibbs sweeps; same contract as ``_sweep_py.run_sweeps``."""

from libc.math cimport exp, log

cdef double LOG_2PI = 1.8378770664093453

# keep in sync with model.py
cdef enum:
    ICPT_SCALAR = 0
    ICPT_TIME = 1
    ICPT_SPACE = 2
    U_ICAR = 1
    U_IID = 2
    TAU0 = 0
    TAU1 = 1
    TAU2 = 2
    TAUB = 3
    TAUV = 4
    TAUY = 5


cdef inline double _cell(double eta, double y, double lgy, double eps, bint lognormal) nogil:
    cdef double mu, r
    if lognormal:
        r = y - eta
        return r * r
    mu = exp(eta)
    return y * log(mu + eps) - mu - eps - lgy


cdef double _icar_cond(double[::1] vec, Py_ssize_t off, Py_ssize_t i,
                       long[::1] adj, long[::1] offsets, long[::1] num) nogil:
    cdef double s = 0.0
    cdef Py_ssize_t k
    for k in range(offsets[i], offsets[i + 1]):
        s += vec[off + adj[k]]
    return s / num[i]


cdef double _icar_q(double[::1] vec, Py_ssize_t off, Py_ssize_t m,
                    long[::1] adj, long[::1] offsets) nogil:
    cdef double q = 0.0, dlt
    cdef Py_ssize_t i, k, l
    for i in range(m):
        for k in range(offsets[i], offsets[i + 1]):
            l = adj[k]
            if l > i:
                dlt = vec[off + i] - vec[off + l]
                q += dlt * dlt
    return q


cdef inline double _companion(double[::1] theta, double[::1] v, Py_ssize_t a, Py_ssize_t b,
                              double tau, double dlt) nogil:
    cdef double t = 0.0
    cdef Py_ssize_t i
    for i in range(a, b):
        t += v[i] * (2.0 * dlt * theta[i] + dlt * dlt * v[i])
    return -0.5 * tau * t


def run_sweeps(dict d, double[::1] theta, double[:, ::1] eta, double[:, ::1] cell,
               double[:, ::1] z, double[:, ::1] logu, double[:, ::1] gam,
               double[::1] scales, unsigned char[::1] active, unsigned char[::1] tau_active,
               double[::1] post_shape, double[::1] prior_rate, long[::1] acc,
               double[:, ::1] out_theta, double[::1] out_dev):
    cdef Py_ssize_t m = eta.shape[0], T = eta.shape[1]
    cdef Py_ssize_t n_icpt = d["n_icpt"], i_b1 = d["i_b1"], i_b2 = d["i_b2"]
    cdef Py_ssize_t i_u = d["i_u"], i_tau = d["i_tau"]
    cdef int icpt_kind = d["icpt_kind"], u_kind = d["u_kind"]
    cdef bint lognormal = d["lognormal"]
    cdef double eps = d["eps"]
    cdef double[:, ::1] y = d["y"]
    cdef double[:, ::1] lgy = d["lgy"]
    cdef double[:, ::1] L = d["L"]
    cdef double[::1] x = d["x"]
    cdef long[::1] adj = d["adj"]
    cdef long[::1] offsets = d["offsets"]
    cdef long[::1] num = d["num"]
    cdef Py_ssize_t K = i_tau, P = theta.shape[0]
    # ICAR vector and the intercept slots that absorb its mean when re-centring
    cdef Py_ssize_t ic0 = d["icar_start"], ic1 = d["icar_end"]
    cdef Py_ssize_t p0 = d["comp_start"], p1 = d["comp_end"], ptau = d["comp_tau"]
    cdef bint comp = d["comp"]
    # companion directions of the b1 / b2 proposals (see mcmc._companions)
    cdef bint c1_on = d["c1_on"], c2_on = d["c2_on"], c2_icar = d["c2_icar"], b2_neutral = d["b2_neutral"]
    cdef Py_ssize_t c1_s = d["c1_s"], c1_e = d["c1_e"], c1_tau = d["c1_tau"]
    cdef Py_ssize_t c2_s = d["c2_s"], c2_e = d["c2_e"], c2_tau = d["c2_tau"]
    cdef double[::1] c1_v = d["c1_v"]
    cdef double[::1] c2_v = d["c2_v"]
    cdef double[::1] c2_w = d["c2_w"]
    cdef double[::1] c2_qw = d["c2_qw"]
    cdef double c2_wqw = d["c2_wqw"]
    cdef Py_ssize_t n_sweeps = z.shape[0]

    # scratch for proposed eta/cell values over the largest block (m * T)
    cdef double[::1] s_eta = d["scratch_eta"]
    cdef double[::1] s_cell = d["scratch_cell"]

    cdef Py_ssize_t s, k, i, j, i0, i1, j0, j1, n, p
    cdef double cur, prop, dlt, dprior, dll, mean, c, q, tau_y, acc_sum, e, cv, step, psum
    cdef int mode  # 0 constant step, 1 times L, 2 times x_i

    with nogil:
        for s in range(n_sweeps):
            for k in range(K):
                if not active[k]:
                    continue
                cur = theta[k]
                prop = cur + scales[k] * z[s, k]
                dlt = prop - cur
                mode = 0
                if k < n_icpt:
                    if icpt_kind == ICPT_SPACE:
                        mean = _icar_cond(theta, 0, k, adj, offsets, num)
                        dprior = -0.5 * theta[i_tau + TAUB] * num[k] * ((prop - mean) * (prop - mean) - (cur - mean) * (cur - mean))
                        i0 = k; i1 = k + 1; j0 = 1; j1 = T
                    else:
                        dprior = -0.5 * theta[i_tau + TAU0] * (prop * prop - cur * cur)
                        if icpt_kind == ICPT_SCALAR:
                            i0 = 0; i1 = m; j0 = 1; j1 = T
                        else:
                            i0 = 0; i1 = m; j0 = k; j1 = k + 1
                            if k == 0:
                                j1 = 0  # day-1 intercept: prior only
                elif k == i_b1:
                    dprior = -0.5 * theta[i_tau + TAU1] * (prop * prop - cur * cur)
                    if c1_on:
                        dprior += _companion(theta, c1_v, c1_s, c1_e, theta[i_tau + c1_tau], dlt)
                    i0 = 0; i1 = m; j0 = 1; j1 = T; mode = 1
                elif k == i_b2:
                    dprior = -0.5 * theta[i_tau + TAU2] * (prop * prop - cur * cur)
                    if c2_on:
                        dprior += _companion(theta, c2_v, c2_s, c2_e, theta[i_tau + c2_tau], dlt)
                    if c2_icar:
                        q = 0.0
                        for i in range(ic0, ic1):
                            q += c2_qw[i] * theta[i]
                        dprior += -0.5 * theta[i_tau + TAUB] * (2.0 * dlt * q + dlt * dlt * c2_wqw)
                    i0 = 0; i1 = m; j0 = 1; j1 = T; mode = 2
                    if b2_neutral:
                        j1 = 0  # eta unchanged along the companion direction
                else:
                    i = k - i_u
                    if u_kind == U_ICAR:
                        mean = _icar_cond(theta, i_u, i, adj, offsets, num)
                        dprior = -0.5 * theta[i_tau + TAUB] * num[i] * ((prop - mean) * (prop - mean) - (cur - mean) * (cur - mean))
                    else:
                        dprior = -0.5 * theta[i_tau + TAUV] * (prop * prop - cur * cur)
                    i0 = i; i1 = i + 1; j0 = 1; j1 = T

                if comp and ic0 <= k < ic1:
                    # prior of the intercept implied after re-centring
                    mean = 0.0
                    for i in range(ic0, ic1):
                        mean += theta[i]
                    mean /= ic1 - ic0
                    psum = 0.0
                    for i in range(p0, p1):
                        psum += theta[i]
                    step = dlt / (ic1 - ic0)
                    dprior += -0.5 * theta[i_tau + ptau] * step * (2.0 * psum + (p1 - p0) * (2.0 * mean + step))

                dll = 0.0
                n = 0
                if j1 > j0:
                    for i in range(i0, i1):
                        for j in range(j0, j1):
                            if mode == 0:
                                e = eta[i, j] + dlt
                            elif mode == 1:
                                e = eta[i, j] + dlt * L[i, j]
                            else:
                                e = eta[i, j] + dlt * x[i]
                            cv = _cell(e, y[i, j], lgy[i, j], eps, lognormal)
                            dll += cv - cell[i, j]
                            s_eta[n] = e
                            s_cell[n] = cv
                            n += 1
                    if lognormal:
                        dll = -0.5 * theta[i_tau + TAUY] * dll
                if logu[s, k] < dll + dprior:
                    theta[k] = prop
                    if k == i_b1 and c1_on:
                        for i in range(c1_s, c1_e):
                            theta[i] += dlt * c1_v[i]
                    elif k == i_b2:
                        if c2_on:
                            for i in range(c2_s, c2_e):
                                theta[i] += dlt * c2_v[i]
                        if c2_icar:
                            for i in range(ic0, ic1):
                                theta[i] += dlt * c2_w[i]
                    n = 0
                    if j1 > j0:
                        for i in range(i0, i1):
                            for j in range(j0, j1):
                                eta[i, j] = s_eta[n]
                                cell[i, j] = s_cell[n]
                                n += 1
                    acc[k] += 1

            if ic1 > ic0:
                c = 0.0
                for i in range(ic0, ic1):
                    c += theta[i]
                c /= ic1 - ic0
                for i in range(ic0, ic1):
                    theta[i] -= c
                if comp:
                    for i in range(p0, p1):
                        theta[i] += c
                else:
                    for i in range(m):
                        for j in range(1, T):
                            eta[i, j] -= c
                            cell[i, j] = _cell(eta[i, j], y[i, j], lgy[i, j], eps, lognormal)

            if tau_active[TAU0]:
                q = 0.0
                for i in range(n_icpt):
                    q += theta[i] * theta[i]
                theta[i_tau + TAU0] = gam[s, TAU0] / (prior_rate[TAU0] + 0.5 * q)
            if tau_active[TAU1]:
                theta[i_tau + TAU1] = gam[s, TAU1] / (prior_rate[TAU1] + 0.5 * theta[i_b1] * theta[i_b1])
            if tau_active[TAU2]:
                theta[i_tau + TAU2] = gam[s, TAU2] / (prior_rate[TAU2] + 0.5 * theta[i_b2] * theta[i_b2])
            if tau_active[TAUV]:
                q = 0.0
                for i in range(m):
                    q += theta[i_u + i] * theta[i_u + i]
                theta[i_tau + TAUV] = gam[s, TAUV] / (prior_rate[TAUV] + 0.5 * q)

            acc_sum = 0.0
            for i in range(m):
                for j in range(T):
                    acc_sum += cell[i, j]
            if tau_active[TAUY]:
                theta[i_tau + TAUY] = gam[s, TAUY] / (prior_rate[TAUY] + 0.5 * acc_sum)
            if tau_active[TAUB]:
                if u_kind == U_ICAR:
                    q = _icar_q(theta, i_u, m, adj, offsets)
                else:
                    q = _icar_q(theta, 0, m, adj, offsets)
                theta[i_tau + TAUB] = gam[s, TAUB] / (prior_rate[TAUB] + 0.5 * q)

            if lognormal:
                tau_y = theta[i_tau + TAUY]
                out_dev[s] = m * T * (LOG_2PI - log(tau_y)) + tau_y * acc_sum
            else:
                out_dev[s] = -2.0 * acc_sum
            for p in range(P):
                out_theta[s, p] = theta[p]
