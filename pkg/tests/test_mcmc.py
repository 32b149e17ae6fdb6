import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from stsir import backend
from stsir.forecast import scenario_from_dict, simulate_panel
from stsir.ingest import AdjacencyGraph
from stsir.mcmc import (ChainTrace, SamplerConfig, SamplerError, _centring, _companions,
                        _gibbs_shapes, _kernel_inputs, _masks, gamma_posterior, gibbs_precision,
                        initialize, run_chain)
from stsir.model import (DataModel, ModelSpec, ParamVector, Variant, build_design, design_deviance,
                         linear_predictor, log_posterior)
from stsir._sweep_py import cell_values

from conftest import make_panel

FAST = dict(n_iter=400, burn_in=200, thin=2)


class TestGibbs:
    @pytest.mark.parametrize("prior,qf,rank,post", [
        ((2, 0.5), 0.0, 1, (2.5, 0.5)),
        ((2, 0.5), 4.0, 1, (2.5, 2.5)),
        ((0.01, 0.01), 2.0, 2, (1.01, 1.01)),
    ])
    def test_posterior_parameters(self, prior, qf, rank, post):
        assert gamma_posterior(*prior, qf, rank) == pytest.approx(post)

    def test_iid_shortcut(self):
        a = gibbs_precision(2, 0.5, values=[2.0], rng=np.random.default_rng(1))
        b = gibbs_precision(2, 0.5, quadratic_form=4.0, rank=1, rng=np.random.default_rng(1))
        assert a == b

    @pytest.mark.parametrize("kw,shape,rate", [
        (dict(prior_shape=2, prior_rate=0.5, values=[0.0]), 2.5, 0.5),
        (dict(prior_shape=2, prior_rate=0.5, values=[2.0]), 2.5, 2.5),
        (dict(prior_shape=0.01, prior_rate=0.01, quadratic_form=2.0, rank=2), 1.01, 1.01),
    ])
    def test_draw_moments(self, kw, shape, rate):
        rng = np.random.default_rng(42)
        x = np.array([gibbs_precision(rng=rng, **kw) for _ in range(10000)])
        mean, var = shape / rate, shape / rate ** 2
        se_mean = math.sqrt(var / x.size)
        # the variance of the sample variance uses the fourth central moment of the gamma
        mu4 = 3 * shape * (shape + 2) / rate ** 4
        se_var = math.sqrt((mu4 - var ** 2) / x.size)
        assert abs(x.mean() - mean) < 3 * se_mean
        assert abs(x.var(ddof=1) - var) < 3 * se_var

    def test_invalid(self):
        with pytest.raises(ValueError):
            gibbs_precision(2, 0.5, quadratic_form=1.0, rank=0)
        with pytest.raises(ValueError):
            gamma_posterior(2, 0.5, -1.0, 1)


class TestInitialize:
    def test_m3(self):
        p = initialize(ModelSpec(variant=Variant.M3), 46, 10)
        assert p.b0_scalar == -9.0
        np.testing.assert_array_equal(p.b_spatial, np.zeros(46))
        assert p.b1 == p.b2 == 0.0 and p.tau0 == p.tau_b == 1.0

    def test_m4(self):
        p = initialize(ModelSpec(variant=Variant.M4), 5, 82)
        assert p.b0_time.shape == (82,) and np.all(p.b0_time == -9.0)

    @settings(max_examples=25, deadline=None)
    @given(st.sampled_from(list(Variant)), st.sampled_from(list(DataModel)),
           arrays(np.int64, (3, 5), elements=st.integers(0, 500)), st.floats(1.0, 1e6))
    def test_initial_posterior_finite(self, variant, dm, sym, sus):
        panel = make_panel(sym, sus_init=sus + 2600, poverty=[0.5, -1.0, 0.5])
        spec = ModelSpec(variant=variant, data_model=dm)
        g = AdjacencyGraph.from_edges(3, [(0, 1), (1, 2)])
        design = build_design(panel, spec, g)
        th = design.layout.pack(initialize(spec, 3, 5))
        assert math.isfinite(log_posterior(design, th, g))


class TestConfig:
    def test_trace_length(self, small_sim):
        sc, panel = small_sim
        tr = run_chain(panel, ModelSpec(variant=Variant.M3), sc.graph,
                       SamplerConfig(n_iter=100, burn_in=50, thin=5))
        assert len(tr) == 10 and len(tr.theta) == 10
        assert tr.iterations.tolist() == list(range(55, 101, 5))

    @pytest.mark.parametrize("kw", [dict(burn_in=100, n_iter=100), dict(thin=0), dict(adapt_window=5),
                                    dict(target_accept=1.0), dict(freeze=("nope",))])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            SamplerConfig(**kw)

    def test_dict_roundtrip(self):
        c = SamplerConfig(n_iter=10, burn_in=2, freeze=("b1",))
        assert SamplerConfig.from_dict(c.to_dict()) == c


class TestChain:
    def test_deterministic(self, small_sim):
        sc, panel = small_sim
        spec = ModelSpec(variant=Variant.M3)
        a = run_chain(panel, spec, sc.graph, SamplerConfig(seed=9, **FAST))
        b = run_chain(panel, spec, sc.graph, SamplerConfig(seed=9, **FAST))
        c = run_chain(panel, spec, sc.graph, SamplerConfig(seed=10, **FAST))
        np.testing.assert_array_equal(a.theta, b.theta)
        np.testing.assert_array_equal(a.deviances, b.deviances)
        assert not np.array_equal(a.theta, c.theta)

    @pytest.mark.parametrize("variant", list(Variant))
    def test_sum_to_zero_every_sweep(self, small_sim, variant):
        sc, panel = small_sim
        spec = ModelSpec(variant=variant)
        tr = run_chain(panel, spec, sc.graph, SamplerConfig(n_iter=150, burn_in=0, thin=1, seed=2))
        lay = tr.layout
        if spec.has_spatial_icar:
            assert np.abs(tr.theta[:, lay.i_u:lay.i_tau].sum(axis=1)).max() < 1e-9
        if variant == Variant.M5:
            assert np.abs(tr.theta[:, :lay.n_icpt].sum(axis=1)).max() < 1e-9

    @pytest.mark.parametrize("variant", list(Variant))
    def test_deviance_column_matches_draws(self, small_sim, variant):
        sc, panel = small_sim
        spec = ModelSpec(variant=variant)
        tr = run_chain(panel, spec, sc.graph, SamplerConfig(n_iter=60, burn_in=0, thin=6, seed=4))
        design = build_design(panel, spec, sc.graph)
        for th, dev in zip(tr.theta, tr.deviances):
            assert dev == pytest.approx(design_deviance(design, th), rel=1e-9)

    def test_conjugate_only(self, small_sim):
        sc, panel = small_sim
        spec = ModelSpec(variant=Variant.M3)
        cfg = SamplerConfig(n_iter=10001, burn_in=1, thin=1, seed=3, store_mu=False,
                            freeze=("b0", "b1", "b2", "spatial"))
        tr = run_chain(panel, spec, sc.graph, cfg)
        # location parameters stay at their initial values, so the posteriors are known
        for name, (a, b) in {"tau0": (2.5, 0.5 + 81 / 2), "tau1": (2.5, 0.5), "tau2": (2.5, 0.5),
                             "tau_b": (0.01 + 1.5, 0.01)}.items():
            assert tr.column(name).mean() == pytest.approx(a / b, rel=0.02)

    def test_acceptance_rates_after_adaptation(self):
        from conftest import recovery_scenario
        sc = recovery_scenario(seed=1)
        panel = simulate_panel(sc)
        tr = run_chain(panel, ModelSpec(variant=Variant.M3), sc.graph,
                       SamplerConfig(n_iter=6000, burn_in=3000, thin=10, seed=1, store_mu=False))
        rates = np.array(list(tr.accept_rates.values()))
        assert rates.size == 1 + 1 + 1 + 10
        assert np.all((rates >= 0.2) & (rates <= 0.7)), tr.accept_rates

    def test_uncentred_init_rejected(self, small_sim):
        sc, panel = small_sim
        spec = ModelSpec(variant=Variant.M1)
        p = initialize(spec, panel.m, panel.T)
        p.b_spatial = np.ones(panel.m)
        with pytest.raises(SamplerError, match="sum to zero"):
            run_chain(panel, spec, sc.graph, SamplerConfig(**FAST), init=p)

    def test_nonfinite_init_rejected(self, small_sim):
        sc, panel = small_sim
        spec = ModelSpec(variant=Variant.M1)
        p = initialize(spec, panel.m, panel.T)
        p.b1 = float("nan")
        with pytest.raises(SamplerError, match="offsets"):
            run_chain(panel, spec, sc.graph, SamplerConfig(**FAST), init=p)


def _kernel_setup(design, freeze=()):
    lay = design.layout
    d = _kernel_inputs(design)
    active, tau_active = _masks(lay, tuple(freeze) + ("tau0", "tau1", "tau2", "tau_b", "tau_v", "tau_y"))
    d.update(_centring(lay, design.m, active))
    d.update(_companions(design, active, d))
    shape, rate = _gibbs_shapes(design)
    return d, active, tau_active, shape, rate


def _one_move(design, d, theta, k, scale, logu_k, masks, kernel):
    """Propose along slot ``k`` only (every other proposal has zero length)."""
    active, tau_active, shape, rate = masks
    lay = design.layout
    th = theta.copy()
    eta = np.ascontiguousarray(linear_predictor(design, th))
    cell = np.ascontiguousarray(cell_values(eta, design.y, design.lgy, design.spec.offset, design.lognormal))
    z = np.zeros((1, lay.K))
    z[0, k] = 1.0
    logu = np.full((1, lay.K), -1e300)
    logu[0, k] = logu_k
    scales = np.full(lay.K, scale)
    acc = np.zeros(lay.K, dtype=np.int64)
    out_t, out_d = np.empty((1, lay.P)), np.empty(1)
    backend.get(kernel)(d, th, eta, cell, z, logu, np.ones((1, 6)), scales, active, tau_active,
                        shape, rate, acc, out_t, out_d)
    return th, out_d[0], acc[k]


@pytest.mark.parametrize("kernel", sorted(backend.KERNELS))
@pytest.mark.parametrize("variant,dm", [(v, DataModel.POISSON) for v in Variant]
                         + [(Variant.M3, DataModel.LOGNORMAL), (Variant.M4, DataModel.LOGNORMAL)])
def test_each_move_uses_exact_posterior_ratio(small_sim, variant, dm, kernel):
    """Every scalar move, companions included, is accepted exactly when log u < log pi' - log pi."""
    sc, panel = small_sim
    spec = ModelSpec(variant=variant, data_model=dm)
    design = build_design(panel, spec, sc.graph)
    lay = design.layout
    rng = np.random.default_rng(int(variant))
    p = initialize(spec, panel.m, panel.T)
    p.b1, p.b2, p.tau0, p.tau_b, p.tau_v, p.tau_y = 0.4, 0.3, 0.7, 2.5, 1.5, 3.0
    u = rng.normal(0, 0.3, panel.m)
    if spec.has_spatial_icar:
        p.b_spatial = u - u.mean()
    if variant == Variant.M5:
        p.b0_space = u - u.mean()
        p.v_uncorr = rng.normal(-6, 0.2, panel.m)
    if variant == Variant.M4:
        p.b0_time = rng.normal(-6, 0.2, panel.T)
    else:
        p.b0_scalar = -6.0
    theta = lay.pack(p)
    d, active, tau_active, shape, rate = _kernel_setup(design)
    masks = (active, tau_active, shape, rate)
    lp0 = log_posterior(design, theta, sc.graph)
    checked = 0
    for k in np.nonzero(active)[0]:
        prop, dev, accepted = _one_move(design, d, theta, k, 0.05, -1e300, masks, kernel)
        assert accepted == 1
        assert dev == pytest.approx(design_deviance(design, prop), rel=1e-9)
        delta = log_posterior(design, prop, sc.graph) - lp0
        tol = 1e-7 * max(1.0, abs(lp0))
        _, _, acc_lo = _one_move(design, d, theta, k, 0.05, delta - tol, masks, kernel)
        _, _, acc_hi = _one_move(design, d, theta, k, 0.05, delta + tol, masks, kernel)
        assert (acc_lo, acc_hi) == (1, 0), (lay.names()[k], delta)
        checked += 1
    assert checked == int(active.sum())


def test_companions_disabled_when_partner_frozen(small_sim):
    sc, panel = small_sim
    design = build_design(panel, ModelSpec(variant=Variant.M3), sc.graph)
    d, *_ = _kernel_setup(design, freeze=("b0",))
    assert not d["c1_on"] and not d["c2_on"] and not d["comp"]
    d, *_ = _kernel_setup(design)
    assert d["c1_on"] and d["c2_on"] and d["comp"]


def test_frozen_partner_chain_stays_centred(small_sim):
    sc, panel = small_sim
    tr = run_chain(panel, ModelSpec(variant=Variant.M3), sc.graph,
                   SamplerConfig(n_iter=100, burn_in=0, thin=1, freeze=("b0",)))
    lay = tr.layout
    assert np.all(tr.theta[:, 0] == -9.0)
    assert np.abs(tr.theta[:, lay.i_u:lay.i_tau].sum(axis=1)).max() < 1e-9


class TestTraceIO:
    def test_roundtrip(self, small_sim, tmp_path):
        sc, panel = small_sim
        spec = ModelSpec(variant=Variant.M4)
        tr = run_chain(panel, spec, sc.graph, SamplerConfig(**FAST))
        path = tmp_path / "trace.csv"
        tr.write_csv(path)
        back = ChainTrace.read_csv(path, spec)
        np.testing.assert_array_equal(back.table()[1], tr.table()[1])
        np.testing.assert_array_equal(back.deviances, tr.deviances)
        np.testing.assert_array_equal(back.iterations, tr.iterations)
        assert back.layout.names() == tr.layout.names()
        header = path.read_text().splitlines()[0].split(",")
        assert header == ["iter"] + tr.layout.exported_names() + ["deviance"]

    def test_spec_mismatch(self, small_sim, tmp_path):
        sc, panel = small_sim
        tr = run_chain(panel, ModelSpec(variant=Variant.M3), sc.graph, SamplerConfig(**FAST))
        tr.write_csv(tmp_path / "t.csv")
        with pytest.raises(SamplerError, match="different model"):
            ChainTrace.read_csv(tmp_path / "t.csv", ModelSpec(variant=Variant.M3, phi=0.5))

    def test_exported_columns_match_variant(self, small_sim):
        sc, panel = small_sim
        tr = run_chain(panel, ModelSpec(variant=Variant.M1, include_icar=False), None, SamplerConfig(**FAST))
        names, vals = tr.table()
        assert names == ["b0", "b1", "tau0", "tau1"]
        assert vals.shape == (len(tr), 4)
