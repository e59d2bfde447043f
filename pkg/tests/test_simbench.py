import numpy as np
import pytest

from shiftset import (
    ConfigurationError,
    DgpSpec,
    OracleEvaluator,
    RiskTargets,
    RngStream,
    StudyConfig,
    ThresholdGrid,
    dgp_draw,
    oracle_psi,
    oracle_psi_curve,
    oracle_tau0,
    run_study,
    wilson_interval,
)

TARGETS = RiskTargets(0.05, 0.05)
GRID = ThresholdGrid.from_range(0.0, 0.3, 0.05)


class TestDgpDraw:
    def test_highdim_label_probs_at_origin(self):
        spec = DgpSpec("highdim-sparse")
        p = spec.label_probs(np.zeros((1, 20)))[0]
        np.testing.assert_allclose(p, [0.1175, 0.8681, 0.0144], atol=5e-5)

    def test_highdim_scores_at_origin(self):
        # normalized (1, e^0.02, e^-0.03), recomputed independently
        spec = DgpSpec("highdim-sparse")
        s = spec.score_table(np.zeros((1, 20)))[0]
        np.testing.assert_allclose(s, [0.33437582, 0.34113066, 0.32449352],
                                   atol=1e-8)
        assert s.sum() == pytest.approx(1.0)

    def test_scores_sum_to_one(self, rng):
        for kind in ("highdim-sparse", "lowdim", "lowdim-noshift"):
            spec = DgpSpec(kind)
            sample = dgp_draw(spec, 200, rng.child(kind))
            np.testing.assert_allclose(spec.score_table(sample.x).sum(axis=1),
                                       1.0)

    def test_draw_shape_and_masking(self, rng):
        spec = DgpSpec("highdim-sparse")
        sample = dgp_draw(spec, 500, rng.child("d"))
        assert sample.p == 20
        assert np.isnan(sample.score[~sample.is_source]).all()
        assert np.isfinite(sample.score[sample.is_source]).all()
        # scores are probabilities of the drawn label
        assert sample.score[sample.is_source].min() > 0.0
        assert sample.score[sample.is_source].max() < 1.0

    def test_noshift_populations_match(self, rng):
        spec = DgpSpec("lowdim-noshift")
        sample = dgp_draw(spec, 40_000, rng.child("d"))
        cov_src = np.cov(sample.x[sample.is_source].T)
        cov_tgt = np.cov(sample.x[~sample.is_source].T)
        assert np.abs(cov_src - cov_tgt).max() < 0.05

    def test_lowdim_target_covariance_is_halved(self, rng):
        spec = DgpSpec("lowdim")
        sample = dgp_draw(spec, 40_000, rng.child("d"))
        var_src = sample.x[sample.is_source].var(axis=0)
        var_tgt = sample.x[~sample.is_source].var(axis=0)
        np.testing.assert_allclose(var_tgt / var_src, 0.5, atol=0.05)

    def test_unknown_kind(self):
        with pytest.raises(ConfigurationError):
            DgpSpec("mediumdim")


class TestOracles:
    def test_psi_bounds(self, rng):
        spec = DgpSpec("lowdim")
        assert oracle_psi(spec, -1.0, 2000, rng.child("a")) == 0.0
        assert oracle_psi(spec, 1.5, 2000, rng.child("b")) == 1.0

    def test_curve_monotone(self, rng):
        for kind in ("highdim-sparse", "lowdim", "lowdim-noshift"):
            curve = oracle_psi_curve(DgpSpec(kind), list(GRID), 20_000,
                                     rng.child(kind))
            assert np.all(np.diff(curve) >= 0)

    def test_tau0_extremes(self, rng):
        spec = DgpSpec("lowdim")
        lo = oracle_tau0(spec, 0.0, 5000, rng.child("q0"))
        hi = oracle_tau0(spec, 1.0, 5000, RngStream(1).child("q0"))
        mid = oracle_tau0(spec, 0.05, 5000, rng.child("q1"))
        assert lo < mid < hi

    def test_tau0_seed_stability(self):
        # two seeds at M=100000 should agree within 3 order-statistic SEs
        spec = DgpSpec("lowdim")
        M, alpha, h = 100_000, 0.05, 0.01
        t1 = oracle_tau0(spec, alpha, M, RngStream(1).child("t"))
        t2 = oracle_tau0(spec, alpha, M, RngStream(2).child("t"))
        qlo = oracle_tau0(spec, alpha - h, M, RngStream(3).child("t"))
        qhi = oracle_tau0(spec, alpha + h, M, RngStream(3).child("t"))
        dens = 2 * h / max(qhi - qlo, 1e-12)
        se = np.sqrt(alpha * (1 - alpha) / M) / dens
        assert abs(t1 - t2) < 3 * np.sqrt(2) * se

    def test_tau0_consistent_with_curve(self):
        spec = DgpSpec("lowdim")
        tau0 = oracle_tau0(spec, 0.05, 200_000, RngStream(5).child("t"))
        psi = oracle_psi(spec, tau0, 200_000, RngStream(6).child("p"))
        assert psi == pytest.approx(0.05, abs=0.005)

    def test_source_optimal_threshold_exceeds_target(self):
        # the shift concentrates target covariates where scores run lower
        spec = DgpSpec("highdim-sparse")
        gen = RngStream(7).child("swap").generator()
        qs = {}
        for a in (0, 1):
            X = spec.draw_x(200_000, np.full(200_000, a), gen)
            probs = spec.label_probs(X)
            u = gen.uniform(size=200_000)
            y = (u[:, None] > np.cumsum(probs, axis=1)).sum(axis=1)
            qs[a] = np.quantile(spec.score_table(X)[np.arange(200_000), y], 0.05)
        assert qs[1] > qs[0]

    def test_evaluator_matches_curve(self):
        spec = DgpSpec("lowdim")
        ev = OracleEvaluator(spec, 50_000, RngStream(8).child("ev"))
        curve = oracle_psi_curve(spec, list(GRID), 50_000, RngStream(8).child("ev"))
        for tau, psi in zip(GRID, curve):
            assert ev.psi_at(tau) == pytest.approx(psi, abs=1e-12)
        cut = np.full(ev.M, 0.15)
        assert ev.psi_of_cutoffs(cut) == pytest.approx(ev.psi_at(0.15), abs=1e-12)


class TestWilson:
    def test_boundaries(self):
        lo, _ = wilson_interval(0, 10)
        _, hi = wilson_interval(10, 10)
        assert lo == 0.0 and hi == 1.0

    def test_reference_value(self):
        lo, hi = wilson_interval(190, 200, 0.95)
        assert lo == pytest.approx(0.9104218518612239, abs=1e-12)
        assert hi == pytest.approx(0.9726173543992360, abs=1e-12)

    def test_against_statsmodels(self):
        sm = pytest.importorskip("statsmodels.stats.proportion")
        for k, n in [(3, 17), (50, 80), (199, 200)]:
            lo, hi = wilson_interval(k, n, 0.95)
            slo, shi = sm.proportion_confint(k, n, alpha=0.05, method="wilson")
            assert lo == pytest.approx(slo, abs=1e-10)
            assert hi == pytest.approx(shi, abs=1e-10)

    def test_domain(self):
        with pytest.raises(ConfigurationError):
            wilson_interval(5, 0)
        with pytest.raises(ConfigurationError):
            wilson_interval(11, 10)


class TestRunStudy:
    def _cfg(self, oracle_m=20_000):
        return StudyConfig(grid=GRID, targets=TARGETS, oracle_m=oracle_m)

    def test_deterministic(self):
        spec = DgpSpec("lowdim")
        a = run_study(spec, [300], ["onestep"], 2, self._cfg(), RngStream(9))
        b = run_study(spec, [300], ["onestep"], 2, self._cfg(), RngStream(9))
        assert a.rows == b.rows
        assert a.aggregates == b.aggregates

    def test_row_count_per_method(self):
        spec = DgpSpec("lowdim")
        rep = run_study(spec, [300], ["onestep"], 3, self._cfg(), RngStream(10))
        assert len(rep.rows) == 3
        rep = run_study(spec, [300], ["onestep", "icp"], 3, self._cfg(),
                        RngStream(10))
        assert len(rep.rows) == 6
        assert {r.method for r in rep.rows} == {"onestep", "icp"}

    def test_all_methods_run(self):
        spec = DgpSpec("lowdim")
        rep = run_study(spec, [400],
                        ["onestep", "tmle", "rs", "plugin", "wplugin", "icp",
                         "wcp"], 2, self._cfg(), RngStream(11))
        assert len(rep.rows) == 14
        for row in rep.rows:
            if not row.failed:
                assert 0.0 <= row.true_error <= 1.0

    def test_unknown_method(self):
        with pytest.raises(ConfigurationError):
            run_study(DgpSpec("lowdim"), [300], ["magic"], 1, self._cfg(),
                      RngStream(12))

    def test_aggregate_consistency(self):
        spec = DgpSpec("lowdim-noshift")
        rep = run_study(spec, [400], ["icp"], 10, self._cfg(), RngStream(13))
        agg = rep.aggregates[0]
        manual = sum(r.covered for r in rep.rows)
        assert agg.covered == manual
        assert agg.proportion == manual / 10
        lo, hi = wilson_interval(manual, 10, 0.95)
        assert (agg.wilson_lo, agg.wilson_hi) == (lo, hi)
