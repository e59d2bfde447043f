import numpy as np
import pytest

from shiftset import (
    BinaryLearnerSpec,
    BoundViolationError,
    ConfigurationError,
    DgpSpec,
    EmptyAcceptanceError,
    RiskTargets,
    RngStream,
    RsConfig,
    RsRun,
    ThresholdGrid,
    dgp_draw,
    rs_estimate,
    rs_prepare,
)
from shiftset.learners import ConstantPredictor
from tests.conftest import make_sample

TARGETS = RiskTargets(0.05, 0.05)
GRID = ThresholdGrid((0.15,))
CONST = BinaryLearnerSpec(kind="constant")
LOGIT = BinaryLearnerSpec()


class TestRsConfig:
    def test_domains(self):
        with pytest.raises(ConfigurationError):
            RsConfig(xi=0.0)
        with pytest.raises(ConfigurationError):
            RsConfig(bhat_mult=0.5)
        with pytest.raises(ConfigurationError):
            RsConfig(bhat_fixed=0.5)


class TestRsPrepare:
    def test_run_mechanics(self, rng):
        sample = dgp_draw(DgpSpec("lowdim"), 1000, rng.child("d"))
        run = rs_prepare(sample, RsConfig(), GRID, LOGIT, LOGIT, rng.child("r"))
        a_test = sample.a[run.test_idx]
        # accepted units are source units passing the thinning draw
        expected = (a_test == 1) & (run.zeta <= run.what_test / run.bhat)
        np.testing.assert_array_equal(run.accepted, expected)
        # multiplier bound rule, floored at 1
        w_src_max = run.what_test[a_test == 1].max()
        assert run.bhat == pytest.approx(max(1.0, 1.3 * w_src_max))
        assert run.bhat >= w_src_max
        # pi is the mean estimated weight over test source units
        assert run.pi_hat == pytest.approx(run.what_test[a_test == 1].mean())
        assert run.pi_hat > 0
        # split is a partition
        both = np.concatenate([run.train_idx, run.test_idx])
        assert sorted(both.tolist()) == list(range(1000))

    def test_constant_propensity_gives_unit_weights(self, rng):
        # g fitted as the constant source share equals gamma_train, so the
        # odds transform collapses to exactly 1 everywhere.
        sample = dgp_draw(DgpSpec("lowdim"), 800, rng.child("d"))
        run = rs_prepare(sample, RsConfig(), GRID, CONST, CONST, rng.child("r"))
        np.testing.assert_allclose(run.what_test, 1.0, atol=1e-12)

    def test_weight_equal_to_bound_accepts_all(self, rng):
        sample = dgp_draw(DgpSpec("lowdim"), 800, rng.child("d"))
        run = rs_prepare(sample, RsConfig(bhat_fixed=1.0), GRID, CONST, CONST,
                         rng.child("r"))
        a_test = sample.a[run.test_idx]
        assert run.n_accepted == int((a_test == 1).sum())

    def test_half_bound_accepts_about_half(self, rng):
        # unit weights with B = 2: acceptance probability is exactly 1/2
        sample = dgp_draw(DgpSpec("lowdim"), 2400, rng.child("d"))
        run = rs_prepare(sample, RsConfig(bhat_fixed=2.0), GRID, CONST, CONST,
                         rng.child("r"))
        n_src = int((sample.a[run.test_idx] == 1).sum())
        assert n_src >= 500
        frac = run.n_accepted / n_src
        se = np.sqrt(0.25 / n_src)
        assert abs(frac - 0.5) <= 3 * se

    def test_fixed_bound_violation(self, rng):
        # estimated lowdim weights exceed 1 somewhere, so B = 1 must fail
        sample = dgp_draw(DgpSpec("lowdim"), 1000, rng.child("d"))
        with pytest.raises(BoundViolationError):
            rs_prepare(sample, RsConfig(bhat_fixed=1.0), GRID, LOGIT, LOGIT,
                       rng.child("r"))

    def test_determinism(self, rng):
        sample = dgp_draw(DgpSpec("lowdim"), 600, rng.child("d"))
        r1 = rs_prepare(sample, RsConfig(), GRID, LOGIT, LOGIT, RngStream(3))
        r2 = rs_prepare(sample, RsConfig(), GRID, LOGIT, LOGIT, RngStream(3))
        np.testing.assert_array_equal(r1.accepted, r2.accepted)
        np.testing.assert_array_equal(r1.zeta, r2.zeta)


def hand_run():
    """Hand-built run: 3 test source units with weights (2, 0.5, 1.5)."""
    sample = make_sample(a=[1, 0, 0, 1, 1, 1],
                         x=[[float(i)] for i in range(6)],
                         score=[0.4, None, None, 0.1, 0.8, 0.6])
    return sample, RsRun(
        train_idx=np.array([0, 1, 2]),
        test_idx=np.array([3, 4, 5]),
        taus=(0.5,),
        g_predictor=ConstantPredictor(0.5),
        e_predictors=(ConstantPredictor(0.0),),
        gamma_train=1 / 3,
        bhat=2.0,
        zeta=np.array([0.1, 0.2, 0.9]),
        what_test=np.array([2.0, 0.5, 1.5]),
        accepted=np.array([True, True, False]),
        pi_hat=float(np.mean([2.0, 0.5, 1.5])),
    )


class TestRsEstimate:
    def test_pi_hat_of_hand_example(self):
        _, run = hand_run()
        assert run.pi_hat == pytest.approx(4 / 3)

    def test_zero_conditional_error_reduces_to_proportion(self):
        # with the trained conditional-error fit identically zero, the
        # correction vanishes and psi is the accepted-sample proportion
        sample, run = hand_run()
        table = rs_estimate(run, sample, ThresholdGrid((0.5,)), TARGETS)
        # accepted scores are 0.1 (Z=1) and 0.8 (Z=0) -> proportion 1/2
        assert table.psi[0] == pytest.approx(0.5)

    def test_variance_is_positive_here(self):
        sample, run = hand_run()
        table = rs_estimate(run, sample, ThresholdGrid((0.5,)), TARGETS)
        assert table.sigma[0] > 0
        assert table.cub[0] > table.psi[0]

    def test_below_support_threshold_gives_exact_zero(self, rng):
        sample = dgp_draw(DgpSpec("lowdim"), 600, rng.child("d"))
        grid = ThresholdGrid((0.0, 0.15))
        run = rs_prepare(sample, RsConfig(), grid, LOGIT, LOGIT, rng.child("r"))
        table = rs_estimate(run, sample, grid, TARGETS)
        assert table.psi[0] == 0.0
        assert table.sigma[0] == 0.0
        assert table.cub[0] == 0.0

    def test_empty_acceptance_raises(self, rng):
        sample = dgp_draw(DgpSpec("lowdim"), 300, rng.child("d"))
        with pytest.raises(EmptyAcceptanceError):
            run = rs_prepare(sample, RsConfig(bhat_fixed=1e12), GRID, LOGIT,
                             LOGIT, rng.child("r"))
            rs_estimate(run, sample, GRID, TARGETS)

    def test_grid_mismatch_rejected(self, rng):
        sample = dgp_draw(DgpSpec("lowdim"), 300, rng.child("d"))
        run = rs_prepare(sample, RsConfig(), GRID, LOGIT, LOGIT, rng.child("r"))
        with pytest.raises(ConfigurationError):
            rs_estimate(run, sample, ThresholdGrid((0.2,)), TARGETS)

    def test_noshift_estimated_nuisances_recover_level(self):
        # threshold at the true 0.05-quantile: corrected estimate within
        # 3 standard errors of 0.05
        from shiftset import oracle_tau0

        rng = RngStream(31415)
        spec = DgpSpec("lowdim-noshift")
        tau0 = oracle_tau0(spec, 0.05, 400_000, rng.child("tau0"))
        grid = ThresholdGrid((tau0,))
        sample = dgp_draw(spec, 8000, rng.child("d"))
        run = rs_prepare(sample, RsConfig(), grid, LOGIT, LOGIT, rng.child("r"))
        table = rs_estimate(run, sample, grid, TARGETS)
        assert abs(table.psi[0] - 0.05) <= 3 * table.sigma[0] / np.sqrt(8000)
