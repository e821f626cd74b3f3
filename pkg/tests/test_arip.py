"""Isometry-constant estimator tests."""

import numpy as np
import pytest

from demix.arip import arip_sample, arip_scaling_report, random_tuple, tuple_ratio
from demix.ensembles import generate_ensemble, identity_ensemble
from demix.seeding import ROLE_ARIP, substream


def single_operator_rip_oracle(ens, r, trials, seed):
    """Direct classical-RIP sampler for s = 1 (independent of arip_sample).

    Same factor draws, but the ratio is the raw quotient
    ||A(Z)||^2 / ||Z||_F^2 without any tuple normalization.
    """
    n1, n2 = ens.shape
    ratios = []
    for t in range(trials):
        rng = substream(seed, ROLE_ARIP, t)
        L = rng.standard_normal((n1, r))
        R = rng.standard_normal((n2, r))
        Z = L @ R.T
        ratios.append(float(np.linalg.norm(ens.forward(0, Z)) ** 2 / np.linalg.norm(Z) ** 2))
    return ratios


class TestAripSample:
    def test_deterministic_reevaluation(self):
        ens = generate_ensemble("gaussian", s=2, m=30, shape=(6, 6), seed=1)
        Zs = random_tuple(ens, 2, np.random.default_rng(0))
        assert tuple_ratio(ens, Zs) == tuple_ratio(ens, Zs)
        a = arip_sample(ens, r=2, trials=25, seed=3)
        b = arip_sample(ens, r=2, trials=25, seed=3)
        assert a == b

    def test_exact_isometry_toy(self):
        ens = identity_ensemble(6, 6, scaled=True)
        est = arip_sample(ens, r=2, trials=50, seed=0)
        assert est.delta_hat <= 1e-12
        assert est.ratio_min == pytest.approx(1.0, abs=1e-12)
        assert est.ratio_max == pytest.approx(1.0, abs=1e-12)

    def test_gaussian_concentration(self):
        # m = 12 (2n + 1) r s at n = 20, r = 2, s = 2
        n, r, s = 20, 2, 2
        m = 12 * (2 * n + 1) * r * s
        ens = generate_ensemble("gaussian", s=s, m=m, shape=(n, n), seed=7)
        est = arip_sample(ens, r=r, trials=200, seed=0)
        assert est.delta_hat < 0.5

    def test_scaling_invariance(self):
        ens = generate_ensemble("gaussian", s=2, m=40, shape=(6, 6), seed=2)
        Zs = random_tuple(ens, 2, np.random.default_rng(5))
        scaled = [3.7 * Z for Z in Zs]
        assert abs(tuple_ratio(ens, Zs) - tuple_ratio(ens, scaled)) < 1e-12

    def test_nested_trials_widen_monotonically(self):
        ens = generate_ensemble("gaussian", s=2, m=40, shape=(6, 6), seed=3)
        small = arip_sample(ens, r=2, trials=40, seed=9)
        big = arip_sample(ens, r=2, trials=80, seed=9)
        assert big.ratio_min <= small.ratio_min
        assert big.ratio_max >= small.ratio_max
        assert big.delta_hat >= small.delta_hat

    def test_single_operator_matches_direct_rip(self):
        ens = generate_ensemble("gaussian", s=1, m=60, shape=(8, 8), seed=4)
        est = arip_sample(ens, r=2, trials=50, seed=11)
        oracle = single_operator_rip_oracle(ens, r=2, trials=50, seed=11)
        assert est.ratio_min == pytest.approx(min(oracle), rel=1e-10)
        assert est.ratio_max == pytest.approx(max(oracle), rel=1e-10)

    def test_delta_hat_nonnegative(self):
        ens = generate_ensemble("gaussian", s=1, m=10, shape=(4, 4), seed=5)
        est = arip_sample(ens, r=1, trials=30, seed=0)
        assert est.delta_hat >= 0
        assert est.quantiles["q01"] <= est.quantiles["q50"] <= est.quantiles["q99"]

    def test_complex_ensembles_supported(self):
        ens = generate_ensemble("pauli", s=2, m=100, shape=(8, 8), seed=6)
        est = arip_sample(ens, r=1, trials=30, seed=0)
        assert est.delta_hat >= 0

    def test_rejects_zero_trials(self):
        ens = identity_ensemble(3, 3)
        with pytest.raises(ValueError):
            arip_sample(ens, r=1, trials=0)


class TestScalingReport:
    def test_single_point_reduces_to_sample(self):
        rows = arip_scaling_report("gaussian", [(50, 6, 2, 1)], trials=30, seed=21)
        assert len(rows) == 1
        ens = generate_ensemble("gaussian", s=1, m=50, shape=(6, 6), seed=21)
        est = arip_sample(ens, r=2, trials=30, seed=21)
        assert rows[0]["delta_hat"] == est.delta_hat
        assert rows[0]["q50"] == est.quantiles["q50"]

    def test_doubling_m_shrinks_deviation(self):
        # median deviation should shrink roughly like sqrt(2); assert factor 2
        n, r, s = 8, 1, 1
        grid = [(200, n, r, s), (400, n, r, s)]
        rows = arip_scaling_report("gaussian", grid, trials=120, seed=33)
        dev = [max(abs(row["q50"] - 1), abs(row["q99"] - 1)) for row in rows]
        assert dev[1] < dev[0]
        assert dev[1] > dev[0] / 2 / 2  # within a factor 2 of the sqrt(2) shrink

    def test_fixed_tuple_concentration_bound(self):
        # one fixed tuple, fresh Gaussian ensembles: the failure fraction at
        # deviation 1/2 stays below the 2 exp(-m/32) tail plus sampling slack
        n, r, s, m = 6, 1, 1, 64
        rng = np.random.default_rng(44)
        Z = rng.standard_normal((n, r)) @ rng.standard_normal((r, n))
        Zs = [Z / np.linalg.norm(Z)]
        bad = 0
        ensembles = 400
        for i in range(ensembles):
            ens = generate_ensemble("gaussian", s=s, m=m, shape=(n, n), seed=10_000 + i)
            if abs(tuple_ratio(ens, Zs) - 1.0) > 0.5:
                bad += 1
        bound = 2 * np.exp(-m / 32)
        assert bad / ensembles <= bound + 0.05
