"""Lower-bound oracles: chi-square identities, detection constants, likelihood
ratios, KL divergence, tail bounds, and the restricted-eigenvalue estimate.

Expected values are frozen from the independent oracles computed here
(numerical quadrature, dense determinants, density quotients, Monte Carlo).
"""

import math

import numpy as np
import pytest
from scipy.integrate import quad
from scipy.linalg import solve_triangular
from scipy.stats import multivariate_normal

from densetest import (
    DomainError,
    FactorizationError,
    InvalidRegimeError,
    ModelTheta,
    PriorFamily,
    SigmaFactor,
    SpaceConfig,
    bernstein_tail_check,
    build_prior_member,
    build_sigma,
    chi2_mixture,
    chi2_pair,
    detection_bounds,
    enumerate_deltas,
    gaussian_kl,
    hypergeo_sum,
    l_factor,
    likelihood_ratio,
    prior_family,
    qj_gram_closed,
    re_constant_estimate,
    rho_constant,
    sample_dataset,
)
from _helpers import random_star_theta


def dense_gram_determinant(theta_star, h, delta1, delta2):
    """Dense-linear-algebra oracle for the closed-form determinant."""
    L0 = l_factor(theta_star).L
    L1 = l_factor(build_prior_member(theta_star, h, delta1)).L
    L2 = l_factor(build_prior_member(theta_star, h, delta2)).L
    q1 = solve_triangular(L0, L1, lower=True)
    q2 = solve_triangular(L0, L2, lower=True)
    eye = np.eye(L0.shape[0])
    return float(np.linalg.det(eye - (q1 @ q1.T - eye) @ (q2 @ q2.T - eye)))


class TestDetectionBounds:
    def test_tau_independent_arithmetic(self):
        cfg = SpaceConfig(M=4, M1=2, M2=2, kappa=1.0, zeta=0.9)
        db = detection_bounds(cfg, 2000, 34)
        expected = math.sqrt(0.25 * math.log(1.0 + 0.05**2))
        assert db.tau == pytest.approx(expected, rel=1e-12)
        assert db.tau == pytest.approx(0.024984, abs=2e-6)

    def test_rho_capped_at_four(self):
        assert rho_constant(SpaceConfig()) <= 4.0

    def test_rho_term_by_term(self):
        cfg = SpaceConfig(M=4, M1=2, M2=2, zeta=0.9, kappa=0.5, c_exp=0.4)
        M, M1, M2, z, k, c = 4.0, 2.0, 2.0, 0.9, 0.5, 0.4
        terms = [
            4.0,
            (0.5 - c) / (15.0 * (M / k**2 + 1.0)),
            2.0 * (1.0 / z - 1.0) ** 2 / (M**3 * (2 * M + 1)),
            2.0 * M * (1.0 - z) ** 2 / (2 * M + 1),
            (1 - z**2) * M2 / (8 * z * math.sqrt(M)),
            k**2 * (1 - z**2) ** 2 * M2**2 / (64 * z**4 * M * M1**2),
            M2 * math.sqrt(1 - z**2) / (2 * math.sqrt(M)),
            k**2 * (1 - z**2) * M2**2 / (4 * z**2 * M1**2 * M),
        ]
        db = detection_bounds(cfg, 2000, 34)
        assert db.rho == pytest.approx(min(terms), rel=1e-12)
        np.testing.assert_allclose(db.rho_terms, terms, rtol=1e-12)

    def test_separations(self):
        cfg = SpaceConfig()
        db = detection_bounds(cfg, 2000, 34)
        assert db.h_n_lower == pytest.approx(db.rho * cfg.s * math.log(34) / 2000)
        assert db.h_n_parametric == pytest.approx(db.tau / math.sqrt(2000))
        assert db.h0 == min(db.rho, db.tau)

    def test_regime_errors(self):
        with pytest.raises(InvalidRegimeError):
            detection_bounds(SpaceConfig(), 10, 1000)  # s log p / n too large
        with pytest.raises(InvalidRegimeError):
            detection_bounds(SpaceConfig(s=8), 10_000, 20)  # s above p^c_exp


class TestChi2Pair:
    def test_equal_factors_give_one(self):
        L = np.linalg.cholesky(build_sigma(SigmaFactor(pi=np.array([0.3]), sigma_v=1.0)))
        assert chi2_pair(L, L, L) == pytest.approx(1.0, abs=1e-12)

    def test_one_dimensional_quadrature_oracle(self):
        def cross_moment(v1, v2):
            def integrand(x):
                g0 = math.exp(-0.5 * x * x) / math.sqrt(2 * math.pi)
                g1 = math.exp(-0.5 * x * x / v1) / math.sqrt(2 * math.pi * v1)
                g2 = math.exp(-0.5 * x * x / v2) / math.sqrt(2 * math.pi * v2)
                return g1 * g2 / g0

            val, _ = quad(integrand, -30, 30, epsabs=1e-13, epsrel=1e-13)
            return val

        pair = chi2_pair([[1.0]], [[math.sqrt(1.1)]], [[math.sqrt(1.2)]])
        assert pair == pytest.approx(1.0 / math.sqrt(1 - 0.1 * 0.2), rel=1e-12)
        assert pair == pytest.approx(cross_moment(1.1, 1.2), rel=1e-9)
        assert pair == pytest.approx(1.010153, abs=1e-6)

        equal = chi2_pair([[1.0]], [[math.sqrt(1.1)]], [[math.sqrt(1.1)]])
        assert equal == pytest.approx(cross_moment(1.1, 1.1), rel=1e-9)
        assert equal == pytest.approx(1.005038, abs=1e-6)

    def test_second_moment_at_least_one(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            theta = random_star_theta(rng, 5, m=2, cfg=SpaceConfig(s=4))
            member = build_prior_member(theta, float(rng.uniform(0, 0.3)), np.array([1.0, 0, 1, 0]))
            L0, L1 = l_factor(theta), l_factor(member)
            assert chi2_pair(L0, L1, L1) >= 1.0 - 1e-12

    def test_iid_product_power_identity(self):
        rng = np.random.default_rng(1)
        theta = random_star_theta(rng, 4, m=1, cfg=SpaceConfig())
        member1 = build_prior_member(theta, 0.05, np.array([1.0, 0, 0]))
        member2 = build_prior_member(theta, 0.05, np.array([0.0, 1, 0]))
        L0, L1, L2 = (l_factor(t).L for t in (theta, member1, member2))
        single = chi2_pair(L0, L1, L2)
        for n in (2, 3, 5):
            stacked = chi2_pair(
                np.kron(np.eye(n), L0), np.kron(np.eye(n), L1), np.kron(np.eye(n), L2)
            )
            assert stacked == pytest.approx(single**n, rel=1e-9)

    def test_singular_reference_rejected(self):
        with pytest.raises(FactorizationError):
            chi2_pair(np.zeros((2, 2)), np.eye(2), np.eye(2))

    def test_invalid_pair_domain_error(self):
        # second moments diverge when the perturbations are too large
        with pytest.raises(DomainError):
            chi2_pair([[1.0]], [[2.0]], [[2.0]])  # det = 1 - 9 < 0


class TestQjGramClosed:
    def test_disjoint_supports(self):
        assert qj_gram_closed(np.array([1.0, 0]), np.array([0.0, 1]), 0.3, 1.5, 1) == 1.0

    def test_no_perturbation(self):
        assert qj_gram_closed(np.array([1.0, 0]), np.array([1.0, 0]), 0.0, 1.5, 1) == 1.0

    def test_matches_dense_determinant(self):
        rng = np.random.default_rng(2)
        for _ in range(40):
            dim = int(rng.integers(2, 9))
            m = int(rng.integers(1, min(dim, 3) + 1))
            h = float(rng.uniform(0, 0.4))
            sigma_eps = float(rng.uniform(0.6, 1.4))
            r = float(rng.uniform(0.2, 1.2))
            theta = ModelTheta(
                beta=float(rng.uniform(-0.5, 0.5)),
                gamma=0.4 * rng.standard_normal(dim),
                sigma_cov=build_sigma(
                    SigmaFactor(pi=0.3 * rng.standard_normal(dim), sigma_v=r * sigma_eps)
                ),
                sigma_noise=sigma_eps,
            )
            deltas = list(enumerate_deltas(dim, m))
            d1 = deltas[int(rng.integers(len(deltas)))]
            d2 = deltas[int(rng.integers(len(deltas)))]
            dense = dense_gram_determinant(theta, h, d1, d2)
            assert qj_gram_closed(d1, d2, h, r, m) == pytest.approx(dense, abs=1e-10)

    def test_input_validation(self):
        with pytest.raises(ValueError):
            qj_gram_closed(np.array([1.0, 1]), np.array([1.0, 0]), 0.1, 1.0, 1)
        with pytest.raises(ValueError):
            qj_gram_closed(np.array([1.0, 0]), np.array([1.0, 0]), 1.0, 1.0, 1)


def synthetic_family(p, m, h, r, cfg=None, n=500):
    """A family container with prescribed (h, r) for identity checks."""
    theta = ModelTheta(
        beta=0.1,
        gamma=np.full(p - 1, 0.1),
        sigma_cov=build_sigma(SigmaFactor(pi=np.zeros(p - 1), sigma_v=r)),
        sigma_noise=1.0,
    )
    return theta, PriorFamily(
        theta_star=theta, cfg=cfg or SpaceConfig(), n=n, p=p, d=math.nan, m=m, h=h, r=r
    )


@pytest.mark.filterwarnings("ignore:bracket coefficient exceeds")
class TestChi2Mixture:
    def test_zero_distance_gives_zero(self):
        theta, family = synthetic_family(7, 1, h=0.0, r=1.0)
        grouped, brute = chi2_mixture(theta, family, 500)
        assert grouped == pytest.approx(0.0, abs=1e-12)
        assert brute == pytest.approx(0.0, abs=1e-12)

    @pytest.mark.parametrize("p,m", [(7, 1), (9, 1), (11, 2)])
    def test_grouped_equals_brute(self, p, m):
        theta, family = synthetic_family(p, m, h=0.004, r=1.2)
        grouped, brute = chi2_mixture(theta, family, 800)
        assert brute is not None
        assert grouped == pytest.approx(brute, abs=1e-10)

    def test_positive_and_decreasing_in_p(self):
        values = []
        for p in (11, 21, 41):
            theta, family = synthetic_family(p, 2, h=0.003, r=1.0)
            grouped, _ = chi2_mixture(theta, family, 600)
            values.append(grouped)
        assert all(v > 0 for v in values)
        assert values == sorted(values, reverse=True)

    def test_diverging_bracket_rejected(self):
        theta, family = synthetic_family(7, 1, h=0.7, r=3.0)
        with pytest.raises(DomainError):
            chi2_mixture(theta, family, 100)

    def test_strict_bracket_warning(self):
        theta, family = synthetic_family(7, 1, h=0.05, r=1.0)
        with pytest.warns(UserWarning):
            chi2_mixture(theta, family, 500)

    def test_valid_family_from_constructor(self):
        rng = np.random.default_rng(3)
        cfg = SpaceConfig(s=4)
        theta = random_star_theta(rng, 9, m=2, cfg=cfg)
        family = prior_family(theta, cfg, n=2000, p=9, d=rho_constant(cfg) / 2)
        grouped, brute = chi2_mixture(theta, family, 2000)
        assert grouped == pytest.approx(brute, abs=1e-10)
        assert grouped >= 0

    def test_brute_skipped_for_large_families(self):
        theta, family = synthetic_family(60, 2, h=0.001, r=1.0)
        grouped, brute = chi2_mixture(theta, family, 500)  # C(59,2)^2 > 1e6
        assert brute is None and grouped > 0


class TestHypergeoSum:
    def test_zero_coefficient_sums_to_one(self):
        assert hypergeo_sum(3, 50, 100, 0.0) == pytest.approx(1.0, rel=1e-12)

    def test_two_term_hand_expansion(self):
        m, p, n, a = 1, 3, 100, 0.1
        coef = a * math.log(p) / n
        expected = 0.5 + 0.5 * (1 - coef) ** (-n)  # C(1,1)/C(2,1) weights
        assert hypergeo_sum(m, p, n, a) == pytest.approx(expected, rel=1e-12)

    def test_approaches_one_along_p_grid(self):
        # the excess over 1 decays polynomially in p; check the monotone approach
        gaps = []
        for p in (100, 1000, 10_000):
            gaps.append(abs(hypergeo_sum(2, p, 10_000, 0.5) - 1.0))
        assert gaps[0] > gaps[1] > gaps[2]
        assert gaps[2] < 0.05

    def test_bracket_domain_error(self):
        with pytest.raises(DomainError):
            hypergeo_sum(2, 100, 10, 2.0)  # m a log(p)/n > 1


class TestLikelihoodRatio:
    @staticmethod
    def _pair(rng, p=3, h=0.2):
        base = dict(
            gamma=0.4 * rng.standard_normal(p - 1),
            sigma_cov=build_sigma(SigmaFactor(pi=0.3 * rng.standard_normal(p - 1), sigma_v=1.0)),
            sigma_noise=float(rng.uniform(0.5, 1.5)),
        )
        beta0 = float(rng.uniform(-0.5, 0.5))
        return ModelTheta(beta=beta0 + h, **base), ModelTheta(beta=beta0, **base)

    def test_equal_betas_give_unity(self):
        rng = np.random.default_rng(4)
        alt, null = self._pair(rng, h=0.0)
        data = sample_dataset(null, 10, seed=0)
        assert likelihood_ratio(alt, null, data) == 1.0

    def test_density_quotient_oracle(self):
        rng = np.random.default_rng(5)
        for _ in range(30):
            alt, null = self._pair(rng, h=float(rng.uniform(-0.3, 0.3)))
            data = sample_dataset(null, 5, seed=int(rng.integers(2**32)))
            lr = likelihood_ratio(alt, null, data)
            pts = np.column_stack([data.w, data.z, data.y])
            log_quotient = float(
                multivariate_normal(cov=l_factor(alt).cov).logpdf(pts).sum()
                - multivariate_normal(cov=l_factor(null).cov).logpdf(pts).sum()
            )
            assert math.log(lr) == pytest.approx(log_quotient, abs=1e-8 * max(1, abs(log_quotient)))

    def test_martingale_mean_one(self):
        rng = np.random.default_rng(6)
        alt, null = self._pair(rng, h=0.1)
        draws = 20_000
        values = np.empty(draws)
        for i in range(draws):
            values[i] = likelihood_ratio(alt, null, sample_dataset(null, 5, seed=i))
        se = values.std(ddof=1) / math.sqrt(draws)
        assert abs(values.mean() - 1.0) <= 3.0 * se

    def test_zero_noise_rejected(self):
        base = dict(gamma=np.zeros(2), sigma_cov=np.eye(3), sigma_noise=0.0)
        alt, null = ModelTheta(beta=0.1, **base), ModelTheta(beta=0.0, **base)
        data = sample_dataset(ModelTheta(beta=0.0, gamma=np.zeros(2), sigma_cov=np.eye(3),
                                         sigma_noise=1.0), 10, seed=0)
        with pytest.raises(DomainError):
            likelihood_ratio(alt, null, data)

    def test_mismatched_nuisance_rejected(self):
        a = ModelTheta(beta=0.1, gamma=np.zeros(2), sigma_cov=np.eye(3), sigma_noise=1.0)
        b = ModelTheta(beta=0.0, gamma=np.ones(2), sigma_cov=np.eye(3), sigma_noise=1.0)
        data = sample_dataset(a, 10, seed=0)
        with pytest.raises(ValueError):
            likelihood_ratio(a, b, data)


class TestGaussianKl:
    def test_identical_inputs(self):
        assert gaussian_kl(np.zeros(3), np.eye(3), np.zeros(3), np.eye(3)) == 0.0

    def test_unit_shift_analytic(self):
        assert gaussian_kl([0.0], [[1.0]], [1.0], [[1.0]]) == pytest.approx(0.5, abs=1e-14)

    def test_nonnegative_random(self):
        rng = np.random.default_rng(7)
        for _ in range(30):
            a = rng.standard_normal((3, 3))
            b = rng.standard_normal((3, 3))
            kl = gaussian_kl(
                rng.standard_normal(3), a @ a.T + 0.3 * np.eye(3),
                rng.standard_normal(3), b @ b.T + 0.3 * np.eye(3),
            )
            assert kl >= 0.0

    def test_monte_carlo_oracle(self):
        rng = np.random.default_rng(8)
        a = rng.standard_normal((3, 3))
        s0 = a @ a.T + 0.5 * np.eye(3)
        b = rng.standard_normal((3, 3))
        s1 = b @ b.T + 0.5 * np.eye(3)
        mu0 = rng.standard_normal(3)
        mu1 = rng.standard_normal(3)
        draws = 1_000_000
        x = rng.multivariate_normal(mu0, s0, size=draws)
        logs = multivariate_normal(mu0, s0).logpdf(x) - multivariate_normal(mu1, s1).logpdf(x)
        se = logs.std(ddof=1) / math.sqrt(draws)
        assert gaussian_kl(mu0, s0, mu1, s1) == pytest.approx(logs.mean(), abs=3 * se)

    def test_singular_rejected(self):
        with pytest.raises(FactorizationError):
            gaussian_kl(np.zeros(2), np.eye(2), np.zeros(2), np.zeros((2, 2)))


class TestBernsteinTail:
    def test_trivial_bound_at_zero(self):
        rows = bernstein_tail_check(50, 0.0, [0.0], reps=500, seed=0)
        assert rows[0]["bound"] == 2.0 and rows[0]["within_bound"]

    def test_independent_pairs_within_bound(self):
        rows = bernstein_tail_check(100, 0.0, [25.0, 50.0, 100.0], reps=5000, seed=1)
        assert all(r["within_bound"] for r in rows)

    def test_chi_squared_case_within_bound(self):
        rows = bernstein_tail_check(100, 1.0, [25.0, 50.0, 100.0, 200.0], reps=5000, seed=2)
        assert all(r["within_bound"] for r in rows)

    def test_invalid_correlation(self):
        with pytest.raises(ValueError):
            bernstein_tail_check(10, 1.5, [1.0], reps=10, seed=0)


class TestReConstant:
    def test_isotropic_design_near_one(self):
        rng = np.random.default_rng(9)
        b, d = 64, 12
        q, _ = np.linalg.qr(rng.standard_normal((b, d)))
        W = q * math.sqrt(b)  # W'W / b = I exactly
        est = re_constant_estimate(W, s=3, trials=30, seed=0)
        assert est == pytest.approx(1.0, abs=0.05)

    def test_gaussian_design_above_theory_bound(self):
        bound = 0.24 * (1 - 0.75) ** 2 / 4.0  # tau = 3/4, M = 4
        hits = 0
        for seed in range(20):
            rng = np.random.Generator(np.random.Philox(key=seed))
            W = rng.standard_normal((400, 50))
            est = re_constant_estimate(W, s=3, trials=25, seed=seed)
            hits += est >= bound
        assert hits >= 19

    def test_rank_deficient_design_near_zero(self):
        rng = np.random.default_rng(10)
        W = rng.standard_normal((3, 10))  # fewer rows than the support size
        est = re_constant_estimate(W, s=5, trials=10, seed=0)
        assert est <= 1e-8

    def test_upper_bound_property(self):
        # every reported value is an objective evaluation at a feasible point,
        # so shrinking the search can only increase the estimate
        rng = np.random.default_rng(11)
        W = rng.standard_normal((50, 8))
        wide = re_constant_estimate(W, s=2, trials=40, seed=3)
        narrow = re_constant_estimate(W, s=2, trials=2, seed=3)
        assert wide <= narrow + 1e-12


@pytest.mark.filterwarnings("ignore:bracket coefficient exceeds")
def test_mixture_distance_matches_direct_simulation():
    """End-to-end oracle: the closed-form mixture distance equals a direct
    Monte Carlo estimate of E[(N^-1 sum_j dP_j/dP* - 1)^2] computed from raw
    Gaussian density quotients over sampled datasets (3 MC standard errors;
    deterministic seeds)."""
    p, m, h, r = 5, 2, 0.02, 1.0
    theta, family = synthetic_family(p, m, h=h, r=r)
    n = 30
    grouped, _ = chi2_mixture(theta, family, n)

    members = [t for _, t in family.members()]
    dists = [multivariate_normal(cov=l_factor(t).cov) for t in [theta] + members]
    N = len(members)
    draws = 2500
    vals = np.empty(draws)
    for i in range(draws):
        data = sample_dataset(theta, n, seed=i)
        pts = np.column_stack([data.w, data.z, data.y])
        log0 = dists[0].logpdf(pts).sum()
        mean_lr = sum(math.exp(d.logpdf(pts).sum() - log0) for d in dists[1:]) / N
        vals[i] = (mean_lr - 1.0) ** 2
    se = vals.std(ddof=1) / math.sqrt(draws)
    assert abs(vals.mean() - grouped) <= 3.0 * se
