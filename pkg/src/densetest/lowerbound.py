"""Numeric oracles for the lower-bound machinery: chi-square distances,
determinant closed forms, hypergeometric mixture sums, detection-rate
constants, likelihood ratios, KL divergence, and concentration/restricted-
eigenvalue diagnostics.

Determinants go through LU with partial pivoting; whenever the argument of a
square root is not positive a :class:`DomainError` is raised instead of
returning a complex or infinite value.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve, solve_triangular

from . import datagen
from .errors import DomainError, FactorizationError, InvalidRegimeError
from .model import ModelTheta, SpaceConfig


@dataclass(frozen=True)
class DetectionBounds:
    """Detection-rate constants and the separations they imply."""

    rho: float
    tau: float
    h_n_lower: float
    h_n_parametric: float
    h0: float
    rho_terms: tuple[float, ...] = ()


def _rho_terms(cfg: SpaceConfig) -> tuple[float, ...]:
    M, M1, M2, zeta, kappa, c = cfg.M, cfg.M1, cfg.M2, cfg.zeta, cfg.kappa, cfg.c_exp
    return (
        4.0,
        (0.5 - c) / (15.0 * (M / kappa**2 + 1.0)),
        2.0 * (1.0 / zeta - 1.0) ** 2 / (M**3 * (2.0 * M + 1.0)),
        2.0 * M * (1.0 - zeta) ** 2 / (2.0 * M + 1.0),
        (1.0 - zeta**2) * M2 / (8.0 * zeta * math.sqrt(M)),
        kappa**2 * (1.0 - zeta**2) ** 2 * M2**2 / (64.0 * zeta**4 * M * M1**2),
        M2 * math.sqrt(1.0 - zeta**2) / (2.0 * math.sqrt(M)),
        kappa**2 * (1.0 - zeta**2) * M2**2 / (4.0 * zeta**2 * M1**2 * M),
    )


def rho_constant(cfg: SpaceConfig) -> float:
    """The eight-term minimum defining the sparse-rate detection constant."""
    return min(_rho_terms(cfg))


def detection_bounds(cfg: SpaceConfig, n: int, p: int) -> DetectionBounds:
    """Evaluate rho, tau, and the detection separations for (cfg, n, p)."""
    if cfg.s * math.log(p) / n > 0.25:
        raise InvalidRegimeError(
            f"need s*log(p)/n <= 1/4, got {cfg.s * math.log(p) / n:.4g}"
        )
    if not 2 <= cfg.s <= p**cfg.c_exp:
        raise InvalidRegimeError(
            f"need 2 <= s <= p^c_exp, got s={cfg.s}, p^c_exp={p ** cfg.c_exp:.4g}"
        )
    terms = _rho_terms(cfg)
    rho = min(terms)
    tau = cfg.kappa * math.sqrt(math.log(1.0 + cfg.alpha**2) / cfg.M)
    return DetectionBounds(
        rho=rho,
        tau=tau,
        h_n_lower=rho * cfg.s * math.log(p) / n,
        h_n_parametric=tau / math.sqrt(n),
        h0=min(rho, tau),
        rho_terms=terms,
    )


def _as_lower(L) -> np.ndarray:
    arr = np.asarray(getattr(L, "L", L), dtype=float)
    if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
        raise ValueError(f"expected a square factor, got shape {arr.shape}")
    return arr


def chi2_pair(L0, L1, L2) -> float:
    """Cross second moment E_0[(dP1/dP0)(dP2/dP0)] for centered Gaussians.

    The three laws are given by lower-triangular covariance factors; the value
    is det(I - [Q1 Q1' - I][Q2 Q2' - I])^{-1/2} with Q_j = L0^{-1} L_j.
    """
    A0, A1, A2 = _as_lower(L0), _as_lower(L1), _as_lower(L2)
    k = A0.shape[0]
    if np.any(A0.diagonal() == 0.0):
        raise FactorizationError("reference factor is singular")
    q1 = solve_triangular(A0, A1, lower=True)
    q2 = solve_triangular(A0, A2, lower=True)
    eye = np.eye(k)
    mat = eye - (q1 @ q1.T - eye) @ (q2 @ q2.T - eye)
    det = float(np.linalg.det(mat))
    if det <= 0:
        raise DomainError(f"determinant {det:.3e} is not positive; pair is invalid")
    return 1.0 / math.sqrt(det)


def qj_gram_closed(delta1: np.ndarray, delta2: np.ndarray, h: float, r: float, m: int) -> float:
    """Closed-form determinant [1 - h/m (r^2(1-h)^2 + 1) delta1'delta2]^2."""
    if not 0 <= h < 1:
        raise ValueError(f"h must lie in [0, 1), got {h}")
    if m < 1:
        raise ValueError(f"m must be a positive integer, got {m}")
    d1 = np.asarray(delta1, dtype=float)
    d2 = np.asarray(delta2, dtype=float)
    if d1.shape != d2.shape:
        raise ValueError("delta vectors must have equal length")
    for d in (d1, d2):
        if int(round(float(d.sum()))) != m or not np.all((d == 0) | (d == 1)):
            raise ValueError("each delta must be a 0/1 vector with exactly m ones")
    inner = float(d1 @ d2)
    bracket = 1.0 - (h / m) * (r**2 * (1.0 - h) ** 2 + 1.0) * inner
    return bracket**2


def _weighted_power_sum(m: int, p: int, n: int, coef: float) -> float:
    """sum_k [1 - k coef]^{-n} C(m,k) C(p-m-1, m-k) / C(p-1, m)."""
    if 1.0 - m * coef <= 0:
        raise DomainError(f"bracket 1 - m*coef = {1.0 - m * coef:.3e} is not positive")
    total_weight = math.comb(p - 1, m)
    out = 0.0
    for k in range(m + 1):
        weight = math.comb(m, k) * math.comb(p - m - 1, m - k) / total_weight
        out += weight * math.exp(-n * math.log1p(-k * coef))
    return out


def hypergeo_sum(m: int, p: int, n: int, a: float) -> float:
    """The hypergeometric-weighted power sum with bracket coefficient a*log(p)/n."""
    if m < 0 or p < 2 or n < 1:
        raise ValueError("need m >= 0, p >= 2, n >= 1")
    coef = a * math.log(p) / n
    if m * coef >= 1:
        raise DomainError(f"need m*a*log(p)/n < 1, got {m * coef:.4g}")
    return _weighted_power_sum(m, p, n, coef)


def chi2_mixture(
    theta_star: ModelTheta, family: "datagen.PriorFamily", n: int
) -> tuple[float, float | None]:
    """Chi-square distance of the uniform family mixture from theta*.

    Returns the hypergeometric-grouped sum and, when the pair count N^2 is at
    most 1e6, the brute-force pairwise sum; the two agree up to roundoff.
    Emits a warning when the grouping is valid under the detection-constant
    bound on d but the stricter bracket condition (1/2 - c)/5 fails.
    """
    if not theta_star.allclose(family.theta_star, tol=1e-12):
        raise ValueError("theta_star does not match the family's center")
    m, p, h, r = family.m, family.p, family.h, family.r
    if m < 1:
        raise ValueError("family must have m >= 1")
    coef = (h / m) * (r**2 * (1.0 - h) ** 2 + 1.0)
    if 1.0 - m * coef <= 0:
        raise DomainError("mixture power diverges: 1 - m*coef <= 0")
    strict = (0.5 - family.cfg.c_exp) / 5.0
    if coef > strict * math.log(p) / n:
        warnings.warn(
            "bracket coefficient exceeds the strict (1/2-c)/5 condition; "
            "the grouped sum is still exact but the vanishing-distance bound may not apply",
            UserWarning,
            stacklevel=2,
        )
    grouped = _weighted_power_sum(m, p, n, coef) - 1.0

    N = family.size
    brute = None
    if N**2 <= 1_000_000:
        deltas = np.array(list(datagen.enumerate_deltas(p - 1, m)))
        overlap = deltas @ deltas.T
        brute = float(np.mean(np.exp(-n * np.log1p(-coef * overlap)))) - 1.0
    return grouped, brute


def likelihood_ratio(theta_alt: ModelTheta, theta_null: ModelTheta, data: "datagen.Dataset") -> float:
    """Closed-form dP_alt/dP_null at the data for parameters differing only in beta.

    With h = beta_alt - beta_null and sigma the shared noise level:
    exp((h / sigma^2) * sum_i Z_i [y_i - Z_i (beta_null + h/2) - W_i'gamma]).
    """
    if theta_alt.gamma.shape != theta_null.gamma.shape or not (
        np.allclose(theta_alt.gamma, theta_null.gamma, rtol=0, atol=1e-12)
        and np.allclose(theta_alt.sigma_cov, theta_null.sigma_cov, rtol=0, atol=1e-12)
        and abs(theta_alt.sigma_noise - theta_null.sigma_noise) <= 1e-12
    ):
        raise ValueError("parameters must share (gamma, Sigma, sigma)")
    sigma = theta_null.sigma_noise
    if sigma == 0:
        raise DomainError("likelihood ratio is undefined in closed form at sigma = 0")
    h = theta_alt.beta - theta_null.beta
    resid = data.y - data.z * (theta_null.beta + h / 2.0) - data.w @ theta_null.gamma
    return float(np.exp(h / sigma**2 * float(data.z @ resid)))


def gaussian_kl(mu0: np.ndarray, S0: np.ndarray, mu1: np.ndarray, S1: np.ndarray) -> float:
    """KL(N(mu0, S0) || N(mu1, S1)) by the exact closed form; never negative."""
    mu0 = np.atleast_1d(np.asarray(mu0, dtype=float))
    mu1 = np.atleast_1d(np.asarray(mu1, dtype=float))
    S0 = np.atleast_2d(np.asarray(S0, dtype=float))
    S1 = np.atleast_2d(np.asarray(S1, dtype=float))
    k = mu0.shape[0]
    if mu1.shape != (k,) or S0.shape != (k, k) or S1.shape != (k, k):
        raise ValueError("dimension mismatch across means and covariances")
    try:
        cf = cho_factor(S1, lower=True)
    except np.linalg.LinAlgError as exc:
        raise FactorizationError("S1 is not positive definite") from exc
    sign0, logdet0 = np.linalg.slogdet(S0)
    sign1, logdet1 = np.linalg.slogdet(S1)
    if sign0 <= 0 or sign1 <= 0:
        raise FactorizationError("covariances must be positive definite")
    trace_term = float(np.trace(cho_solve(cf, S0))) - k
    dm = mu1 - mu0
    quad = float(dm @ cho_solve(cf, dm))
    return max(0.5 * (trace_term + logdet1 - logdet0 + quad), 0.0)


def bernstein_tail_check(
    n: int,
    rho_corr: float,
    t_grid,
    reps: int,
    seed: int,
    chunk: int = 4096,
) -> list[dict]:
    """Empirical tail of a centered product-of-Gaussians sum vs. its bound.

    Simulates sum_i (r_{i,1} r_{i,2} - E r_{i,1} r_{i,2}) for standard normal
    pairs with correlation ``rho_corr`` and compares the exceedance frequency
    at each t against 2 exp(-t^2 / (2(2n + 7t))).
    """
    if abs(rho_corr) > 1:
        raise ValueError(f"|rho_corr| must be at most 1, got {rho_corr}")
    if reps < 1:
        raise ValueError("reps must be positive")
    t_grid = np.asarray(t_grid, dtype=float)
    rng = np.random.Generator(np.random.Philox(key=seed % (2**128)))
    exceed = np.zeros(t_grid.shape[0], dtype=np.int64)
    done = 0
    comp = math.sqrt(max(1.0 - rho_corr**2, 0.0))
    while done < reps:
        size = min(chunk, reps - done)
        a = rng.standard_normal((size, n))
        b = rho_corr * a + comp * rng.standard_normal((size, n))
        s = (a * b).sum(axis=1) - n * rho_corr
        exceed += (np.abs(s)[:, None] >= t_grid[None, :]).sum(axis=0)
        done += size
    rows = []
    for t, cnt in zip(t_grid, exceed):
        emp = cnt / reps
        bound = 2.0 * math.exp(-t**2 / (2.0 * (2.0 * n + 7.0 * t)))
        se = math.sqrt(emp * (1.0 - emp) / reps)
        rows.append(
            {
                "t": float(t),
                "empirical": float(emp),
                "bound": float(bound),
                "mc_se": float(se),
                "within_bound": bool(emp <= bound + 3.0 * se),
            }
        )
    return rows


def _project_l1_ball(x: np.ndarray, radius: float) -> np.ndarray:
    """Euclidean projection onto the l1 ball of the given radius."""
    if radius <= 0:
        return np.zeros_like(x)
    a = np.abs(x)
    if a.sum() <= radius:
        return x.copy()
    u = np.sort(a)[::-1]
    css = np.cumsum(u)
    idx = np.arange(1, a.shape[0] + 1)
    cond = u - (css - radius) / idx > 0
    k = idx[cond][-1]
    tau = (css[k - 1] - radius) / k
    return np.sign(x) * np.maximum(a - tau, 0.0)


def re_constant_estimate(W: np.ndarray, s: int, trials: int, seed: int) -> float:
    """Sampling upper estimate of the restricted eigenvalue constant.

    Minimizes b^-1 ||W q||^2 / ||q_J||^2 over sampled supports J (size at
    most s) and cone directions with ||q_{J^c}||_1 <= 3 ||q_J||_1, refining
    each sample by projected gradient descent on the off-support block.
    Every evaluation is at a feasible point, so the result upper-bounds the
    exact constant; it is an estimate, not the minimum.
    """
    W = np.asarray(W, dtype=float)
    if W.ndim != 2:
        raise ValueError("W must be a matrix")
    if trials < 1:
        raise ValueError("trials must be positive")
    b, q = W.shape
    s = min(max(int(s), 1), q)
    rng = np.random.Generator(np.random.Philox(key=seed % (2**128)))
    best = math.inf

    def ratio(J, qj, qc):
        r = W[:, J] @ qj + (W @ qc if qc is not None else 0.0)
        return float(r @ r) / b / float(qj @ qj)

    for _ in range(trials):
        J = np.sort(rng.choice(q, size=s, replace=False))
        gram_J = W[:, J].T @ W[:, J] / b
        eigval, eigvec = np.linalg.eigh(gram_J)
        best = min(best, float(eigval[0]))  # cone point with zero off-support mass

        qj = eigvec[:, 0]
        budget = 3.0 * float(np.abs(qj).sum())
        mask = np.ones(q, dtype=bool)
        mask[J] = False
        for _ in range(2):
            qc = np.zeros(q)
            qc[mask] = rng.standard_normal(q - s)
            qc = _project_l1_ball(qc, budget * rng.uniform())
            qc[J] = 0.0
            # projected gradient on the off-support block, support part fixed
            r0 = W[:, J] @ qj
            lip = 2.0 * max(float(np.abs(W).max()) ** 2 * (q - s) / b, 1e-12)
            step = 1.0 / lip
            for _ in range(60):
                grad = 2.0 * (W.T @ (r0 + W @ qc)) / b
                grad[J] = 0.0
                qc = _project_l1_ball(qc - step * grad, budget)
                qc[J] = 0.0
            best = min(best, ratio(J, qj, qc))
    return best
