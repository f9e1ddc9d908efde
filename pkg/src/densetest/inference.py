"""Estimators, theory-driven tuning constants, the level-alpha test, and the
confidence interval.

The pipeline cross-fits over the four folds: fold 1 screens the marginal
correlations, fold 2 fits the Lasso for the Z-on-W regression, fold 3
re-estimates the screened correlations, and fold 4 carries the direction
program, the projected l1 program, and the final moment-equation estimate.
All tuning constants are evaluated verbatim from their closed forms with
natural logarithms; they are deliberately conservative at realistic sample
sizes, and the test is correspondingly conservative rather than re-tuned.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .datagen import Dataset
from .errors import PipelineError
from .model import PrecisionRow, SpaceConfig
from .solvers import SolveReport, SolverSettings, direction_solver, lasso, projected_l1

DENOMINATOR_FLOOR = 1e-12


@dataclass(frozen=True)
class TuningConstants:
    """Closed-form tuning constants for a given (cfg, n, p)."""

    lambda_pi: float
    tau_n: float
    lambda_omega: float
    eta_omega: float
    eta_pi: float
    c_n: float
    b_n: int


@dataclass
class NuisanceEstimates:
    """Intermediate quantities of one pipeline run."""

    A: np.ndarray
    xi_tilde: np.ndarray
    xi_hat_A: np.ndarray
    pi_lasso: np.ndarray
    anchor: float
    pi_breve: np.ndarray
    v_hat: np.ndarray
    reports: dict[str, SolveReport] = field(default_factory=dict)


@dataclass(frozen=True)
class TestOutcome:
    """Point estimate, half width, decision, and confidence interval."""

    beta_hat: float
    c_n: float
    reject: bool
    ci_lower: float
    ci_upper: float

    def to_dict(self) -> dict:
        return {
            "beta_hat": self.beta_hat,
            "c_n": self.c_n,
            "reject": self.reject,
            "ci_lower": self.ci_lower,
            "ci_upper": self.ci_upper,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


def plug_in_estimator(omega_row, X: np.ndarray, y: np.ndarray) -> float:
    """Known-precision estimate omega_row . (X'y) / n; exactly linear in y."""
    row = omega_row.omega_row if isinstance(omega_row, PrecisionRow) else np.asarray(omega_row, dtype=float)
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n = X.shape[0]
    if y.shape != (n,) or row.shape != (X.shape[1],):
        raise ValueError(f"shape mismatch: X {X.shape}, y {y.shape}, row {row.shape}")
    return float(row @ (X.T @ y)) / n


def tuning_constants(cfg: SpaceConfig, n: int, p: int) -> TuningConstants:
    """Evaluate all six closed-form constants with b_n = floor(n/4)."""
    if n < 8:
        raise ValueError(f"need n >= 8, got {n}")
    if p < 2:
        raise ValueError(f"need p >= 2, got {p}")
    b = n // 4
    M, M1, M2, alpha, s = cfg.M, cfg.M1, cfg.M2, cfg.alpha, cfg.s
    logp = math.log(p)
    lam_pi = 24.0 * M * math.sqrt(logp / b)
    tau_n = 4.0 * M / b * math.sqrt(n * logp * (M1**2 + M2**2))
    lam_omega = 24.0 * math.sqrt(logp / b) * M**3 * M2
    eta_omega = 32.0 * M**5 * M2**2
    eta_pi = (
        6408.0 * math.sqrt(logp / b) * M**4 * M2 * s * lam_pi
        + 8.0 / math.sqrt(b) * M**2 * M2 * math.sqrt(M * math.log(100.0 / alpha))
    )
    c_n = 2.0 * M * (
        10.0 / math.sqrt(b) * math.sqrt(M * (4.0 * M2**2 * M**3 + M1**2) * math.log(100.0 / alpha))
        + 34.0 * M * (1.0 + M2) * lam_pi**2 * s
        + 1608.0 / b * M**2 * math.sqrt(n * logp * (M1**2 + M2**2)) * lam_pi * s
        + 2.0 * eta_pi
    )
    return TuningConstants(
        lambda_pi=lam_pi,
        tau_n=tau_n,
        lambda_omega=lam_omega,
        eta_omega=eta_omega,
        eta_pi=eta_pi,
        c_n=c_n,
        b_n=b,
    )


def select_screened(xi_tilde: np.ndarray, tau_n: float) -> np.ndarray:
    """Indices with |xi_tilde_j| strictly above tau_n; boundary values are excluded."""
    return np.flatnonzero(np.abs(xi_tilde) > tau_n)


def screen_correlations(data: Dataset, cfg: SpaceConfig) -> tuple[np.ndarray, np.ndarray]:
    """Screen marginal correlations on fold 1 and re-estimate on fold 3.

    Returns the selected index set A and the sparse vector that is zero off A
    and equals the fold-3 estimate b^-1 sum W_ij y_i on A.
    """
    tc = tuning_constants(cfg, data.n, data.p)
    b = data.split.b_n
    h1, h3 = data.split.h1, data.split.h3
    xi_tilde = data.w[h1].T @ data.y[h1] / b
    A = select_screened(xi_tilde, tc.tau_n)
    xi_hat_A = np.zeros(data.p - 1)
    if A.size:
        xi_hat_A[A] = data.w[np.ix_(h3, A)].T @ data.y[h3] / b
    return A, xi_hat_A


def scaled_config(cfg: SpaceConfig, d: float) -> SpaceConfig:
    """Config for response scale d: (M1, M2) scale with the data.

    kappa is a lower bound on the noise scale, so it scales too; it enters no
    tuning constant but must keep satisfying kappa <= zeta * M1.
    """
    if not d > 0:
        raise ValueError(f"scale factor must be positive, got {d}")
    return replace(cfg, M1=cfg.M1 * d, M2=cfg.M2 * d, kappa=cfg.kappa * d)


def fit_pipeline(
    data: Dataset,
    cfg: SpaceConfig,
    settings: SolverSettings | None = None,
    fallback_pi_hat: bool = False,
) -> tuple[NuisanceEstimates, float]:
    """Run the full cross-fitted pipeline and return the point estimate.

    Solver infeasibility raises :class:`PipelineError` carrying the report,
    unless ``fallback_pi_hat`` is set, in which case the documented fallback
    pi_breve := pi_hat is used instead.
    """
    tc = tuning_constants(cfg, data.n, data.p)
    b = data.split.b_n
    h2, h4 = data.split.h2, data.split.h4
    reports: dict[str, SolveReport] = {}

    A, xi_hat_A = screen_correlations(data, cfg)
    xi_tilde = data.w[data.split.h1].T @ data.y[data.split.h1] / b

    pi_hat, rep = lasso(data.w[h2], data.z[h2], tc.lambda_pi, settings)
    reports["lasso"] = rep

    W4 = data.w[h4]
    Z4 = data.z[h4]
    sigma_hat_w = W4.T @ W4 / b

    use_fallback = False
    if A.size:
        u, rep = direction_solver(sigma_hat_w, xi_hat_A, tc.lambda_omega, tc.eta_omega, settings)
        reports["direction"] = rep
        if not rep.converged:
            if not fallback_pi_hat:
                raise PipelineError("direction program did not converge or is infeasible", rep)
            use_fallback = True
    else:
        u = np.zeros(data.p - 1)

    anchor = float(xi_hat_A @ pi_hat) + float((W4 @ u) @ (Z4 - W4 @ pi_hat)) / b

    if use_fallback:
        pi_breve = pi_hat
    else:
        pi_breve, rep = projected_l1(
            W4, Z4, xi_hat_A, anchor, tc.eta_pi, tc.lambda_pi, cfg.M, settings
        )
        reports["projection"] = rep
        if not rep.converged:
            if not fallback_pi_hat:
                raise PipelineError("projected l1 program is infeasible", rep)
            pi_breve = pi_hat

    v_hat = Z4 - W4 @ pi_breve
    denom = float(v_hat @ v_hat)
    if denom < DENOMINATOR_FLOOR:
        raise PipelineError(f"degenerate fit: sum of squared residuals {denom:.3e}")
    beta_hat = float(v_hat @ data.y[h4]) / denom

    nuisance = NuisanceEstimates(
        A=A,
        xi_tilde=xi_tilde,
        xi_hat_A=xi_hat_A,
        pi_lasso=pi_hat,
        anchor=anchor,
        pi_breve=pi_breve,
        v_hat=v_hat,
        reports=reports,
    )
    return nuisance, beta_hat


def test_beta(
    data: Dataset,
    cfg: SpaceConfig,
    beta0: float,
    settings: SolverSettings | None = None,
    fallback_pi_hat: bool = False,
) -> TestOutcome:
    """Level-alpha test of beta == beta0 and the accompanying interval."""
    _, beta_hat = fit_pipeline(data, cfg, settings=settings, fallback_pi_hat=fallback_pi_hat)
    c_n = tuning_constants(cfg, data.n, data.p).c_n
    return TestOutcome(
        beta_hat=beta_hat,
        c_n=c_n,
        reject=bool(abs(beta_hat - beta0) > c_n),
        ci_lower=beta_hat - c_n,
        ci_upper=beta_hat + c_n,
    )
