"""Parameter-space data model, covariance/precision algebra, and membership predicates.

The data-generating distribution is indexed by theta = (beta, gamma, Sigma,
sigma).  Covariance matrices with an identity lower-right block admit the
factorization Sigma = [[pi'pi + sigma_v^2, pi'], [pi, I]], and the first row
of the precision matrix is then (1, -pi') / sigma_v^2.  Membership predicates
implement the eigenvalue-band / noise-cap / l2-cap parameter spaces, their
sparsity-constrained variants, and the tightened variant used by the
lower-bound constructions.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict

import numpy as np

from .errors import InvalidStructureError, NotPositiveDefiniteError

# Tolerances fixed by design: boundary comparisons in membership checks and
# the absolute threshold for counting a precision-row entry as nonzero.
BOUNDARY_TOL = 1e-10
BLOCK_TOL = 1e-10
SUPPORT_TOL = 1e-10
SYMMETRY_TOL = 1e-12


def _readonly(a: np.ndarray) -> np.ndarray:
    out = np.array(a, dtype=float)
    out.flags.writeable = False
    return out


@dataclass(frozen=True)
class SpaceConfig:
    """Constants defining the parameter spaces and all tuning formulas.

    The numeric defaults are configuration choices, not quantities fixed by
    theory.
    """

    M: float = 4.0
    M1: float = 2.0
    M2: float = 2.0
    alpha: float = 0.05
    s: int = 2
    zeta: float = 0.9
    kappa: float = 0.5
    c_exp: float = 0.4

    def __post_init__(self):
        if not self.M > 1:
            raise ValueError(f"M must exceed 1, got {self.M}")
        if self.M1 < 0:
            raise ValueError(f"M1 must be nonnegative, got {self.M1}")
        if not self.M2 > 0:
            raise ValueError(f"M2 must be positive, got {self.M2}")
        if not 0 < self.alpha < 1:
            raise ValueError(f"alpha must lie in (0, 1), got {self.alpha}")
        if int(self.s) != self.s or self.s < 1:
            raise ValueError(f"s must be a positive integer, got {self.s}")
        if not 1.0 / self.M < self.zeta < 1:
            raise ValueError(f"zeta must lie in (1/M, 1), got {self.zeta}")
        if not 0 < self.kappa <= self.zeta * self.M1:
            raise ValueError(f"kappa must lie in (0, zeta*M1], got {self.kappa}")
        if not 0 < self.c_exp < 0.5:
            raise ValueError(f"c_exp must lie in (0, 1/2), got {self.c_exp}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SpaceConfig":
        return cls(**d)

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "SpaceConfig":
        return cls.from_dict(json.loads(text))


@dataclass
class ModelTheta:
    """The parameter theta = (beta, gamma, Sigma, sigma) indexing a distribution.

    Arrays are stored read-only; treat instances as immutable.
    """

    beta: float
    gamma: np.ndarray
    sigma_cov: np.ndarray
    sigma_noise: float

    def __post_init__(self):
        self.beta = float(self.beta)
        self.sigma_noise = float(self.sigma_noise)
        self.gamma = _readonly(np.atleast_1d(self.gamma))
        self.sigma_cov = _readonly(self.sigma_cov)
        if self.sigma_noise < 0:
            raise ValueError(f"sigma_noise must be nonnegative, got {self.sigma_noise}")
        S = self.sigma_cov
        if S.ndim != 2 or S.shape[0] != S.shape[1]:
            raise InvalidStructureError(f"sigma_cov must be square, got shape {S.shape}")
        if S.shape[0] != self.gamma.shape[0] + 1:
            raise InvalidStructureError(
                f"dimension mismatch: gamma has length {self.gamma.shape[0]}, "
                f"sigma_cov is {S.shape[0]}x{S.shape[0]}"
            )
        if not np.allclose(S, S.T, rtol=0, atol=SYMMETRY_TOL):
            raise InvalidStructureError("sigma_cov is not symmetric within 1e-12")

    @property
    def p(self) -> int:
        return self.sigma_cov.shape[0]

    @property
    def beta_full(self) -> np.ndarray:
        """The stacked coefficient vector (beta, gamma)."""
        return np.concatenate(([self.beta], self.gamma))

    def allclose(self, other: "ModelTheta", tol: float = 1e-12) -> bool:
        return (
            abs(self.beta - other.beta) <= tol
            and self.gamma.shape == other.gamma.shape
            and np.allclose(self.gamma, other.gamma, rtol=0, atol=tol)
            and np.allclose(self.sigma_cov, other.sigma_cov, rtol=0, atol=tol)
            and abs(self.sigma_noise - other.sigma_noise) <= tol
        )

    def to_dict(self) -> dict:
        return {
            "beta": self.beta,
            "gamma": self.gamma.tolist(),
            "sigma_cov": self.sigma_cov.tolist(),
            "sigma_noise": self.sigma_noise,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelTheta":
        return cls(
            beta=d["beta"],
            gamma=np.asarray(d["gamma"], dtype=float),
            sigma_cov=np.asarray(d["sigma_cov"], dtype=float),
            sigma_noise=d["sigma_noise"],
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "ModelTheta":
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True)
class SigmaFactor:
    """Factorized covariance: regression of Z on W plus a residual scale."""

    pi: np.ndarray
    sigma_v: float

    def __post_init__(self):
        object.__setattr__(self, "pi", _readonly(np.atleast_1d(self.pi)))
        object.__setattr__(self, "sigma_v", float(self.sigma_v))
        if not self.sigma_v > 0:
            raise ValueError(f"sigma_v must be positive, got {self.sigma_v}")

    @property
    def p(self) -> int:
        return self.pi.shape[0] + 1


@dataclass(frozen=True)
class PrecisionRow:
    """First row of the precision matrix Omega = Sigma^{-1}."""

    omega_row: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "omega_row", _readonly(np.atleast_1d(self.omega_row)))

    def support_size(self, tol: float = SUPPORT_TOL) -> int:
        return int(np.count_nonzero(np.abs(self.omega_row) > tol))


@dataclass(frozen=True)
class SplitPlan:
    """Four disjoint folds of size b_n = floor(n/4); tail samples are unused.

    Indices are 0-based.
    """

    b_n: int
    h1: np.ndarray
    h2: np.ndarray
    h3: np.ndarray
    h4: np.ndarray

    def __post_init__(self):
        for name in ("h1", "h2", "h3", "h4"):
            arr = np.asarray(getattr(self, name), dtype=np.intp)
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)
            if arr.shape[0] != self.b_n:
                raise ValueError(f"fold {name} must have size b_n={self.b_n}")

    @property
    def folds(self) -> tuple[np.ndarray, ...]:
        return (self.h1, self.h2, self.h3, self.h4)


@dataclass(frozen=True)
class MembershipResult:
    """Boolean membership verdict plus the reason codes of failed constraints."""

    ok: bool
    reasons: tuple[str, ...] = field(default=())

    def __bool__(self) -> bool:
        return self.ok


def build_sigma(factor: SigmaFactor) -> np.ndarray:
    """Assemble the block covariance [[pi'pi + sigma_v^2, pi'], [pi, I]]."""
    pi = factor.pi
    p = factor.p
    out = np.eye(p)
    out[0, 0] = float(pi @ pi) + factor.sigma_v**2
    out[0, 1:] = pi
    out[1:, 0] = pi
    return out


def decompose_sigma(sigma: np.ndarray) -> SigmaFactor:
    """Invert ``build_sigma``: recover (pi, sigma_v) from a block covariance.

    Requires the lower-right block to equal the identity within 1e-10.  The
    residual variance sigma_v^2 = Sigma_11 - pi'pi must be positive, which for
    this block structure is equivalent to positive definiteness.
    """
    sigma = np.asarray(sigma, dtype=float)
    if sigma.ndim != 2 or sigma.shape[0] != sigma.shape[1]:
        raise InvalidStructureError(f"expected a square matrix, got shape {sigma.shape}")
    if sigma.shape[0] < 2:
        raise InvalidStructureError("covariance must be at least 2x2")
    if not np.allclose(sigma, sigma.T, rtol=0, atol=SYMMETRY_TOL):
        raise InvalidStructureError("covariance is not symmetric within 1e-12")
    block = sigma[1:, 1:]
    if not np.allclose(block, np.eye(block.shape[0]), rtol=0, atol=BLOCK_TOL):
        raise InvalidStructureError("lower-right block is not the identity within 1e-10")
    pi = sigma[0, 1:]
    s2 = sigma[0, 0] - float(pi @ pi)
    if s2 <= 0:
        raise NotPositiveDefiniteError(
            f"Sigma_11 - pi'pi = {s2:.3e} is not positive; matrix is not positive definite"
        )
    return SigmaFactor(pi=pi, sigma_v=float(np.sqrt(s2)))


def precision_first_row(factor: SigmaFactor) -> PrecisionRow:
    """First precision row (1, -pi') / sigma_v^2 of the block covariance."""
    row = np.concatenate(([1.0], -factor.pi)) / factor.sigma_v**2
    return PrecisionRow(omega_row=row)


def split_plan(n: int) -> SplitPlan:
    """Partition {0, ..., n-1} into four consecutive folds of size floor(n/4)."""
    if n < 4:
        raise ValueError(f"need n >= 4 to form four folds, got n={n}")
    b = n // 4
    folds = [np.arange(k * b, (k + 1) * b) for k in range(4)]
    return SplitPlan(b_n=b, h1=folds[0], h2=folds[1], h3=folds[2], h4=folds[3])


def scale_theta(theta: ModelTheta, q: float) -> ModelTheta:
    """Response-scale action: (beta, gamma, Sigma, sigma) -> (beta*q, gamma*q, Sigma, sigma*q)."""
    if not q > 0:
        raise ValueError(f"scale factor must be positive, got {q}")
    return ModelTheta(
        beta=theta.beta * q,
        gamma=theta.gamma * q,
        sigma_cov=theta.sigma_cov,
        sigma_noise=theta.sigma_noise * q,
    )


def in_theta_tilde(theta: ModelTheta, cfg: SpaceConfig, tol: float = BOUNDARY_TOL) -> MembershipResult:
    """Membership in the unconstrained space: eigenvalue band, noise cap, l2 cap."""
    reasons = []
    eigs = np.linalg.eigvalsh(theta.sigma_cov)
    if eigs[0] < 1.0 / cfg.M - tol:
        reasons.append("eigen_min")
    if eigs[-1] > cfg.M + tol:
        reasons.append("eigen_max")
    if theta.sigma_noise > cfg.M1 + tol:
        reasons.append("noise_cap")
    if float(np.linalg.norm(theta.beta_full)) > cfg.M2 + tol:
        reasons.append("norm_cap")
    return MembershipResult(ok=not reasons, reasons=tuple(reasons))


def in_theta_s(
    theta: ModelTheta,
    cfg: SpaceConfig,
    s0: int,
    beta0: float | None = None,
    refined: bool = False,
    tol: float = BOUNDARY_TOL,
) -> MembershipResult:
    """Membership in the sparsity-constrained null space.

    Checks the identity lower-right block, the eigenvalue band, noise and l2
    caps, the precision-row sparsity bound ||Omega_1.||_0 <= s0 (entries count
    as nonzero when |.| > 1e-10), and beta == beta0 when given.  With
    ``refined`` the tightened variant is used: eigenvalues in
    [(zeta*M)^-1, zeta*M], kappa <= sigma <= zeta*M1, and l2 cap zeta*M2.
    """
    reasons = []
    S = theta.sigma_cov
    block = S[1:, 1:]
    block_ok = np.allclose(block, np.eye(block.shape[0]), rtol=0, atol=BLOCK_TOL)
    if not block_ok:
        reasons.append("block_identity")

    hi = cfg.zeta * cfg.M if refined else cfg.M
    lo = 1.0 / hi
    eigs = np.linalg.eigvalsh(S)
    if eigs[0] < lo - tol:
        reasons.append("eigen_min")
    if eigs[-1] > hi + tol:
        reasons.append("eigen_max")

    if refined and theta.sigma_noise < cfg.kappa - tol:
        reasons.append("noise_floor")
    noise_cap = cfg.zeta * cfg.M1 if refined else cfg.M1
    if theta.sigma_noise > noise_cap + tol:
        reasons.append("noise_cap")

    norm_cap = cfg.zeta * cfg.M2 if refined else cfg.M2
    if float(np.linalg.norm(theta.beta_full)) > norm_cap + tol:
        reasons.append("norm_cap")

    if block_ok:
        try:
            row = precision_first_row(decompose_sigma(S))
            if row.support_size() > s0:
                reasons.append("row_sparsity")
        except NotPositiveDefiniteError:
            reasons.append("not_positive_definite")

    if beta0 is not None and abs(theta.beta - beta0) > tol:
        reasons.append("beta_mismatch")

    return MembershipResult(ok=not reasons, reasons=tuple(reasons))
