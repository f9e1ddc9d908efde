"""Seeded synthetic data generation, the joint-covariance factorization, and
the least-favorable prior family.

Sampling uses the counter-based Philox generator keyed directly by the
caller's seed, so identical (theta, n, seed) triples give bit-identical
output and independent replications can run concurrently without shared
state.  The prior family enumerates, for a fixed alternative theta*, the
null parameters obtained by perturbing the Z-on-W regression vector on every
m-sparse support; enumeration is lazy, restartable, and lexicographic over
support sets.
"""

from __future__ import annotations

import csv
import itertools
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator

import numpy as np

from .errors import FactorizationError, InvalidRegimeError
from .model import (
    ModelTheta,
    SigmaFactor,
    SpaceConfig,
    SplitPlan,
    build_sigma,
    decompose_sigma,
    in_theta_s,
    split_plan,
)

# Eigenvalue clamp used when Cholesky fails on a near-singular covariance.
EIG_CLAMP = 1e-12


@dataclass
class Dataset:
    """Observed (y, Z, W) with the four-fold split plan attached."""

    y: np.ndarray
    z: np.ndarray
    w: np.ndarray
    split: SplitPlan

    def __post_init__(self):
        self.y = np.asarray(self.y, dtype=float)
        self.z = np.asarray(self.z, dtype=float)
        self.w = np.asarray(self.w, dtype=float)
        n = self.y.shape[0]
        if self.z.shape != (n,) or self.w.ndim != 2 or self.w.shape[0] != n:
            raise ValueError(
                f"inconsistent shapes: y {self.y.shape}, z {self.z.shape}, w {self.w.shape}"
            )
        if self.split.b_n != n // 4:
            raise ValueError(f"split plan b_n={self.split.b_n} does not match n={n}")
        for a in (self.y, self.z, self.w):
            a.flags.writeable = False

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @property
    def p(self) -> int:
        return self.w.shape[1] + 1

    @property
    def x(self) -> np.ndarray:
        """The full design (Z, W) as an n x p matrix."""
        return np.column_stack((self.z, self.w))


@dataclass(frozen=True)
class LTheta:
    """Lower-triangular factor of the joint covariance of (W, Z, y)."""

    L: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "L", np.asarray(self.L, dtype=float))

    @property
    def dim(self) -> int:
        return self.L.shape[0]

    @property
    def cov(self) -> np.ndarray:
        return self.L @ self.L.T


def _covariance_root(sigma: np.ndarray) -> np.ndarray | None:
    """Lower-triangular root of sigma, or None for the identity fast path.

    Falls back to an eigendecomposition with eigenvalues clamped at 1e-12
    when Cholesky fails on a near-singular matrix.
    """
    p = sigma.shape[0]
    if np.count_nonzero(sigma) == p and np.all(sigma.diagonal() == 1.0):
        return None
    try:
        return np.linalg.cholesky(sigma)
    except np.linalg.LinAlgError:
        eigval, eigvec = np.linalg.eigh(sigma)
        if eigval[-1] <= 0:
            raise FactorizationError("covariance has no positive eigenvalues")
        return eigvec * np.sqrt(np.clip(eigval, EIG_CLAMP, None))


def sample_dataset(theta: ModelTheta, n: int, seed: int) -> Dataset:
    """Draw n i.i.d. rows (Z_i, W_i) ~ N(0, Sigma) and y = Z beta + W gamma + eps.

    The generator is Philox keyed by ``seed``; identical inputs give
    bit-identical output.
    """
    if n < 4:
        raise ValueError(f"need n >= 4, got {n}")
    root = _covariance_root(theta.sigma_cov)
    rng = np.random.Generator(np.random.Philox(key=seed % (2**128)))
    x = rng.standard_normal((n, theta.p))
    if root is not None:
        x = x @ root.T
    eps = rng.standard_normal(n)
    z = x[:, 0]
    w = x[:, 1:]
    y = z * theta.beta + w @ theta.gamma + theta.sigma_noise * eps
    return Dataset(y=y, z=z, w=w, split=split_plan(n))


def scale_dataset(data: Dataset, d: float) -> Dataset:
    """Rescale the response only: (y, Z, W) -> (y*d, Z, W)."""
    if not d > 0:
        raise ValueError(f"scale factor must be positive, got {d}")
    return Dataset(y=data.y * d, z=data.z, w=data.w, split=data.split)


def l_factor(theta: ModelTheta) -> LTheta:
    """Lower-triangular factor of Cov[(W, Z, y)] for a block-form covariance.

    Rows: [I, 0, 0], [pi', sigma_v, 0], [(pi*beta + gamma)', beta*sigma_v, sigma].
    """
    factor = decompose_sigma(theta.sigma_cov)
    p = theta.p
    d = p - 1
    L = np.zeros((p + 1, p + 1))
    L[:d, :d] = np.eye(d)
    L[d, :d] = factor.pi
    L[d, d] = factor.sigma_v
    L[d + 1, :d] = factor.pi * theta.beta + theta.gamma
    L[d + 1, d] = theta.beta * factor.sigma_v
    L[d + 1, d + 1] = theta.sigma_noise
    return LTheta(L=L)


def enumerate_deltas(dim: int, m: int) -> Iterator[np.ndarray]:
    """Yield every 0/1 vector of length ``dim`` with exactly ``m`` ones.

    Order is lexicographic over support sets; m > dim yields nothing.
    """
    if dim < 0 or m < 0:
        raise ValueError("dim and m must be nonnegative")
    for support in itertools.combinations(range(dim), m):
        delta = np.zeros(dim)
        delta[list(support)] = 1.0
        yield delta


def build_prior_member(theta_star: ModelTheta, h: float, delta: np.ndarray) -> ModelTheta:
    """Construct one null parameter of the prior family around ``theta_star``.

    With r = sigma_v*/sigma_eps* and m = ||delta||_0:

        beta_0    = beta* - h
        pi_j      = pi* + sigma_v* sqrt(h/m) delta
        gamma_j   = gamma* + h pi_j + r (1-h) sigma_eps* sqrt(h/m) delta
        sigma_v0  = sigma_v* sqrt(1 - h)
        sigma_e0  = sigma_eps* sqrt(1 - h r^2 + h^2 r^2)
    """
    if not 0 <= h < 1:
        raise ValueError(f"h must lie in [0, 1), got {h}")
    if theta_star.sigma_noise <= 0:
        raise ValueError("theta_star must have positive noise level")
    factor = decompose_sigma(theta_star.sigma_cov)
    delta = np.asarray(delta, dtype=float)
    r = factor.sigma_v / theta_star.sigma_noise
    eps0_sq = 1.0 - h * r**2 + h**2 * r**2
    if eps0_sq <= 0:
        raise ValueError(f"perturbed noise variance factor {eps0_sq:.3e} is not positive")
    m = int(round(float(delta.sum())))
    if m == 0 or h == 0.0:
        step = np.zeros_like(delta)
    else:
        step = np.sqrt(h / m) * delta
    pi_j = factor.pi + factor.sigma_v * step
    gamma_j = theta_star.gamma + h * pi_j + r * (1.0 - h) * theta_star.sigma_noise * step
    sigma_j = build_sigma(SigmaFactor(pi=pi_j, sigma_v=factor.sigma_v * np.sqrt(1.0 - h)))
    return ModelTheta(
        beta=theta_star.beta - h,
        gamma=gamma_j,
        sigma_cov=sigma_j,
        sigma_noise=theta_star.sigma_noise * float(np.sqrt(eps0_sq)),
    )


@dataclass
class PriorFamily:
    """The null family built around an alternative theta*.

    ``members()`` lazily yields (delta, theta_j) pairs, one per m-sparse
    support, and may be restarted or consumed by independent cursors.
    """

    theta_star: ModelTheta
    cfg: SpaceConfig
    n: int
    p: int
    d: float
    m: int
    h: float
    r: float

    @property
    def size(self) -> int:
        return math.comb(self.p - 1, self.m)

    @property
    def beta0(self) -> float:
        return self.theta_star.beta - self.h

    def members(self) -> Iterator[tuple[np.ndarray, ModelTheta]]:
        for delta in enumerate_deltas(self.p - 1, self.m):
            yield delta, build_prior_member(self.theta_star, self.h, delta)


def prior_family(
    theta_star: ModelTheta, cfg: SpaceConfig, n: int, p: int, d: float
) -> PriorFamily:
    """Validate the regime and build the prior family with h = d*s*log(p)/n.

    ``d`` is a caller-supplied fraction of the detection constant rho; any
    value in [0, rho] is admissible.
    """
    if p != theta_star.p:
        raise ValueError(f"p={p} does not match theta_star dimension {theta_star.p}")
    if d < 0:
        raise ValueError(f"d must be nonnegative, got {d}")
    h = d * cfg.s * math.log(p) / n
    if h >= 1:
        raise ValueError(f"h = d*s*log(p)/n = {h:.4g} >= 1; family is undefined")
    if cfg.s * math.log(p) / n > 0.25:
        raise InvalidRegimeError(f"need s*log(p)/n <= 1/4, got {cfg.s * math.log(p) / n:.4g}")
    m = cfg.s // 2
    member = in_theta_s(theta_star, cfg, s0=m, refined=True)
    if not member:
        raise InvalidRegimeError(
            f"theta_star is outside the refined null space: {', '.join(member.reasons)}"
        )
    from .lowerbound import rho_constant  # deferred: lowerbound imports this module

    rho = rho_constant(cfg)
    if d > rho:
        raise ValueError(f"d={d} exceeds rho={rho:.4g}")
    factor = decompose_sigma(theta_star.sigma_cov)
    return PriorFamily(
        theta_star=theta_star,
        cfg=cfg,
        n=n,
        p=p,
        d=d,
        m=m,
        h=h,
        r=factor.sigma_v / theta_star.sigma_noise,
    )


def _sidecar_path(path: Path) -> Path:
    return path.with_name(path.stem + ".seeds.json")


def save_dataset(data: Dataset, path: str | Path, seed: int | None = None) -> Path:
    """Write a dataset as CSV with header ``y,z,w_1,...,w_{p-1}``.

    The seed (when known) is recorded in a JSON sidecar next to the CSV.
    """
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["y", "z"] + [f"w_{j}" for j in range(1, data.p)])
        for i in range(data.n):
            writer.writerow(
                [repr(float(data.y[i])), repr(float(data.z[i]))]
                + [repr(float(v)) for v in data.w[i]]
            )
    sidecar = _sidecar_path(path)
    sidecar.write_text(json.dumps({"seed": seed, "n": data.n, "p": data.p}) + "\n")
    return path


def load_dataset(path: str | Path) -> Dataset:
    """Read a dataset written by :func:`save_dataset`."""
    path = Path(path)
    with path.open() as fh:
        header = fh.readline().strip().split(",")
    if len(header) < 3 or header[0] != "y" or header[1] != "z":
        raise ValueError(f"unexpected CSV header {header[:3]}...")
    expected = ["y", "z"] + [f"w_{j}" for j in range(1, len(header) - 1)]
    if header != expected:
        raise ValueError("CSV header does not match y,z,w_1,...,w_{p-1}")
    raw = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    if raw.shape[1] != len(header):
        raise ValueError("CSV row width does not match header")
    return Dataset(y=raw[:, 0], z=raw[:, 1], w=raw[:, 2:], split=split_plan(raw.shape[0]))
