"""Numerical optimization kernels: Lasso, the precision-direction program, and
the projected l1 program.

The precision-direction matrix program is reduced to a vector program in
u = Q xi: every downstream consumer needs only u (the anchor correction uses
u'W_i and the scalar band needs xi'Q xi-type quantities), so we solve
min u'S u subject to ||xi - S u||_inf <= lam.  With S positive definite this
is a box-constrained QP in v = S u, solved by cyclic coordinate descent; with
singular S an ADMM splitting handles the range constraint.  A full-matrix
subgradient solver for the original min-lambda_max program is kept behind a
flag for fidelity experiments.

The projected l1 program minimizes ||q||_1 over a scalar band and an
inf-norm residual band; both are linear, so it is solved as an LP with the
HiGHS backend.  The nonconvex residual-variance floor is checked after the
solve and surfaced in the report rather than enforced.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve
from scipy.optimize import linprog

LASSO_TOL = 1e-8
DIRECTION_TOL = 1e-9
MAX_ITER = 50_000


@dataclass(frozen=True)
class SolverSettings:
    """Iteration budget and convergence tolerance for the iterative solvers."""

    max_iter: int = MAX_ITER
    tol: float | None = None  # None means the per-solver default
    verbose: bool = False

    def __post_init__(self):
        if self.max_iter < 1:
            raise ValueError("max_iter must be at least 1")
        if self.tol is not None and not self.tol > 0:
            raise ValueError("tol must be positive")


@dataclass
class SolveReport:
    """Outcome of one solver call.

    ``feasibility_violations`` maps constraint names to violation magnitudes
    for constraints the returned point does not satisfy (an infeasible
    convex program is recorded under its constraint name with the achieved
    gap, or ``inf`` when no point was produced).
    """

    converged: bool
    iterations: int
    residual: float
    feasibility_violations: dict[str, float] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "converged": self.converged,
            "iterations": self.iterations,
            "residual": self.residual,
            "feasibility_violations": dict(self.feasibility_violations),
        }


def soft_threshold(x, t):
    """Componentwise sign(x) * max(|x| - t, 0)."""
    return np.sign(x) * np.maximum(np.abs(x) - t, 0.0)


def lasso(
    W: np.ndarray, z: np.ndarray, lam: float, settings: SolverSettings | None = None
) -> tuple[np.ndarray, SolveReport]:
    """Minimize b^-1 ||z - Wq||_2^2 + lam ||q||_1 by cyclic coordinate descent.

    Coordinates cycle in fixed index order; exact ties in the soft-threshold
    resolve to zero.  Convergence is declared when the KKT residual drops
    below the tolerance (default 1e-8); on iteration exhaustion the current
    iterate is still returned with ``converged=False``.
    """
    settings = settings or SolverSettings()
    tol = settings.tol if settings.tol is not None else LASSO_TOL
    W = np.asarray(W, dtype=float)
    z = np.asarray(z, dtype=float)
    if lam < 0:
        raise ValueError(f"lam must be nonnegative, got {lam}")
    if W.ndim != 2 or z.shape != (W.shape[0],):
        raise ValueError(f"shape mismatch: W {W.shape}, z {z.shape}")
    b, d = W.shape
    if b < 1:
        raise ValueError("need at least one row")

    gram = W.T @ W / b
    c = W.T @ z / b
    diag = gram.diagonal().copy()
    q = np.zeros(d)
    gq = np.zeros(d)  # running G @ q

    def kkt_residual(qv, gqv):
        g = 2.0 * (gqv - c)
        active = qv != 0.0
        res = np.where(active, np.abs(g + lam * np.sign(qv)), np.maximum(np.abs(g) - lam, 0.0))
        return float(res.max()) if d else 0.0

    residual = kkt_residual(q, gq)
    sweeps = 0
    while residual > tol and sweeps < settings.max_iter:
        for j in range(d):
            if diag[j] <= 0.0:
                continue
            rho = c[j] - (gq[j] - diag[j] * q[j])
            new = soft_threshold(rho, lam / 2.0) / diag[j]
            if new != q[j]:
                gq += gram[:, j] * (new - q[j])
                q[j] = new
        sweeps += 1
        gq = gram @ q  # refresh to cancel incremental drift
        residual = kkt_residual(q, gq)
        if settings.verbose:
            print(f"lasso sweep {sweeps}: kkt={residual:.3e}")
    return q, SolveReport(converged=residual <= tol, iterations=sweeps, residual=residual)


def spectral_norm(Q: np.ndarray, tol: float = 1e-10) -> float:
    """Largest eigenvalue of a symmetric matrix by shifted power iteration."""
    Q = np.asarray(Q, dtype=float)
    if Q.ndim != 2 or Q.shape[0] != Q.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {Q.shape}")
    if not np.allclose(Q, Q.T, rtol=0, atol=1e-10 * max(1.0, np.abs(Q).max(initial=0.0))):
        raise ValueError("matrix is not symmetric")
    d = Q.shape[0]
    if d == 0:
        return 0.0
    shift = float(np.abs(Q).sum(axis=1).max())  # Gershgorin radius: Q + shift*I is PSD
    if shift == 0.0:
        return 0.0
    A = Q + shift * np.eye(d)
    rng = np.random.Generator(np.random.Philox(key=0xD5EED))
    v = rng.standard_normal(d)
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(100_000):
        av = A @ v
        nrm = np.linalg.norm(av)
        if nrm == 0.0:
            return -shift
        v = av / nrm
        new = float(v @ (A @ v))
        if abs(new - lam) <= tol * max(1.0, abs(new)):
            lam = new
            break
        lam = new
    return lam - shift


def _box_qp_direction(S, xi, lam, eta, max_iter, tol):
    """PD branch: coordinate descent on min v'Q v over the box |xi - v| <= lam,
    with Q = S^-1 and u = Q v."""
    d = S.shape[0]
    cf = cho_factor(S, lower=True)
    Q = cho_solve(cf, np.eye(d))
    Q = 0.5 * (Q + Q.T)
    qdiag = Q.diagonal().copy()
    lo = xi - lam
    hi = xi + lam
    v = np.clip(np.zeros(d), lo, hi)
    g = 2.0 * (Q @ v)
    scale = max(1.0, float(np.abs(g).max(initial=0.0)), float(np.abs(xi).max(initial=0.0)))

    def kkt(vv, gg):
        at_lo = vv <= lo + 1e-14 * scale
        at_hi = vv >= hi - 1e-14 * scale
        res = np.abs(gg)
        res = np.where(at_lo, np.maximum(-gg, 0.0), res)
        res = np.where(at_hi, np.maximum(gg, 0.0), res)
        return float(res.max()) if d else 0.0

    residual = kkt(v, g)
    sweeps = 0
    while residual > tol * scale and sweeps < max_iter:
        for j in range(d):
            target = v[j] - g[j] / (2.0 * qdiag[j])
            new = min(max(target, lo[j]), hi[j])
            if new != v[j]:
                g += 2.0 * Q[:, j] * (new - v[j])
                v[j] = new
        sweeps += 1
        g = 2.0 * (Q @ v)
        residual = kkt(v, g)
    u = cho_solve(cf, v)
    report = SolveReport(
        converged=residual <= tol * scale, iterations=sweeps, residual=residual
    )
    _flag_violations(report, S, u, xi, lam, eta)
    return u, report


def _admm_direction(S, xi, lam, eta, max_iter, tol):
    """Singular branch: ADMM on min u'S u with z = S u clipped to the box."""
    d = S.shape[0]
    # Exact feasibility check: minimal inf-norm residual over the range of S.
    c_obj = np.zeros(d + 1)
    c_obj[-1] = 1.0
    ones = np.ones((d, 1))
    A_ub = np.block([[-S, -ones], [S, -ones]])
    b_ub = np.concatenate([-xi, xi])
    bounds = [(None, None)] * d + [(0, None)]
    lp = linprog(c_obj, A_ub=A_ub, b_ub=b_ub, bounds=bounds, method="highs")
    if not lp.success:
        return np.zeros(d), SolveReport(
            converged=False,
            iterations=0,
            residual=math.inf,
            feasibility_violations={"linf": math.inf},
        )
    t_min = float(lp.x[-1])
    if t_min > lam + 1e-9:
        u = lp.x[:d]
        return u, SolveReport(
            converged=False,
            iterations=int(lp.nit),
            residual=t_min - lam,
            feasibility_violations={"linf": t_min - lam},
        )

    eigval, eigvec = np.linalg.eigh(S)
    eigval = np.where(eigval > 1e-12 * max(eigval[-1], 1.0), eigval, 0.0)
    pos = eigval > 0
    lo = xi - lam
    hi = xi + lam
    rho = float(eigval[pos].mean()) if pos.any() else 1.0
    z = np.clip(np.zeros(d), lo, hi)
    w = np.zeros(d)
    su = np.zeros(d)
    u = np.zeros(d)
    iters = 0
    primal = dual = math.inf
    for k in range(1, max_iter + 1):
        iters = k
        coef = np.where(pos, rho / (2.0 + rho * eigval), 0.0)
        uhat = coef * (eigvec.T @ (z - w))
        u = eigvec @ uhat
        su = eigvec @ (eigval * uhat)
        z_old = z
        z = np.clip(su + w, lo, hi)
        w = w + su - z
        primal = float(np.abs(su - z).max(initial=0.0))
        dual = rho * float(np.abs(eigvec @ (eigval * (eigvec.T @ (z - z_old)))).max(initial=0.0))
        if max(primal, dual) <= tol:
            break
        if k % 100 == 0:  # residual balancing
            if primal > 10.0 * dual:
                rho *= 2.0
                w /= 2.0
            elif dual > 10.0 * primal:
                rho /= 2.0
                w *= 2.0
    report = SolveReport(
        converged=max(primal, dual) <= tol, iterations=iters, residual=max(primal, dual)
    )
    _flag_violations(report, S, u, xi, lam, eta)
    return u, report


def _flag_violations(report, S, u, xi, lam, eta):
    gap = float(np.abs(xi - S @ u).max(initial=0.0)) - lam
    if gap > 1e-9 * max(1.0, lam):
        report.feasibility_violations["linf"] = gap
    obj = float(u @ (S @ u))
    if obj > eta * (1.0 + 1e-12) + 1e-12:
        report.feasibility_violations["eta_omega"] = obj - eta


def _subgradient_direction_full(S, xi, lam, eta, max_iter, tol):
    """Fidelity-experiment solver for the original matrix program
    min lambda_max(Q) s.t. ||(I - S Q) xi||_inf <= lam, xi'Q S Q xi <= eta,
    by projected subgradient on an exact-penalty objective.  Intended for
    small dimensions and loose tolerances only."""
    d = S.shape[0]
    scale = max(1.0, float(np.linalg.norm(xi)), spectral_norm(S))
    penalty = 100.0 * scale
    Q = np.linalg.pinv(S)
    Q = 0.5 * (Q + Q.T)
    best_Q = Q.copy()
    best_obj = math.inf
    best_viol = math.inf
    max_iter = min(max_iter, 5000)
    step0 = max(1.0, float(np.linalg.norm(Q)))
    for k in range(1, max_iter + 1):
        eigval, eigvec = np.linalg.eigh(Q)
        top = eigvec[:, -1]
        grad = np.outer(top, top)
        r = xi - S @ (Q @ xi)
        viol_inf = float(np.abs(r).max(initial=0.0)) - lam
        if viol_inf > 0:
            j = int(np.argmax(np.abs(r)))
            sgn = math.copysign(1.0, r[j])
            g = -sgn * np.outer(S[j], xi)
            grad += penalty * 0.5 * (g + g.T)
        sq = S @ (Q @ xi)
        viol_eta = float((Q @ xi) @ sq) - eta
        if viol_eta > 0:
            g = np.outer(sq, xi)
            grad += penalty * (g + g.T)
        viol = max(viol_inf, viol_eta, 0.0)
        obj = float(eigval[-1])
        if (viol, obj) < (best_viol, best_obj):
            best_viol, best_obj = viol, obj
            best_Q = Q.copy()
        gnorm = float(np.linalg.norm(grad))
        if gnorm == 0.0:
            break
        Q = Q - (step0 / math.sqrt(k)) * grad / gnorm  # normalized subgradient step
        Q = 0.5 * (Q + Q.T)
    u = best_Q @ xi
    report = SolveReport(
        converged=best_viol <= max(tol, 1e-6) * scale,
        iterations=max_iter,
        residual=best_viol,
    )
    _flag_violations(report, S, u, xi, lam, eta)
    return u, report


def direction_solver(
    sigma_hat: np.ndarray,
    xi_A: np.ndarray,
    lambda_omega: float,
    eta_omega: float,
    settings: SolverSettings | None = None,
    full_matrix: bool = False,
) -> tuple[np.ndarray, SolveReport]:
    """Solve the reduced precision-direction program.

    Returns u standing for Q xi_A: the minimizer of u'sigma_hat u subject to
    ||xi_A - sigma_hat u||_inf <= lambda_omega.  The quadratic cap
    u'sigma_hat u <= eta_omega is not enforced; a violation at the optimum is
    reported under ``eta_omega`` in the report.  An infeasible inf-norm
    constraint yields ``converged=False`` with the gap under ``linf``; the
    caller decides the fallback.
    """
    settings = settings or SolverSettings()
    tol = settings.tol if settings.tol is not None else DIRECTION_TOL
    S = np.asarray(sigma_hat, dtype=float)
    xi = np.asarray(xi_A, dtype=float)
    if not (lambda_omega > 0 and eta_omega > 0):
        raise ValueError("lambda_omega and eta_omega must be positive")
    if S.ndim != 2 or S.shape[0] != S.shape[1] or xi.shape != (S.shape[0],):
        raise ValueError(f"shape mismatch: sigma_hat {S.shape}, xi_A {xi.shape}")
    S = 0.5 * (S + S.T)
    if full_matrix:
        return _subgradient_direction_full(S, xi, lambda_omega, eta_omega, settings.max_iter, tol)
    if not np.any(xi):
        return np.zeros(S.shape[0]), SolveReport(converged=True, iterations=0, residual=0.0)
    try:
        return _box_qp_direction(S, xi, lambda_omega, eta_omega, settings.max_iter, tol)
    except np.linalg.LinAlgError:
        return _admm_direction(S, xi, lambda_omega, eta_omega, settings.max_iter, tol)


def projected_l1(
    W4: np.ndarray,
    Z4: np.ndarray,
    xi_A: np.ndarray,
    anchor: float,
    eta_pi: float,
    lambda_pi: float,
    M: float,
    settings: SolverSettings | None = None,
) -> tuple[np.ndarray, SolveReport]:
    """Minimize ||q||_1 subject to the scalar band |xi_A'q - anchor| <= eta_pi
    and the residual band ||b^-1 W4'(Z4 - W4 q)||_inf <= lambda_pi / 4.

    Solved as an LP (HiGHS).  The residual-variance floor
    b^-1 sum (Z - W'q)^2 >= 1/(2M) is nonconvex from below, so it is checked
    on the solution and reported under ``variance_floor`` when violated.
    """
    del settings  # the LP backend manages its own iteration control
    W4 = np.asarray(W4, dtype=float)
    Z4 = np.asarray(Z4, dtype=float)
    xi = np.asarray(xi_A, dtype=float)
    if not (eta_pi > 0 and lambda_pi > 0):
        raise ValueError("eta_pi and lambda_pi must be positive")
    if not M > 1:
        raise ValueError(f"M must exceed 1, got {M}")
    if W4.ndim != 2 or Z4.shape != (W4.shape[0],) or xi.shape != (W4.shape[1],):
        raise ValueError(
            f"shape mismatch: W4 {W4.shape}, Z4 {Z4.shape}, xi_A {xi.shape}"
        )
    b, d = W4.shape
    gram = W4.T @ W4 / b
    c = W4.T @ Z4 / b
    band = lambda_pi / 4.0

    eye = np.eye(d)
    zeros = np.zeros((d, d))
    A_ub = np.vstack(
        [
            np.hstack([eye, -eye]),
            np.hstack([-eye, -eye]),
            np.hstack([gram, zeros]),
            np.hstack([-gram, zeros]),
            np.concatenate([xi, np.zeros(d)])[None, :],
            np.concatenate([-xi, np.zeros(d)])[None, :],
        ]
    )
    b_ub = np.concatenate(
        [
            np.zeros(2 * d),
            c + band,
            -c + band,
            [anchor + eta_pi, -anchor + eta_pi],
        ]
    )
    cost = np.concatenate([np.zeros(d), np.ones(d)])
    bounds = [(None, None)] * d + [(0, None)] * d
    res = linprog(cost, A_ub=A_ub, b_ub=b_ub, bounds=bounds, method="highs")

    if not res.success:
        report = SolveReport(
            converged=False,
            iterations=int(getattr(res, "nit", 0) or 0),
            residual=math.inf,
            feasibility_violations={"convex": math.inf},
        )
        return np.zeros(d), report

    q = res.x[:d]
    resid_band = float(np.abs(c - gram @ q).max(initial=0.0)) - band
    resid_scalar = abs(float(xi @ q) - anchor) - eta_pi
    residual = max(resid_band, resid_scalar, 0.0)
    report = SolveReport(
        converged=True, iterations=int(getattr(res, "nit", 0) or 0), residual=residual
    )
    floor = 1.0 / (2.0 * M)
    value = float(np.mean((Z4 - W4 @ q) ** 2))
    if value < floor - 1e-12:
        report.feasibility_violations["variance_floor"] = floor - value
    return q, report
