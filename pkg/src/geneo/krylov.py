"""Preconditioned and projected-preconditioned conjugate gradients.

Both solvers start from zero, track the A-norm error against a reference
solution (the fair-comparison stopping rule) or fall back to the
preconditioned-residual criterion, and accumulate the Lanczos tridiagonal
from the CG scalars for extreme-Ritz condition estimates.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from .errors import DimensionMismatch


@dataclass(frozen=True)
class KrylovConfig:
    max_iterations: int = 100
    rel_error_tol: float = 1e-9
    track_error: bool = True        # A-norm error criterion; needs x_ref
    reorthogonalize: bool = False   # full reorthogonalization of residuals

    def __post_init__(self):
        if self.rel_error_tol <= 0.0:
            raise ValueError("tolerance must be positive")


@dataclass
class SolveReport:
    iterations: int
    converged: bool
    criterion: str
    a_norm_errors: np.ndarray
    residual_norms: np.ndarray
    lanczos_alpha: np.ndarray
    lanczos_beta: np.ndarray
    ritz_min: float
    ritz_max: float
    kappa_estimate: float
    final_error: float
    solution: np.ndarray
    projection_drift: float = 0.0


def ritz_bounds(report: SolveReport):
    """Extreme Ritz values and their ratio from the recorded CG scalars."""
    alphas = np.asarray(report.lanczos_alpha)
    betas = np.asarray(report.lanczos_beta)
    m = alphas.shape[0]
    if m == 0:
        return (np.nan, np.nan, np.nan)
    diag = 1.0 / alphas
    diag[1:] += betas[:m - 1] / alphas[:m - 1]
    off = np.sqrt(betas[:m - 1]) / alphas[:m - 1]
    if m == 1:
        vals = diag
    else:
        vals = sla.eigvalsh_tridiagonal(diag, off)
    lo, hi = float(vals[0]), float(vals[-1])
    return (lo, hi, hi / lo)


class _Tracker:
    """Stopping rule and history shared by both solvers."""

    def __init__(self, A, cfg, x_ref, b):
        self.A = A
        self.cfg = cfg
        self.x_ref = x_ref
        if cfg.track_error:
            if x_ref is None:
                raise ValueError("error tracking requires a reference solution")
            self.ref_norm = float(np.sqrt(x_ref @ (A @ x_ref)))
            self.criterion = "a_norm_error"
        else:
            self.ref_norm = None
            self.criterion = "preconditioned_residual"
        self.a_norm_errors = []
        self.residual_norms = []
        self.res0 = None

    def error(self, x) -> float:
        e = x - self.x_ref
        return float(np.sqrt(max(e @ (self.A @ e), 0.0)))

    def record(self, x, r) -> None:
        self.residual_norms.append(float(np.linalg.norm(r)))
        if self.cfg.track_error:
            self.a_norm_errors.append(self.error(x))

    def converged(self, x, rz) -> bool:
        if self.cfg.track_error:
            if self.ref_norm == 0.0:
                return self.error(x) == 0.0
            return self.a_norm_errors[-1] <= self.cfg.rel_error_tol * self.ref_norm
        if self.res0 is None:
            self.res0 = np.sqrt(max(rz, 0.0))
        return np.sqrt(max(rz, 0.0)) <= self.cfg.rel_error_tol * self.res0

    def final_error(self, x) -> float:
        if not self.cfg.track_error:
            return float("nan")
        if self.ref_norm == 0.0:
            return self.error(x)
        return self.error(x) / self.ref_norm


def _report(tracker, x, iters, converged, alphas, betas, drift=0.0) -> SolveReport:
    rep = SolveReport(
        iterations=iters,
        converged=converged,
        criterion=tracker.criterion,
        a_norm_errors=np.asarray(tracker.a_norm_errors),
        residual_norms=np.asarray(tracker.residual_norms),
        lanczos_alpha=np.asarray(alphas),
        lanczos_beta=np.asarray(betas),
        ritz_min=np.nan, ritz_max=np.nan, kappa_estimate=np.nan,
        final_error=tracker.final_error(x),
        solution=x,
        projection_drift=drift,
    )
    rep.ritz_min, rep.ritz_max, rep.kappa_estimate = ritz_bounds(rep)
    return rep


def pcg(A, b, precondition, cfg: KrylovConfig = KrylovConfig(), x_ref=None):
    """Preconditioned CG from a zero initial guess.

    ``precondition`` is a callable applying the spd preconditioner.  Returns
    a :class:`SolveReport`; a run that hits the iteration cap comes back with
    ``converged=False`` and the final relative error filled in.
    """
    n = A.shape[0]
    if b.shape[0] != n:
        raise DimensionMismatch(f"rhs of length {b.shape[0]} against n = {n}")
    tracker = _Tracker(A, cfg, x_ref, b)
    x = np.zeros(n)
    r = b.copy()
    tracker.record(x, r)
    alphas, betas = [], []
    if np.linalg.norm(r) == 0.0 or (cfg.track_error and tracker.converged(x, 0.0)):
        return _report(tracker, x, 0, True, alphas, betas)

    hist_r, hist_z, hist_rho = [], [], []
    z = precondition(r)
    rz = float(r @ z)
    tracker.res0 = np.sqrt(max(rz, 0.0))
    p = z.copy()
    converged = False
    it = 0
    while it < cfg.max_iterations:
        Ap = A @ p
        alpha = rz / float(p @ Ap)
        x = x + alpha * p
        r = r - alpha * Ap
        if cfg.reorthogonalize and hist_r:
            for _ in range(2):
                for rj, zj, rhoj in zip(hist_r, hist_z, hist_rho):
                    r -= ((zj @ r) / rhoj) * rj
        if cfg.reorthogonalize:
            hist_r.append(r.copy())
        z = precondition(r)
        if cfg.reorthogonalize:
            hist_z.append(z.copy())
            hist_rho.append(float(r @ z))
        rz_new = float(r @ z)
        beta = rz_new / rz
        alphas.append(alpha)
        betas.append(beta)
        p = z + beta * p
        rz = rz_new
        it += 1
        tracker.record(x, r)
        if tracker.converged(x, rz):
            converged = True
            break
    return _report(tracker, x, it, converged, alphas, betas)


def ppcg(A, b, op, cfg: KrylovConfig = KrylovConfig(), x_ref=None):
    """Projected (deflated) preconditioned CG.

    The coarse component of the solution is computed exactly up front, then
    CG runs on the A-orthogonal complement of the coarse space: the
    preconditioned residual is projected every iteration so the iterates
    stay in range(Pi).  ``op`` must expose ``apply_one_level``,
    ``apply_projector``, ``apply_projector_transpose`` and
    ``coarse_component``.
    """
    n = A.shape[0]
    if b.shape[0] != n:
        raise DimensionMismatch(f"rhs of length {b.shape[0]} against n = {n}")
    tracker = _Tracker(A, cfg, x_ref, b)
    xc = op.coarse_component(b)
    y = np.zeros(n)
    r = op.apply_projector_transpose(b - A @ xc)
    tracker.record(xc, r)
    alphas, betas = [], []
    drift = 0.0
    if np.linalg.norm(r) <= 1e-300 or (cfg.track_error and tracker.converged(xc, 0.0)):
        return _report(tracker, xc, 0, True, alphas, betas, drift)

    hist_r, hist_z, hist_rho = [], [], []
    z = op.apply_projector(op.apply_one_level(r))
    rz = float(r @ z)
    tracker.res0 = np.sqrt(max(rz, 0.0))
    p = z.copy()
    converged = False
    it = 0
    drift_abs = 0.0
    ynorm_max = 0.0
    while it < cfg.max_iterations:
        Ap = A @ p
        alpha = rz / float(p @ Ap)
        y = y + alpha * p
        r = op.apply_projector_transpose(r - alpha * Ap)
        if cfg.reorthogonalize and hist_r:
            for _ in range(2):
                for rj, zj, rhoj in zip(hist_r, hist_z, hist_rho):
                    r -= ((zj @ r) / rhoj) * rj
        if cfg.reorthogonalize:
            hist_r.append(r.copy())
        z = op.apply_projector(op.apply_one_level(r))
        if cfg.reorthogonalize:
            hist_z.append(z.copy())
            hist_rho.append(float(r @ z))
        rz_new = float(r @ z)
        beta = rz_new / rz
        alphas.append(alpha)
        betas.append(beta)
        p = z + beta * p
        rz = rz_new
        it += 1
        # kernel pollution of the iterate, measured in the A-norm (the
        # projector's geometry) relative to the largest iterate of the run
        d = y - op.apply_projector(y)
        drift_abs = max(drift_abs, np.sqrt(max(d @ (A @ d), 0.0)))
        ynorm_max = max(ynorm_max, np.sqrt(max(y @ (A @ y), 0.0)))
        tracker.record(xc + y, r)
        if tracker.converged(xc + y, rz):
            converged = True
            break
    if ynorm_max > 0.0:
        drift = drift_abs / ynorm_max
    return _report(tracker, xc + y, it, converged, alphas, betas, drift)
