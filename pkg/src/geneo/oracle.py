"""Brute-force spectral verification.

Dense materialization of the preconditioned operators, exact spectra
through symmetric similarity transforms, and bound checks for every
spectral guarantee the two-level theory provides.  Everything here is
O(n^3) on purpose and capped at desk scale.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from .errors import DimensionMismatch, ProblemTooLarge
from .schwarz import PreconditionedOperator, color_subdomains

DENSE_CAP = 3000
REL_TOL = 1e-9
ZERO_TOL_FACTOR = 1e-8


@dataclass(frozen=True)
class SpectrumReport:
    """Full spectrum of a preconditioned operator with the zero block split off."""

    eigenvalues: np.ndarray
    zero_multiplicity: int
    lambda_min_nonzero: float
    lambda_max: float

    @property
    def effective_kappa(self) -> float:
        return self.lambda_max / self.lambda_min_nonzero


@dataclass(frozen=True)
class BoundCheck:
    """One verified inequality (or equality) with its slack."""

    name: str
    kind: str                 # "lower" | "upper" | "equal" | "residual"
    theoretical_bound: float
    observed: float
    satisfied: bool
    slack: float

    @staticmethod
    def lower(name, bound, observed):
        tol = REL_TOL * abs(bound)
        return BoundCheck(name, "lower", bound, observed,
                          bool(observed >= bound - tol), observed - bound)

    @staticmethod
    def upper(name, bound, observed):
        tol = REL_TOL * abs(bound)
        return BoundCheck(name, "upper", bound, observed,
                          bool(observed <= bound + tol), bound - observed)

    @staticmethod
    def equal(name, expected, observed):
        return BoundCheck(name, "equal", expected, observed,
                          bool(observed == expected), -abs(observed - expected))

    @staticmethod
    def residual(name, tolerance, observed):
        return BoundCheck(name, "residual", tolerance, observed,
                          bool(observed <= tolerance), tolerance - observed)


def _check_cap(n: int):
    if n > DENSE_CAP:
        raise ProblemTooLarge(f"dense verification capped at {DENSE_CAP}, got {n}")


def dense_operator(op: PreconditionedOperator, mode: str = None) -> np.ndarray:
    """Materialize the operator by application to identity columns."""
    mode = mode or op.mode
    _check_cap(op.n)
    apply = {
        "one_level": op.apply_one_level,
        "projector": op.apply_projector,
        "hybrid": op.apply_hybrid,
        "additive": op.apply_additive,
        "projected": lambda x: op.apply_one_level(
            op.A @ op.apply_projector(x)),
    }[mode]
    cols = [apply(e) for e in np.eye(op.n)]
    return np.column_stack(cols)


def _symmetric_sqrt(B: np.ndarray) -> np.ndarray:
    w, V = sla.eigh(0.5 * (B + B.T))
    w = np.clip(w, 0.0, None)
    return (V * np.sqrt(w)) @ V.T


def _spd_product_spectrum(B: np.ndarray, S: np.ndarray) -> np.ndarray:
    """Eigenvalues of B S for spd B and symmetric S, via sqrt(B) S sqrt(B)."""
    R = _symmetric_sqrt(B)
    C = R @ S @ R
    return sla.eigvalsh(0.5 * (C + C.T))


def projected_spectrum(op: PreconditionedOperator) -> SpectrumReport:
    """Exact spectrum of H A Pi (similar to sqrt(H) A Pi sqrt(H), symmetric)."""
    _check_cap(op.n)
    H = dense_operator(op, "one_level")
    A = op.A.toarray()
    if op.coarse is not None and op.coarse.n0:
        AQ = op.coarse.A_basis
        AP = A - AQ @ op.coarse.solve(AQ.T)
    else:
        AP = A
    lam = _spd_product_spectrum(H, 0.5 * (AP + AP.T))
    lam_max = float(lam[-1])
    thr = ZERO_TOL_FACTOR * max(lam_max, 0.0)
    nonzero = lam[np.abs(lam) > thr]
    return SpectrumReport(
        eigenvalues=lam,
        zero_multiplicity=int(np.count_nonzero(np.abs(lam) <= thr)),
        lambda_min_nonzero=float(nonzero.min()) if nonzero.size else np.nan,
        lambda_max=lam_max,
    )


def preconditioned_spectrum(op: PreconditionedOperator, mode: str) -> SpectrumReport:
    """Exact spectrum of H_hyb A, H_ad A, or the one-level H A (all spd)."""
    _check_cap(op.n)
    B = dense_operator(op, mode)
    lam = _spd_product_spectrum(B, op.A.toarray())
    return SpectrumReport(
        eigenvalues=lam,
        zero_multiplicity=0,
        lambda_min_nonzero=float(lam[0]),
        lambda_max=float(lam[-1]),
    )


def projected_interval(variant: str, tau_sharp, tau_flat, n_color: int,
                       n_prime: float = 1.0):
    """Guaranteed interval for the nonzero spectrum of H A Pi.

    Exact local solvers carry the stability constant 1, so the upper bound
    does not need an eigenproblem; singular weighted-Neumann solvers get
    their lower bound for free once the kernels are in V0.
    """
    if variant == "as":
        lower = 1.0 / (n_prime * tau_flat)
        upper = float(n_color)
    elif variant == "nn":
        lower = 1.0
        upper = n_color / tau_sharp
    elif variant == "is":
        lower = 1.0 / (n_prime * tau_flat)
        upper = n_color / tau_sharp
    else:
        raise ValueError(f"unknown variant {variant!r}")
    return lower, upper


def hybrid_interval(lower: float, upper: float):
    return min(1.0, lower), max(1.0, upper)


def additive_interval(variant: str, tau_sharp, tau_flat, n_color: int,
                      n_prime: float = 1.0):
    """Two-sided bound for H_ad A; defined for invertible local solvers."""
    if variant == "as":
        c_sharp = 1.0
    elif variant == "is":
        if tau_sharp is None:
            raise ValueError("additive bound for 'is' needs tau_sharp")
        c_sharp = tau_sharp
    else:
        raise ValueError(f"no additive bound for variant {variant!r}")
    lower = 1.0 / (max(2.0, 1.0 + 2.0 * n_color / c_sharp)
                   * max(1.0, n_prime * tau_flat))
    upper = n_color / c_sharp + 1.0 if variant == "as" else None
    return lower, upper


def check_projected_bounds(report: SpectrumReport, n0: int, lower: float,
                           upper: float, label: str = "projected"):
    """Zero multiplicity must equal dim(V0); nonzero spectrum inside bounds."""
    checks = [BoundCheck.equal(f"{label}.zero_multiplicity", float(n0),
                               float(report.zero_multiplicity))]
    checks.append(BoundCheck.lower(f"{label}.lambda_min", lower,
                                   report.lambda_min_nonzero))
    checks.append(BoundCheck.upper(f"{label}.lambda_max", upper,
                                   report.lambda_max))
    return checks


def check_interval(report: SpectrumReport, lower, upper, label: str):
    checks = []
    if lower is not None:
        checks.append(BoundCheck.lower(f"{label}.lambda_min", lower,
                                       report.lambda_min_nonzero))
    if upper is not None:
        checks.append(BoundCheck.upper(f"{label}.lambda_max", upper,
                                       report.lambda_max))
    return checks


def verify_coloring(A, restrictions):
    """Same-colored subdomains must be exactly A-orthogonal."""
    colors = color_subdomains(A, restrictions)
    A = A.tocsr() if sp.issparse(A) else sp.csr_matrix(A)
    worst = 0.0
    for c in range(colors.max() + 1):
        members = np.flatnonzero(colors == c)
        for i, s in enumerate(members):
            gi = restrictions[s].global_index
            for t in members[i + 1:]:
                gt = restrictions[t].global_index
                block = A[gi][:, gt]
                if block.nnz:
                    worst = max(worst, float(np.abs(block.data).max()))
    return BoundCheck.residual("coloring.orthogonality", 0.0, worst)


def audit_assumptions(A, restrictions, weights=None, neumann=None,
                      local_set=None, coarse=None, Ms_list=None,
                      n_samples: int = 8, seed: int = 0):
    """Numerical audit of the framework assumptions; returns one check each."""
    rng = np.random.default_rng(seed)
    A = A.tocsr() if sp.issparse(A) else sp.csr_matrix(A)
    n = A.shape[0]
    checks = []

    inj = all(np.unique(m.global_index).size == m.n_local for m in restrictions)
    checks.append(BoundCheck.residual("restriction.orthonormal_rows", 0.0,
                                      0.0 if inj else 1.0))
    mult = np.zeros(n, dtype=np.int64)
    for m in restrictions:
        mult[m.global_index] += 1
    checks.append(BoundCheck.residual("restriction.cover", 0.0,
                                      float((mult == 0).sum())))

    if weights is not None:
        acc = np.zeros(n)
        for m, d in zip(restrictions, weights):
            acc[m.global_index] += d
        checks.append(BoundCheck.residual("partition_of_unity.identity", 1e-14,
                                          float(np.abs(acc - 1.0).max())))

    if neumann is not None:
        S = sp.csr_matrix((n, n))
        for m, As in zip(restrictions, neumann):
            gi = m.global_index
            lifted = sp.coo_matrix(As)
            S = S + sp.coo_matrix(
                (lifted.data, (gi[lifted.row], gi[lifted.col])), shape=(n, n)).tocsr()
        diff = S - A
        res = np.sqrt(diff.multiply(diff).sum()) / np.sqrt(A.multiply(A).sum())
        checks.append(BoundCheck.residual("neumann.splitting", 1e-12, float(res)))

    if local_set is not None:
        worst = 0.0
        for s in range(local_set.n_subdomains):
            T = local_set.tilde_matrix(s)
            Td = T.toarray() if sp.issparse(T) else np.asarray(T)
            scale = max(np.abs(Td).max(), 1e-300)
            worst = max(worst, float(np.abs(Td - Td.T).max() / scale))
        checks.append(BoundCheck.residual("local_solver.symmetric", 1e-12, worst))
        if n <= DENSE_CAP:
            op = PreconditionedOperator(A, local_set, mode="one_level")
            H = dense_operator(op, "one_level")
            lam_min = float(sla.eigvalsh(0.5 * (H + H.T))[0])
            checks.append(BoundCheck.lower("one_level.spd", 0.0, lam_min))

    if coarse is not None:
        checks.append(BoundCheck.upper("coarse.strictly_smaller", float(n - 1),
                                       float(coarse.n0)))
        if local_set is not None:
            worst = 0.0
            for s in range(local_set.n_subdomains):
                Z = local_set.kernel_basis(s)
                for j in range(Z.shape[1]):
                    v = local_set.restrictions[s].prolong(Z[:, j])
                    r = coarse.project(v)
                    denom = max(np.sqrt(v @ (A @ v)), 1e-30)
                    worst = max(worst, float(np.sqrt(abs(r @ (A @ r))) / denom))
            checks.append(BoundCheck.residual("coarse.kernel_inclusion", 1e-8,
                                              worst))

    if Ms_list is not None and weights is not None:
        worst = 0.0
        for _ in range(n_samples):
            x = rng.standard_normal(n)
            total = 0.0
            for m, d, Ms in zip(restrictions, weights, Ms_list):
                y = d * m.restrict(x)
                total += float(y @ (Ms @ y))
            xAx = float(x @ (A @ x))
            worst = max(worst, abs(total - xAx) / xAx)
        checks.append(BoundCheck.residual("stable_split.identity", 1e-12, worst))

    return checks


def subspace_angles(U: np.ndarray, V: np.ndarray) -> np.ndarray:
    """Principal angles between column spans, ascending, in [0, pi/2]."""
    U = np.atleast_2d(U)
    V = np.atleast_2d(V)
    if U.shape[0] != V.shape[0]:
        raise DimensionMismatch(
            f"subspaces live in different spaces: {U.shape[0]} vs {V.shape[0]}")
    return np.sort(sla.subspace_angles(U, V))


def xi_projection(A, restriction, kernel_basis: np.ndarray):
    """A-orthogonal projection vanishing exactly on the lifted kernel.

    With no kernel this is the identity.  Returns a callable on global
    vectors.
    """
    if kernel_basis.shape[1] == 0:
        return lambda x: x.copy()
    Zt = restriction.prolong(kernel_basis)
    G = Zt.T @ (A @ Zt)
    chol = sla.cho_factor(0.5 * (G + G.T), lower=True)

    def apply(x):
        return x - Zt @ sla.cho_solve(chol, Zt.T @ (A @ x))

    return apply


def check_stable_splitting(op: PreconditionedOperator, weights, Ms_list,
                           Ms_factors, tau_flat: float, n_prime: float = 1.0,
                           n_samples: int = 5, seed: int = 0):
    """Build the explicit stable splitting behind the lower spectral bound.

    For sampled x in range(Pi): the weighted restrictions y_s are compressed
    onto the low block of the kernel-deflated pencil and lifted back.  The
    splitting must reconstruct x through Pi, and its local energy is bounded
    by tau_flat * n_prime times the energy of x.  The worst sampled energy
    ratio is the empirical squared stability constant.
    """
    from .linalg import gen_eig, orthonormal_complement, split_threshold

    rng = np.random.default_rng(seed)
    A = op.A
    ls = op.local_set
    pieces = []
    for s in range(ls.n_subdomains):
        Z = Ms_factors[s].kernel_basis
        W = orthonormal_complement(Z, Ms_factors[s].dim)
        tilde = ls.tilde_matrix(s)
        tW = tilde @ W if sp.issparse(tilde) else np.asarray(tilde) @ W
        MB = W.T @ (Ms_list[s] @ W)
        res = gen_eig(W.T @ tW, MB)
        sel = split_threshold(res, tau_flat)
        pieces.append((W, MB, sel.low, tilde))

    worst_energy = 0.0
    worst_rec = 0.0
    for _ in range(n_samples):
        x = op.apply_projector(rng.standard_normal(op.n))
        xAx = float(x @ (A @ x))
        energy = 0.0
        rec = np.zeros(op.n)
        for s, m in enumerate(ls.restrictions):
            W, MB, YL, tilde = pieces[s]
            ys = weights[s] * m.restrict(x)
            # (W^T M W)-orthogonal projection onto the low block
            w = W.T @ ys
            zs = W @ (YL @ (YL.T @ (MB @ w)))
            energy += float(zs @ (tilde @ zs))
            rec += op.apply_projector(m.prolong(zs))
        worst_energy = max(worst_energy, energy / xAx)
        worst_rec = max(worst_rec,
                        float(np.linalg.norm(rec - x) / np.linalg.norm(x)))
    return [
        BoundCheck.residual("stable_split.reconstruction", 1e-8, worst_rec),
        BoundCheck.upper("stable_split.energy_constant",
                         tau_flat * n_prime, worst_energy),
    ]


def check_sharp_estimate(op: PreconditionedOperator, omega: float,
                         n_samples: int = 10, seed: int = 0) -> BoundCheck:
    """Sampled local stability estimate behind the upper spectral bound.

    Draws x_s in range(pinv(tilde A_s) R_s Pi^T), then checks
    ||Xi_s R_s^T x_s||_A^2 <= omega |x_s|^2_{tilde A_s}.
    """
    rng = np.random.default_rng(seed)
    A = op.A
    worst = 0.0
    for s in range(op.local_set.n_subdomains):
        m = op.local_set.restrictions[s]
        T = op.local_set.tilde_matrix(s)
        xi = xi_projection(A, m, op.local_set.kernel_basis(s))
        for _ in range(n_samples):
            v = rng.standard_normal(op.n)
            xs = op.local_set.apply_local(s, m.restrict(op.apply_projector_transpose(v)))
            energy = float(xs @ (T @ xs))
            if energy <= 0.0:
                continue
            w = xi(m.prolong(xs))
            ratio = float(w @ (A @ w)) / energy
            worst = max(worst, ratio)
    return BoundCheck.upper("sharp_estimate.omega", omega, worst)
