"""One-level apply, projector, hybrid/additive combinations, coloring."""

import numpy as np
import pytest
import scipy.linalg as sla
import scipy.sparse as sp

from geneo.errors import KernelNotInCoarseSpace, UnsupportedVariant
from geneo.linalg import orthonormalize_columns
from geneo.partitioning import RestrictionMap
from geneo.schwarz import (
    CoarseSpace,
    PreconditionedOperator,
    build_local_solvers,
    color_subdomains,
    coloring_constant,
    empty_coarse_space,
    interaction_graph,
)
from helpers import Setup, dense_from_apply, tiny, toy


def block_diag_problem():
    """Two decoupled spd blocks with one subdomain each."""
    rng = np.random.default_rng(0)
    A1 = rng.standard_normal((4, 4))
    A1 = A1 @ A1.T + 4 * np.eye(4)
    A2 = rng.standard_normal((3, 3))
    A2 = A2 @ A2.T + 3 * np.eye(3)
    A = sp.csr_matrix(sla.block_diag(A1, A2))
    maps = [RestrictionMap(np.arange(4), 7), RestrictionMap(np.arange(4, 7), 7)]
    return A, maps


class TestOneLevel:
    def test_single_subdomain_is_exact_inverse(self):
        s = tiny(N=1)
        ls = s.local_solvers("as")
        op = PreconditionedOperator(s.A, ls, mode="one_level")
        rng = np.random.default_rng(1)
        x = rng.standard_normal(s.problem.n)
        y = op.apply_one_level(x)
        assert np.linalg.norm(s.A @ y - x) <= 1e-10 * np.linalg.norm(x)

    def test_disjoint_blocks_solve_exactly(self):
        A, maps = block_diag_problem()
        ls = build_local_solvers(A, maps, "as")
        op = PreconditionedOperator(A, ls, mode="one_level")
        rng = np.random.default_rng(2)
        x = rng.standard_normal(7)
        y = op.apply_one_level(x)
        assert np.linalg.norm(A @ y - x) <= 1e-12 * np.linalg.norm(x)

    def test_symmetry(self):
        s = toy()
        for variant in ("as", "nn", "is"):
            op = PreconditionedOperator(s.A, s.local_solvers(variant),
                                        mode="one_level")
            rng = np.random.default_rng(3)
            x = rng.standard_normal(s.problem.n)
            y = rng.standard_normal(s.problem.n)
            hx = op.apply_one_level(x)
            hy = op.apply_one_level(y)
            scale = abs(x @ hy) + abs(y @ hx) + 1.0
            assert abs(x @ hy - y @ hx) <= 1e-12 * scale

    def test_nn_with_kernels_is_spd(self):
        # dense spectrum oracle on a strip toy whose Neumann solvers are singular
        s = Setup(6, 3, 3, "strips", "no_layers")
        ls = s.local_solvers("nn")
        assert any(ls.kernel_basis(i).shape[1] == 3
                   for i in range(ls.n_subdomains))
        op = PreconditionedOperator(s.A, ls, mode="one_level")
        H = dense_from_apply(op.apply_one_level, s.problem.n)
        lam = sla.eigvalsh(0.5 * (H + H.T))
        assert lam.min() > 0.0


class TestProjector:
    def test_empty_coarse_space_is_identity(self):
        s = tiny()
        op = PreconditionedOperator(s.A, s.local_solvers("as"),
                                    empty_coarse_space(s.A), mode="projected")
        x = np.random.default_rng(0).standard_normal(s.problem.n)
        np.testing.assert_array_equal(op.apply_projector(x), x)

    def _projected_op(self):
        s = toy()
        return s, s.operator("as", "k_scaling", "projected", tau_flat=10.0)

    def test_annihilates_coarse_space(self):
        s, op = self._projected_op()
        Q = op.coarse.basis
        rng = np.random.default_rng(4)
        v = Q @ rng.standard_normal(Q.shape[1])
        out = op.apply_projector(v)
        assert np.linalg.norm(out) <= 1e-10 * np.linalg.norm(v)

    def test_idempotent_and_a_self_adjoint(self):
        s, op = self._projected_op()
        rng = np.random.default_rng(5)
        x = rng.standard_normal(s.problem.n)
        y = rng.standard_normal(s.problem.n)
        px = op.apply_projector(x)
        ppx = op.apply_projector(px)
        assert np.linalg.norm(ppx - px) <= 1e-10 * np.linalg.norm(px)
        # <Pi x, A (I - Pi) y> = 0
        py = op.apply_projector(y)
        inner = px @ (s.A @ (y - py))
        scale = np.sqrt(px @ (s.A @ px)) * np.sqrt(y @ (s.A @ y)) + 1.0
        assert abs(inner) <= 1e-10 * scale
        # A Pi = Pi^T A
        left = s.A @ px
        right = op.apply_projector_transpose(s.A @ x)
        assert np.linalg.norm(left - right) <= 1e-10 * np.linalg.norm(left)

    def test_coarse_component(self):
        s, op = self._projected_op()
        assert np.abs(op.coarse_component(np.zeros(s.problem.n))).max() == 0.0
        rng = np.random.default_rng(6)
        Q = op.coarse.basis
        xstar = Q @ rng.standard_normal(Q.shape[1])
        rec = op.coarse_component(s.A @ xstar)
        assert np.linalg.norm(rec - xstar) <= 1e-10 * np.linalg.norm(xstar)
        # random b matches the dense formula
        b = rng.standard_normal(s.problem.n)
        dense = Q @ np.linalg.solve(Q.T @ (s.A @ Q).toarray() if sp.issparse(s.A @ Q)
                                    else Q.T @ (s.A @ Q), Q.T @ b)
        np.testing.assert_allclose(op.coarse_component(b), dense, atol=1e-8)


class TestTwoLevel:
    def test_hybrid_exact_solver_gives_identity(self):
        s = tiny(N=1)
        ls = s.local_solvers("as")
        # any coarse space: with H = A^{-1} all eigenvalues of H_hyb A are 1
        rng = np.random.default_rng(7)
        basis = orthonormalize_columns(rng.standard_normal((s.problem.n, 3)),
                                       1e-10)
        op = PreconditionedOperator(s.A, ls, CoarseSpace(s.A, basis),
                                    mode="hybrid")
        HA = dense_from_apply(lambda x: op.apply_hybrid(s.A @ x), s.problem.n)
        lam = np.linalg.eigvals(HA)
        np.testing.assert_allclose(np.sort(lam.real), 1.0, atol=1e-9)
        assert np.abs(lam.imag).max() < 1e-9

    def test_additive_with_empty_coarse_equals_one_level(self):
        s = toy()
        ls = s.local_solvers("as")
        op = PreconditionedOperator(s.A, ls, empty_coarse_space(s.A),
                                    mode="additive")
        x = np.random.default_rng(8).standard_normal(s.problem.n)
        np.testing.assert_allclose(op.apply_additive(x), op.apply_one_level(x),
                                   atol=1e-14)

    def test_additive_rejects_nn(self):
        s = toy()
        with pytest.raises(UnsupportedVariant):
            PreconditionedOperator(s.A, s.local_solvers("nn"),
                                   empty_coarse_space(s.A), mode="additive")

    def test_kernel_inclusion_enforced(self):
        # Neumann solvers have kernels; a coarse space without them must be
        # rejected at build time
        s = Setup(6, 3, 3, "strips", "no_layers")
        ls = s.local_solvers("nn")
        rng = np.random.default_rng(9)
        basis = orthonormalize_columns(rng.standard_normal((s.problem.n, 4)),
                                       1e-10)
        with pytest.raises(KernelNotInCoarseSpace):
            PreconditionedOperator(s.A, ls, CoarseSpace(s.A, basis),
                                   mode="projected")

    def test_hybrid_matches_dense_formula(self):
        s, = [toy()]
        op = s.operator("as", "k_scaling", "hybrid", tau_flat=10.0)
        n = s.problem.n
        A = s.A.toarray()
        H = dense_from_apply(op.apply_one_level, n)
        Q = op.coarse.basis
        C = np.linalg.inv(Q.T @ A @ Q)
        Pi = np.eye(n) - Q @ C @ Q.T @ A
        expected = Pi @ H @ Pi.T + Q @ C @ Q.T
        got = dense_from_apply(op.apply_hybrid, n)
        assert np.abs(got - expected).max() <= 1e-9 * np.abs(expected).max()


class TestColoring:
    def test_single_subdomain(self):
        s = tiny(N=1)
        assert coloring_constant(s.A, s.restrictions) == 1

    def test_disjoint_blocks_share_a_color(self):
        A, maps = block_diag_problem()
        assert coloring_constant(A, maps) == 1

    def test_strips_toy(self):
        s = Setup(8, 2, 4, "strips", "no_layers")
        assert coloring_constant(s.A, s.restrictions) == 2

    def test_classes_are_a_orthogonal(self):
        s = toy()
        colors = color_subdomains(s.A, s.restrictions)
        G = interaction_graph(s.A, s.restrictions)
        N = len(s.restrictions)
        for a in range(N):
            for b_ in range(a + 1, N):
                if colors[a] == colors[b_]:
                    gi = s.restrictions[a].global_index
                    gj = s.restrictions[b_].global_index
                    block = s.A[gi][:, gj]
                    assert block.nnz == 0 or np.abs(block.data).max() == 0.0
                    assert not G[a, b_]

    def test_covers_all_subdomains(self):
        s = toy()
        colors = color_subdomains(s.A, s.restrictions)
        assert colors.min() >= 0
        assert colors.shape[0] == len(s.restrictions)
