"""Tests for the support-recovery diagnostics."""

import numpy as np
import pytest

from lmmselect.diagnostics import (
    assemble_blocks,
    irrepresentable_value,
    sign_consistency_curve,
)
from lmmselect.exceptions import SingularPsi
from lmmselect.model import GroupStructure, LmmProblem
from lmmselect.simulate import generate, scenario


def plain_problem(x, y=None):
    x = np.asarray(x, dtype=float)
    if y is None:
        y = np.zeros(x.shape[0])
    return LmmProblem(
        y=y, x=x, z=np.zeros((x.shape[0], 0)), groups=GroupStructure(())
    )


class TestAssembleBlocks:
    def test_orthogonal_rest_gives_zero_delta(self):
        x = np.eye(4)
        blocks = assemble_blocks(plain_problem(x), [0, 1], 1.0)
        np.testing.assert_array_equal(blocks.delta, np.zeros((2, 2)))

    def test_q_zero_reduces_to_classical_blocks(self):
        rng = np.random.default_rng(2)
        x = rng.standard_normal((30, 6))
        problem = plain_problem(x)
        blocks = assemble_blocks(problem, [1, 3], 1.0)
        sigma = (x.T @ x) / 30
        idx1 = [1, 3]
        idx2 = [0, 2, 4, 5]
        np.testing.assert_allclose(blocks.psi, sigma[np.ix_(idx1, idx1)], atol=1e-15)
        np.testing.assert_allclose(blocks.delta, sigma[np.ix_(idx2, idx1)], atol=1e-15)

    def test_ridge_block_added_to_z_corner(self):
        inst = generate(scenario("fig3", s0=3, master_seed=1, p=50))
        lam_u = 1.0
        blocks = assemble_blocks(inst.problem, inst.true_support, lam_u)
        n, q, k = inst.problem.n, inst.problem.q, len(inst.true_support)
        design = np.hstack([inst.problem.x, inst.problem.z])
        sigma = (design.T @ design) / n
        expected = sigma[50:, 50:] + (lam_u / n) * np.eye(q)
        np.testing.assert_allclose(blocks.psi[k:, k:], expected, atol=1e-12)

    def test_recomposition_matches_sigma_partition(self):
        inst = generate(scenario("fig1", s0=4, master_seed=8, p=40))
        blocks = assemble_blocks(inst.problem, inst.true_support, 2.0)
        p, q = inst.problem.p, inst.problem.q
        support = list(blocks.support)
        rest = [j for j in range(p) if j not in blocks.support]
        k = len(support)
        np.testing.assert_allclose(
            blocks.psi[:k, :k],
            blocks.sigma[np.ix_(support, support)],
            atol=0,
        )
        np.testing.assert_allclose(
            blocks.delta[:, :k],
            blocks.sigma[np.ix_(rest, support)],
            atol=0,
        )

    def test_duplicated_support_columns_raise_singular(self):
        x = np.ones((10, 3))
        x[:, 2] = np.arange(10)
        with pytest.raises(SingularPsi):
            assemble_blocks(plain_problem(x), [0, 1], 1.0)

    def test_empty_support_rejected(self):
        with pytest.raises(ValueError):
            assemble_blocks(plain_problem(np.eye(3)), [], 1.0)


class TestIrrepresentableValue:
    def test_orthogonal_design_zero(self):
        blocks = assemble_blocks(plain_problem(np.eye(5)), [0, 1], 1.0)
        assert irrepresentable_value(blocks) <= 1e-12

    def test_duplicated_column_returns_one(self):
        rng = np.random.default_rng(4)
        x = rng.standard_normal((20, 5))
        x[:, 4] = x[:, 0]  # exact copy of a support column
        blocks = assemble_blocks(plain_problem(x), [0, 1], 1.0)
        assert irrepresentable_value(blocks) == pytest.approx(1.0, abs=1e-10)

    def test_invariant_under_sign_flip(self):
        inst = generate(scenario("fig1", s0=3, master_seed=12, p=30))
        blocks = assemble_blocks(inst.problem, inst.true_support, 1.0)
        flipped = assemble_blocks(
            inst.problem,
            inst.true_support,
            1.0,
            true_signs=-np.ones(len(inst.true_support)),
        )
        assert irrepresentable_value(blocks) == pytest.approx(
            irrepresentable_value(flipped), rel=1e-12
        )

    def test_invariant_under_rest_permutation(self):
        rng = np.random.default_rng(9)
        x = rng.standard_normal((25, 8))
        problem = plain_problem(x)
        value = irrepresentable_value(assemble_blocks(problem, [0, 1], 1.0))
        perm = [0, 1, 5, 7, 2, 3, 6, 4]  # permutes only non-support columns
        problem_p = plain_problem(x[:, perm])
        value_p = irrepresentable_value(assemble_blocks(problem_p, [0, 1], 1.0))
        assert value == pytest.approx(value_p, rel=1e-12)


class TestSignConsistencyCurve:
    def test_empty_truth_trivially_recovered(self):
        spec = scenario("fig1", s0=0, master_seed=3, p=25)
        points = sign_consistency_curve(spec, [60], replicates=1, n_lambda=3)
        assert points[0].rate == 1.0

    def test_n_below_support_size_fails(self):
        spec = scenario("fig1", s0=10, master_seed=3, p=25)
        points = sign_consistency_curve(spec, [8], replicates=2, n_lambda=5)
        assert points[0].rate <= 0.5

    def test_deterministic_and_parallel_consistent(self):
        spec = scenario("fig1", s0=2, master_seed=5, p=40)
        a = sign_consistency_curve(spec, [60, 120], replicates=3, n_lambda=5)
        b = sign_consistency_curve(spec, [60, 120], replicates=3, n_lambda=5, jobs=2)
        assert a == b
