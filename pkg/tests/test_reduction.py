"""Tests for the per-component PCA reduction."""

import numpy as np
import pytest

from lmmselect.model import GroupStructure, LmmProblem, WeightSpec
from lmmselect.reduction import pca_reduce, select_with_reduction
from lmmselect.simulate import generate, scenario
from lmmselect.solver import solve_path


def problem_for(z, groups):
    rng = np.random.default_rng(0)
    n = z.shape[0]
    return LmmProblem(
        y=rng.standard_normal(n),
        x=rng.standard_normal((n, 4)),
        z=z,
        groups=GroupStructure(groups),
    )


class TestPcaReduce:
    def test_rank_one_group_keeps_single_component(self):
        v = np.linspace(0.0, 1.0, 12)
        z = np.column_stack([v, v, v])
        reduced, design = pca_reduce(problem_for(z, [3]))
        assert design.new_group_sizes == (1,)
        assert design.explained[0] == pytest.approx(1.0)
        assert reduced.q == 1

    def test_threshold_one_keeps_full_rank(self):
        rng = np.random.default_rng(1)
        z = rng.standard_normal((20, 5))
        _, design = pca_reduce(problem_for(z, [5]), threshold=1.0)
        assert design.new_group_sizes == (min(20, 5),)

    def test_reconstruction_bound_per_group(self):
        inst = generate(scenario("fig5", s0=1, master_seed=2, p=30))
        threshold = 0.95
        _, design = pca_reduce(inst.problem, threshold)
        start = 0
        for i, sl in enumerate(inst.problem.groups.slices()):
            size = design.new_group_sizes[i]
            block = inst.problem.z[:, sl]
            centered = block - design.column_means[i]
            scores = design.z_reduced[:, start : start + size]
            resid = centered - scores @ design.loadings[i].T
            ratio = (resid**2).sum() / (centered**2).sum()
            assert ratio <= 1.0 - threshold + 1e-10
            assert design.explained[i] >= threshold
            start += size

    def test_scores_orthogonal_within_group(self):
        inst = generate(scenario("fig5", s0=1, master_seed=3, p=30))
        _, design = pca_reduce(inst.problem)
        start = 0
        for size in design.new_group_sizes:
            scores = design.z_reduced[:, start : start + size]
            gram = scores.T @ scores
            off = gram - np.diag(np.diag(gram))
            assert np.abs(off).max() <= 1e-8 * np.abs(np.diag(gram)).max()
            start += size

    def test_fig5_keeps_fewer_than_n_components(self):
        inst = generate(scenario("fig5", s0=2, master_seed=4, p=40))
        reduced, design = pca_reduce(inst.problem)
        assert design.q_reduced < inst.problem.n
        assert design.q_reduced < inst.problem.q
        assert reduced.groups.sizes == design.new_group_sizes

    def test_invalid_threshold_rejected(self):
        inst = generate(scenario("fig5", s0=1, master_seed=5, p=20))
        with pytest.raises(ValueError):
            pca_reduce(inst.problem, threshold=0.0)

    def test_reduced_effects_remain_gaussian(self):
        # The compressed effects are linear images of Gaussian effects;
        # check third/fourth moments of one projected coordinate.
        inst = generate(scenario("fig5", s0=1, master_seed=6, p=20))
        _, design = pca_reduce(inst.problem)
        loading = design.loadings[0][:, 0]
        rng = np.random.default_rng(123)
        draws = rng.standard_normal((5000, loading.shape[0])) @ loading
        draws = (draws - draws.mean()) / draws.std()
        skew = float(np.mean(draws**3))
        excess_kurtosis = float(np.mean(draws**4) - 3.0)
        assert abs(skew) <= 0.3
        assert abs(excess_kurtosis) <= 0.3


class TestSelectWithReduction:
    def test_orthogonal_reparameterization_preserves_selection(self):
        # Pre-centered full-column-rank z with threshold 1: the reduction
        # is an orthogonal change of variables, so the identity-weight
        # path selects the same supports.
        rng = np.random.default_rng(11)
        n, p, q = 40, 25, 6
        z = rng.standard_normal((n, q))
        z -= z.mean(axis=0)
        x = rng.standard_normal((n, p))
        beta = np.zeros(p)
        beta[:2] = 1.0
        y = x @ beta + z @ rng.standard_normal(q) + 0.1 * rng.standard_normal(n)
        problem = LmmProblem(y=y, x=x, z=z, groups=GroupStructure([q]))

        reduced_problem, design = pca_reduce(problem, threshold=1.0)
        assert design.q_reduced == q
        grid = dict(n_lambda=10, capital_lambda_grid=[0.5, 5.0])
        direct = solve_path(problem, WeightSpec.identity(), **grid)
        via_pca = solve_path(reduced_problem, WeightSpec.identity(), **grid)
        assert [f.support for f in direct.fits] == [f.support for f in via_pca.fits]

    def test_runs_end_to_end_on_small_instance(self):
        inst = generate(scenario("fig5", s0=1, master_seed=7, p=60))
        path = select_with_reduction(
            inst.problem, capital_lambda_grid=[0.1, 1.0, 10.0], lambda_grid=None
        )
        assert len(path.fits) > 0
        assert all(fit.kkt_residual <= 1e-6 for fit in path.fits)
