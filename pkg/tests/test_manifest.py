"""Tests for the CSV + JSON problem exchange format."""

import json

import numpy as np
import pytest

from lmmselect.exceptions import ManifestError
from lmmselect.manifest import load_manifest, load_problem, save_problem
from lmmselect.simulate import generate, scenario


@pytest.fixture
def instance():
    return generate(scenario("fig1", s0=3, master_seed=7, p=30))


class TestRoundTrip:
    def test_bit_exact_reload(self, tmp_path, instance):
        manifest_path = save_problem(tmp_path, instance.problem, instance)
        loaded, doc = load_problem(manifest_path)
        np.testing.assert_array_equal(loaded.x, instance.problem.x)
        np.testing.assert_array_equal(loaded.y, instance.problem.y)
        np.testing.assert_array_equal(loaded.z, instance.problem.z)
        assert loaded.groups.sizes == instance.problem.groups.sizes
        assert doc["truth"]["support"] == list(instance.true_support)

    def test_identical_bytes_across_runs(self, tmp_path, instance):
        save_problem(tmp_path / "a", instance.problem, instance)
        save_problem(tmp_path / "b", instance.problem, instance)
        for name in ("manifest.json", "x.csv", "y.csv", "z.csv"):
            assert (tmp_path / "a" / name).read_bytes() == (
                tmp_path / "b" / name
            ).read_bytes()

    def test_q_zero_problem_roundtrips(self, tmp_path):
        from lmmselect.model import GroupStructure, LmmProblem

        rng = np.random.default_rng(0)
        problem = LmmProblem(
            y=rng.standard_normal(5),
            x=rng.standard_normal((5, 3)),
            z=np.zeros((5, 0)),
            groups=GroupStructure(()),
        )
        path = save_problem(tmp_path, problem)
        loaded, _ = load_problem(path)
        assert loaded.q == 0
        np.testing.assert_array_equal(loaded.x, problem.x)


class TestSchemaValidation:
    def test_missing_field_named(self, tmp_path, instance):
        path = save_problem(tmp_path, instance.problem)
        doc = json.loads(path.read_text())
        del doc["group_sizes"]
        path.write_text(json.dumps(doc))
        with pytest.raises(ManifestError, match="group_sizes"):
            load_manifest(path)

    def test_wrong_schema_tag(self, tmp_path, instance):
        path = save_problem(tmp_path, instance.problem)
        doc = json.loads(path.read_text())
        doc["schema"] = "something-else"
        path.write_text(json.dumps(doc))
        with pytest.raises(ManifestError, match="schema"):
            load_manifest(path)

    def test_group_sum_checked(self, tmp_path, instance):
        path = save_problem(tmp_path, instance.problem)
        doc = json.loads(path.read_text())
        doc["group_sizes"] = [1, 2]
        path.write_text(json.dumps(doc))
        with pytest.raises(ManifestError, match="sum to q"):
            load_manifest(path)

    def test_not_json(self, tmp_path):
        bad = tmp_path / "manifest.json"
        bad.write_text("{nope")
        with pytest.raises(ManifestError, match="JSON"):
            load_manifest(bad)

    def test_shape_mismatch_detected(self, tmp_path, instance):
        path = save_problem(tmp_path, instance.problem)
        np.savetxt(tmp_path / "x.csv", np.zeros((2, 2)), delimiter=",")
        with pytest.raises(ManifestError, match="shape"):
            load_problem(path)

    def test_corrupt_csv_reported(self, tmp_path, instance):
        path = save_problem(tmp_path, instance.problem)
        (tmp_path / "y.csv").write_text("1.0\nnot-a-number\n")
        with pytest.raises(ManifestError, match="y"):
            load_problem(path)
