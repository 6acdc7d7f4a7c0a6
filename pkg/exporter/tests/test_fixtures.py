"""Cross-implementation parity between the source framework and the engine."""

import json

import numpy as np
import pytest

from camexport import (
    FORWARD_ABS_TOL,
    GRAD_REL_TOL,
    contrast_fixture,
    convert_model,
    resolve_source,
    training_fixture,
    write_blob,
    write_fixtures,
)

from contrastcam.blob import read_blobs
from contrastcam.engine import backward_to_layer, forward, relative_error
from contrastcam.losses import cross_entropy_seed, mse_seed
from contrastcam.model import load_model
from contrastcam.tensor import Tensor


def _plan(name):
    return convert_model(*resolve_source(name))


def _engine_grad(graph, plan, fixture):
    trace = forward(graph, Tensor(fixture.input))
    if plan.meta.task == "classification":
        seed = cross_entropy_seed(Tensor(trace.output), int(fixture.target))
    else:
        seed = mse_seed(float(trace.output[0]), float(fixture.target), graph.output_range)
    grad = backward_to_layer(trace, seed.output_grad, plan.target_layer)
    return trace, seed, grad


@pytest.mark.parametrize("name", ["tiny-cnn", "vgg-style", "patch-reg"])
class TestParity:
    def test_forward_within_tolerance(self, name):
        plan = _plan(name)
        graph = load_model(plan.manifest, plan.blob)
        for seed in (100, 101, 102):
            fixture = contrast_fixture(plan, seed)
            trace = forward(graph, Tensor(fixture.input))
            err = float(np.abs(trace.output - fixture.output).max())
            assert err < FORWARD_ABS_TOL, f"seed {seed}: forward drift {err:.2e}"

    def test_target_gradient_within_tolerance(self, name):
        plan = _plan(name)
        graph = load_model(plan.manifest, plan.blob)
        for seed in (100, 101, 102):
            fixture = contrast_fixture(plan, seed)
            _, seed_obj, grad = _engine_grad(graph, plan, fixture)
            assert fixture.target_grad.shape == grad.shape
            err = relative_error(grad.array, fixture.target_grad)
            assert err < GRAD_REL_TOL, f"seed {seed}: gradient drift {err:.2e}"
            assert abs(seed_obj.loss_value - fixture.loss) < 1e-4

    def test_grad_shape_matches_manifest(self, name):
        plan = _plan(name)
        graph = load_model(plan.manifest, plan.blob)
        fixture = contrast_fixture(plan, 100)
        assert fixture.target_grad.shape == graph.shapes[plan.target_layer]
        assert fixture.input.shape == graph.input_spec.tensor_shape


class TestDegenerateContrast:
    def test_self_contrast_equals_training_loss(self):
        plan = _plan("tiny-cnn")
        a = contrast_fixture(plan, 7, self_contrast=True)
        b = training_fixture(plan, 7)
        assert a.target == a.prediction == b.target
        assert a.blob_bytes() == b.blob_bytes()
        assert a.target_grad.tobytes() == b.target_grad.tobytes()

    def test_regression_self_contrast_is_flat(self):
        plan = _plan("patch-reg")
        fixture = contrast_fixture(plan, 7, self_contrast=True)
        assert fixture.loss == 0.0
        assert np.all(fixture.target_grad == 0.0)


class TestFixtureFiles:
    def test_three_fixtures_three_distinct_seeds(self, tmp_path):
        plan = _plan("tiny-cnn")
        written = write_fixtures(plan, tmp_path, seed=10, count=3)
        assert len(written) == 3
        seeds = []
        inputs = []
        for meta_path, blob_path in written:
            doc = json.loads(meta_path.read_bytes())
            seeds.append(doc["seed"])
            inputs.append(read_blobs(blob_path.read_bytes())["input"].array)
        assert seeds == [10, 11, 12]
        assert not np.array_equal(inputs[0], inputs[1])
        assert not np.array_equal(inputs[1], inputs[2])

    def test_blob_round_trips_bit_exact(self, tmp_path):
        plan = _plan("patch-reg")
        ((_, blob_path),) = write_fixtures(plan, tmp_path, seed=3, count=1)
        raw = blob_path.read_bytes()
        tensors = read_blobs(raw)
        assert set(tensors) == {"input", "output", "target_grad"}
        assert write_blob({k: t.array for k, t in tensors.items()}) == raw

    def test_meta_records_tolerances(self, tmp_path):
        plan = _plan("tiny-cnn")
        ((meta_path, _),) = write_fixtures(plan, tmp_path, seed=0, count=1)
        doc = json.loads(meta_path.read_bytes())
        assert doc["tolerances"] == {"forward_abs": 1e-4, "grad_rel": 1e-3}
        assert doc["target_layer"] == plan.target_layer

    def test_fixture_generation_is_deterministic(self, tmp_path):
        plan = _plan("tiny-cnn")
        a = contrast_fixture(plan, 5)
        b = contrast_fixture(_plan("tiny-cnn"), 5)
        assert a.blob_bytes() == b.blob_bytes()
        assert a.meta_bytes() == b.meta_bytes()
