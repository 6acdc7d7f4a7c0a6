import json

import numpy as np
import pytest

from contrastcam import (
    BlobFormatError,
    GraphValidationError,
    ManifestError,
    ShapeError,
    Tensor,
    UnsupportedNodeError,
)
from contrastcam.blob import read_blobs, write_blobs
from contrastcam.model import infer_shapes, load_model

from .modelbuild import ModelBuilder


def minimal_pair():
    b = ModelBuilder(input_shape=(1, 4, 4))
    b.conv("conv1", weight=np.ones((1, 1, 1, 1)), bias=[0.0])
    b.relu("relu1")
    return b.build(target_layer="conv1")


class TestBlobRoundTrip:
    def test_round_trip_bit_exact(self):
        rng = np.random.default_rng(0)
        tensors = {
            "a": Tensor(rng.standard_normal((2, 3)).astype(np.float32)),
            "b.weight": Tensor(rng.standard_normal((4, 2, 3, 3)).astype(np.float32)),
            "c": Tensor(np.array([1e-38, -0.0, np.float32(np.pi)], dtype=np.float32)),
        }
        back = read_blobs(write_blobs(tensors))
        assert set(back) == set(tensors)
        for name in tensors:
            assert np.array_equal(back[name].array, tensors[name].array)
            assert back[name].shape == tensors[name].shape

    def test_bad_magic(self):
        with pytest.raises(BlobFormatError, match="magic"):
            read_blobs(b"XXXX" + b"\x00" * 8)

    def test_bad_version(self):
        data = bytearray(write_blobs({}))
        data[4] = 9
        with pytest.raises(BlobFormatError, match="version"):
            read_blobs(bytes(data))

    def test_truncated_values(self):
        data = write_blobs({"t": Tensor(np.zeros((2, 2), dtype=np.float32))})
        with pytest.raises(BlobFormatError, match="truncated"):
            read_blobs(data[:-4])

    def test_trailing_garbage(self):
        data = write_blobs({"t": Tensor(np.zeros(3, dtype=np.float32))})
        with pytest.raises(BlobFormatError, match="trailing"):
            read_blobs(data + b"\x00")


class TestLoadModel:
    def test_minimal_model(self):
        manifest, blob = minimal_pair()
        graph = load_model(manifest, blob)
        assert len(graph.nodes) == 2
        assert graph.shapes["relu1"] == (1, 1, 4, 4)
        assert graph.target_layer == "conv1"

    def test_missing_blob_tensor_named(self):
        b = ModelBuilder(input_shape=(1, 4, 4))
        b.conv("conv1", weight=np.ones((1, 1, 1, 1)))
        manifest, _ = b.build(target_layer="conv1")
        doc = json.loads(manifest)
        doc["nodes"][0]["weight_refs"]["weight"] = "conv1.w"
        blob = write_blobs({})
        with pytest.raises(GraphValidationError, match="conv1.w"):
            load_model(json.dumps(doc).encode(), blob)

    def test_deterministic_structure(self):
        manifest, blob = minimal_pair()
        g1 = load_model(manifest, blob)
        g2 = load_model(manifest, blob)
        assert g1.nodes == g2.nodes
        assert g1.shapes == g2.shapes
        assert g1.input_spec == g2.input_spec

    def test_malformed_json_reports_location(self):
        _, blob = minimal_pair()
        with pytest.raises(ManifestError, match="line"):
            load_model(b'{"format_version": 1,', blob)

    def test_unknown_top_level_field_rejected(self):
        manifest, blob = minimal_pair()
        doc = json.loads(manifest)
        doc["extra"] = True
        with pytest.raises(ManifestError, match="extra"):
            load_model(json.dumps(doc).encode(), blob)

    def test_unknown_kind(self):
        manifest, blob = minimal_pair()
        doc = json.loads(manifest)
        doc["nodes"][1]["kind"] = "gelu"
        with pytest.raises(UnsupportedNodeError, match="gelu"):
            load_model(json.dumps(doc).encode(), blob)

    def test_dangling_input_named(self):
        manifest, blob = minimal_pair()
        doc = json.loads(manifest)
        doc["nodes"][1]["inputs"] = ["ghost"]
        with pytest.raises(GraphValidationError, match="relu1.*ghost"):
            load_model(json.dumps(doc).encode(), blob)

    def test_forward_reference_rejected(self):
        # Referencing a later node would be the only way to form a cycle.
        manifest, blob = minimal_pair()
        doc = json.loads(manifest)
        doc["nodes"][0]["inputs"] = ["relu1"]
        with pytest.raises(GraphValidationError, match="conv1"):
            load_model(json.dumps(doc).encode(), blob)

    def test_duplicate_node_id(self):
        manifest, blob = minimal_pair()
        doc = json.loads(manifest)
        doc["nodes"][1]["id"] = "conv1"
        with pytest.raises(GraphValidationError, match="duplicate"):
            load_model(json.dumps(doc).encode(), blob)

    def test_weight_shape_mismatch_named(self):
        b = ModelBuilder(input_shape=(2, 4, 4))
        b.conv("conv1", weight=np.ones((1, 1, 1, 1)))  # expects 1 channel, input has 2
        manifest, blob = b.build(target_layer="conv1")
        with pytest.raises(ShapeError, match="conv1"):
            load_model(manifest, blob)

    def test_bad_format_version(self):
        manifest, blob = minimal_pair()
        doc = json.loads(manifest)
        doc["format_version"] = 2
        with pytest.raises(ManifestError, match="format_version"):
            load_model(json.dumps(doc).encode(), blob)

    def test_classification_needs_two_labels(self):
        manifest, blob = minimal_pair()
        doc = json.loads(manifest)
        doc["class_labels"] = ["only"]
        with pytest.raises(ManifestError, match="class_labels"):
            load_model(json.dumps(doc).encode(), blob)

    def test_regression_needs_output_range(self):
        manifest, blob = minimal_pair()
        doc = json.loads(manifest)
        doc["task"] = "regression"
        del doc["class_labels"]
        with pytest.raises(ManifestError, match="output_range"):
            load_model(json.dumps(doc).encode(), blob)

    def test_target_layer_must_exist(self):
        manifest, blob = minimal_pair()
        doc = json.loads(manifest)
        doc["target_layer"] = "nope"
        with pytest.raises(GraphValidationError, match="nope"):
            load_model(json.dumps(doc).encode(), blob)

    def test_target_layer_must_be_rank4(self):
        b = ModelBuilder(input_shape=(1, 2, 2))
        b.flatten("flat")
        b.linear("fc", weight=np.ones((2, 4)))
        manifest, blob = b.build(target_layer="fc")
        with pytest.raises(GraphValidationError, match="rank"):
            load_model(manifest, blob)

    def test_add_arity_enforced(self):
        manifest, blob = minimal_pair()
        doc = json.loads(manifest)
        doc["nodes"].append({"id": "sum", "kind": "add", "inputs": ["relu1"]})
        with pytest.raises(GraphValidationError, match="2 input"):
            load_model(json.dumps(doc).encode(), blob)

    def test_empty_inputs_rejected(self):
        with pytest.raises(ManifestError, match="empty"):
            load_model(b"", b"x")


class TestInferShapes:
    def test_same_padding_conv(self):
        b = ModelBuilder(input_shape=(3, 32, 32), class_labels=("a", "b"))
        b.conv("conv1", weight=np.zeros((8, 3, 3, 3)), stride=1, padding=1)
        manifest, blob = b.build(target_layer="conv1")
        graph = load_model(manifest, blob)
        assert graph.shapes["conv1"] == (1, 8, 32, 32)

    def test_halving_maxpool(self):
        b = ModelBuilder(input_shape=(3, 32, 32))
        b.conv("conv1", weight=np.zeros((8, 3, 3, 3)), stride=1, padding=1)
        b.maxpool("pool1", kernel=2, stride=2)
        manifest, blob = b.build(target_layer="conv1")
        graph = load_model(manifest, blob)
        assert graph.shapes["pool1"] == (1, 8, 16, 16)

    def test_negative_dimension_reports_node_and_value(self):
        b = ModelBuilder(input_shape=(1, 4, 4))
        b.conv("conv1", weight=np.zeros((1, 1, 5, 5)), stride=1, padding=0)
        manifest, blob = b.build(target_layer="conv1")
        with pytest.raises(ShapeError, match="conv1.*0"):
            load_model(manifest, blob)

    def test_infer_matches_load(self):
        b = ModelBuilder(input_shape=(3, 8, 8))
        b.conv("conv1", weight=np.zeros((4, 3, 3, 3)), padding=1)
        b.relu("relu1")
        b.global_avgpool("gap")
        b.flatten("flat")
        b.linear("fc", weight=np.zeros((2, 4)), bias=np.zeros(2))
        manifest, blob = b.build(target_layer="conv1")
        graph = load_model(manifest, blob)
        assert infer_shapes(graph) == graph.shapes
        assert graph.shapes["fc"] == (1, 2)
