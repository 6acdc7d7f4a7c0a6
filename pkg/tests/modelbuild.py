"""Test-side builder for manifest + blob byte pairs.

Keeps fixture models hand-specified: weights are given as explicit numpy
arrays and serialized through the public blob writer.
"""

from __future__ import annotations

import json

import numpy as np

from contrastcam.blob import write_blobs
from contrastcam.tensor import Tensor


class ModelBuilder:
    def __init__(
        self,
        name="toy",
        task="classification",
        input_shape=(1, 4, 4),
        mean=None,
        std=None,
        class_labels=("a", "b"),
        output_range=None,
        target_layer=None,
    ):
        c = input_shape[0]
        self.doc = {
            "format_version": 1,
            "name": name,
            "task": task,
            "input_spec": {
                "shape": list(input_shape),
                "mean": list(mean) if mean is not None else [0.0] * c,
                "std": list(std) if std is not None else [1.0] * c,
            },
            "nodes": [],
            "target_layer": target_layer,
        }
        if task == "classification":
            self.doc["class_labels"] = list(class_labels)
        else:
            self.doc["output_range"] = list(output_range if output_range else (0.0, 1.0))
        self.blobs = {}

    def node(self, node_id, kind, src="__prev__", params=None, weights=None):
        if src == "__prev__":
            src = self.doc["nodes"][-1]["id"] if self.doc["nodes"] else "input"
        inputs = [src] if isinstance(src, str) else list(src)
        entry = {"id": node_id, "kind": kind, "inputs": inputs}
        if params:
            entry["params"] = params
        if weights:
            refs = {}
            for role, arr in weights.items():
                ref = f"{node_id}.{role}"
                refs[role] = ref
                self.blobs[ref] = Tensor(np.asarray(arr, dtype=np.float32))
            entry["weight_refs"] = refs
        self.doc["nodes"].append(entry)
        return self

    def conv(self, node_id, weight, bias=None, stride=1, padding=0, src="__prev__"):
        weight = np.asarray(weight, dtype=np.float32)
        w = {"weight": weight}
        if bias is not None:
            w["bias"] = np.asarray(bias, dtype=np.float32)
        return self.node(
            node_id,
            "conv2d",
            src,
            params={"kernel_size": int(weight.shape[2]), "stride": stride, "padding": padding},
            weights=w,
        )

    def linear(self, node_id, weight, bias=None, src="__prev__"):
        w = {"weight": np.asarray(weight, dtype=np.float32)}
        if bias is not None:
            w["bias"] = np.asarray(bias, dtype=np.float32)
        return self.node(node_id, "linear", src, weights=w)

    def relu(self, node_id, src="__prev__"):
        return self.node(node_id, "relu", src)

    def maxpool(self, node_id, kernel, stride, padding=0, src="__prev__"):
        return self.node(
            node_id, "maxpool2d", src, params={"kernel_size": kernel, "stride": stride, "padding": padding}
        )

    def avgpool(self, node_id, kernel, stride, padding=0, src="__prev__"):
        return self.node(
            node_id, "avgpool2d", src, params={"kernel_size": kernel, "stride": stride, "padding": padding}
        )

    def batchnorm(self, node_id, gamma, beta, mean, var, epsilon=1e-5, src="__prev__"):
        return self.node(
            node_id,
            "batchnorm_eval",
            src,
            params={"epsilon": epsilon},
            weights={
                "gamma": np.asarray(gamma, dtype=np.float32),
                "beta": np.asarray(beta, dtype=np.float32),
                "running_mean": np.asarray(mean, dtype=np.float32),
                "running_var": np.asarray(var, dtype=np.float32),
            },
        )

    def global_avgpool(self, node_id, src="__prev__"):
        return self.node(node_id, "global_avgpool", src)

    def flatten(self, node_id, src="__prev__"):
        return self.node(node_id, "flatten", src)

    def softmax(self, node_id, src="__prev__"):
        return self.node(node_id, "softmax", src)

    def add(self, node_id, src_a, src_b):
        return self.node(node_id, "add", [src_a, src_b])

    def identity(self, node_id, src="__prev__"):
        return self.node(node_id, "identity", src)

    def build(self, target_layer=None):
        doc = dict(self.doc)
        if target_layer is not None:
            doc["target_layer"] = target_layer
        if doc["target_layer"] is None:
            # default: last rank-4 producer is unknown here; callers pass one
            raise ValueError("target_layer must be set")
        manifest = json.dumps(doc).encode("utf-8")
        blob = write_blobs(self.blobs)
        return manifest, blob
