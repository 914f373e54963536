"""Sequential network container."""

from __future__ import annotations

import hashlib
import json

import numpy as np

from .functional import ShapeError
from .layers import LayerSpec, build_layer, infer_shapes


def architecture_fingerprint(specs, input_shape, meta=None) -> str:
    """SHA-256 over the canonical JSON of the layer specs, input shape and metadata."""
    doc = {
        "specs": [s.to_dict() for s in specs],
        "input_shape": list(input_shape),
        "meta": meta or {},
    }
    blob = json.dumps(doc, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()


class Sequential:
    """A chain of layers built from :class:`LayerSpec` rows.

    ``input_shape`` excludes the batch axis. ``meta`` is free-form JSON-able
    information (e.g. the feature kind the model expects) that becomes part
    of the fingerprint.
    """

    def __init__(self, specs, input_shape, seed=0, dtype=np.float32, meta=None):
        self.specs = [s if isinstance(s, LayerSpec) else LayerSpec.from_dict(s) for s in specs]
        self.input_shape = tuple(int(d) for d in input_shape)
        self.dtype = np.dtype(dtype)
        self.meta = dict(meta or {})
        rng = np.random.default_rng(seed)
        self.layers = []
        shape = self.input_shape
        for spec in self.specs:
            layer = build_layer(spec, shape, rng, self.dtype)
            self.layers.append(layer)
            shape = layer.out_shape
        self.output_shape = shape
        self._forward_done = False

    @property
    def fingerprint(self) -> str:
        return architecture_fingerprint(self.specs, self.input_shape, self.meta)

    @property
    def shapes(self) -> list[tuple]:
        return infer_shapes(self.specs, self.input_shape)

    def forward(self, x, train=False, check_shape=True):
        """Run all layers; ``check_shape=False`` lets fully convolutional nets take other sizes."""
        x = np.asarray(x, dtype=self.dtype)
        if check_shape and x.shape[1:] != self.input_shape:
            raise ShapeError(f"model expects input (N, {self.input_shape}), got {x.shape}")
        for layer in self.layers:
            x = layer.forward(x, train=train)
        self._forward_done = True
        return x

    __call__ = forward

    def backward(self, dout):
        """Backpropagate ``dout`` (gradient w.r.t. the output); returns the input gradient.

        Parameter gradients are left in ``layer.grads`` and exposed by :meth:`grads`.
        """
        if not self._forward_done:
            raise RuntimeError("backward called without a recorded forward pass")
        self._forward_done = False
        dout = np.asarray(dout, dtype=self.dtype)
        for layer in reversed(self.layers):
            dout = layer.backward(dout)
        return dout

    def params(self) -> dict[str, np.ndarray]:
        return {f"{i}.{k}": v for i, layer in enumerate(self.layers) for k, v in layer.params.items()}

    def grads(self) -> dict[str, np.ndarray]:
        out = {}
        for i, layer in enumerate(self.layers):
            for k, v in layer.params.items():
                out[f"{i}.{k}"] = layer.grads.get(k, np.zeros_like(v))
        return out

    def state(self) -> list[dict[str, np.ndarray]]:
        """Per-layer parameters and buffers (the checkpoint payload)."""
        return [{**layer.params, **layer.buffers} for layer in self.layers]

    def load_state(self, state) -> None:
        if len(state) != len(self.layers):
            raise ValueError(f"state has {len(state)} layers, model has {len(self.layers)}")
        for layer, arrays in zip(self.layers, state):
            for store in (layer.params, layer.buffers):
                for k in store:
                    if k not in arrays:
                        raise ValueError(f"state is missing {k!r}")
                    if arrays[k].shape != store[k].shape:
                        raise ValueError(f"shape mismatch for {k!r}: {arrays[k].shape} vs {store[k].shape}")
                    store[k] = np.array(arrays[k], dtype=self.dtype)

    def copy(self) -> "Sequential":
        clone = Sequential(self.specs, self.input_shape, seed=0, dtype=self.dtype, meta=self.meta)
        clone.load_state(self.state())
        return clone

    def astype(self, dtype) -> "Sequential":
        clone = Sequential(self.specs, self.input_shape, seed=0, dtype=dtype, meta=self.meta)
        clone.load_state(self.state())
        return clone

    def predict(self, x, batch_size=256):
        """Eval-mode forward in fixed-size batches."""
        x = np.asarray(x)
        outs = [self.forward(x[i : i + batch_size], train=False) for i in range(0, len(x), batch_size)]
        self._forward_done = False
        for layer in self.layers:
            layer._cache = None
        if not outs:
            return np.zeros((0,) + tuple(self.output_shape), dtype=self.dtype)
        return np.concatenate(outs, axis=0)

    def __repr__(self):
        rows = ", ".join(s.kind for s in self.specs)
        return f"Sequential(input={self.input_shape}, layers=[{rows}])"
