"""Model checkpoints.

A checkpoint is a single NPZ container holding every weight matrix and bias
vector as 64-bit float arrays in row-major order, plus a JSON metadata
string describing layer shapes, activations, input_dim and the producing
seed/config. load(save(m)) reproduces the model bit for bit.
"""

import json
from pathlib import Path

import numpy as np

from contaudit.errors import InputError
from contaudit.nn.layers import DenseLayer
from contaudit.nn.model import Autoencoder

FORMAT_VERSION = 1


def save_model(model: Autoencoder, path: str | Path, meta: dict | None = None) -> Path:
    """Write the model to an .npz checkpoint; extra metadata is stored as-is."""
    path = Path(path)
    arrays: dict[str, np.ndarray] = {}
    layer_specs = []
    for part, layers in (("enc", model.encoder), ("dec", model.decoder)):
        for i, layer in enumerate(layers):
            arrays[f"{part}_{i}_w"] = np.ascontiguousarray(layer.weights)
            arrays[f"{part}_{i}_b"] = np.ascontiguousarray(layer.bias)
            layer_specs.append(
                {
                    "part": part,
                    "index": i,
                    "shape": list(layer.weights.shape),
                    "activation": layer.activation,
                    "alpha": layer.alpha,
                }
            )
    header = {
        "format_version": FORMAT_VERSION,
        "input_dim": model.input_dim,
        "layers": layer_specs,
        "meta": meta or {},
    }
    arrays["header"] = np.frombuffer(
        json.dumps(header, sort_keys=True).encode("utf-8"), dtype=np.uint8
    )
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)
    return path


def load_model(path: str | Path) -> tuple[Autoencoder, dict]:
    """Read a checkpoint back; returns (model, metadata dict)."""
    path = Path(path)
    if not path.exists():
        raise InputError(f"checkpoint not found: {path}")
    with np.load(path) as bundle:
        header = json.loads(bytes(bundle["header"]).decode("utf-8"))
        if header.get("format_version") != FORMAT_VERSION:
            raise InputError(f"unsupported checkpoint format in {path}")
        parts: dict[str, list[DenseLayer]] = {"enc": [], "dec": []}
        for spec in header["layers"]:
            key = f"{spec['part']}_{spec['index']}"
            layer = DenseLayer(
                weights=bundle[f"{key}_w"],
                bias=bundle[f"{key}_b"],
                activation=spec["activation"],
                alpha=spec["alpha"],
            )
            parts[spec["part"]].append(layer)
    model = Autoencoder(parts["enc"], parts["dec"], header["input_dim"])
    return model, header["meta"]
