"""Tensor manifest: the on-disk description of a model's weight matrices.

A manifest is a JSON document next to raw tensor files:

    {
      "model_name": "...",
      "tensors": [
        {"name": "...", "role": "ffn_down", "layer_index": 0,
         "shape": [rows, cols], "dtype": "f32", "file": "relative/path.bin",
         "contraction_axis": "rows"},
        ...
      ]
    }

Tensor payloads are raw little-endian 32-bit floats, row-major, exactly
rows * cols * 4 bytes. ``contraction_axis`` names the axis the weight is
contracted over in y = x W; the pipeline canonicalizes every tensor so
that axis becomes the rows.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, ShapeError

__all__ = [
    "ROLES",
    "TensorSpec",
    "ModelManifest",
    "load_manifest",
    "save_manifest",
    "write_tensor",
    "vo_pairs",
]

log = logging.getLogger(__name__)

ROLES = ("ffn_gate", "ffn_up", "ffn_down", "attn_q", "attn_k", "attn_v",
         "attn_o", "embedding", "other")


@dataclass(frozen=True)
class TensorSpec:
    name: str
    role: str
    layer_index: int
    shape: tuple[int, int]
    file: str
    contraction_axis: str = "rows"
    dtype: str = "f32"

    def __post_init__(self):
        if self.role not in ROLES:
            raise ConfigError(f"tensor {self.name!r}: unknown role {self.role!r}")
        if self.dtype != "f32":
            raise ConfigError(f"tensor {self.name!r}: unsupported dtype {self.dtype!r}")
        if self.contraction_axis not in ("rows", "cols"):
            raise ConfigError(
                f"tensor {self.name!r}: contraction_axis must be 'rows' or 'cols'")
        if len(self.shape) != 2 or min(self.shape) < 1:
            raise ConfigError(f"tensor {self.name!r}: bad shape {self.shape}")

    def to_json(self) -> dict:
        return {
            "name": self.name, "role": self.role, "layer_index": self.layer_index,
            "shape": list(self.shape), "dtype": self.dtype, "file": self.file,
            "contraction_axis": self.contraction_axis,
        }


@dataclass
class ModelManifest:
    model_name: str
    tensors: list[TensorSpec]
    base_dir: Path

    def load_tensor(self, spec: TensorSpec) -> np.ndarray:
        """Read the raw f32 payload and widen to float64."""
        path = self.base_dir / spec.file
        data = np.fromfile(path, dtype="<f4")
        expected = spec.shape[0] * spec.shape[1]
        if data.size != expected:
            raise ShapeError(
                f"tensor {spec.name!r}: file holds {data.size} floats, "
                f"shape {spec.shape} needs {expected}")
        return data.astype(np.float64).reshape(spec.shape)

    def tensor(self, name: str) -> TensorSpec:
        for t in self.tensors:
            if t.name == name:
                return t
        raise KeyError(name)


def load_manifest(path: str | Path) -> ModelManifest:
    path = Path(path)
    with open(path) as fh:
        doc = json.load(fh)
    if "tensors" not in doc:
        raise ConfigError(f"{path}: manifest has no 'tensors' list")
    tensors = []
    names = set()
    for entry in doc["tensors"]:
        spec = TensorSpec(
            name=entry["name"], role=entry["role"],
            layer_index=int(entry.get("layer_index", 0)),
            shape=tuple(entry["shape"]), file=entry["file"],
            contraction_axis=entry.get("contraction_axis", "rows"),
            dtype=entry.get("dtype", "f32"),
        )
        if spec.name in names:
            raise ConfigError(f"{path}: duplicate tensor name {spec.name!r}")
        names.add(spec.name)
        tensors.append(spec)
    manifest = ModelManifest(model_name=doc.get("model_name", ""),
                             tensors=tensors, base_dir=path.parent)
    for spec in tensors:
        f = manifest.base_dir / spec.file
        if not f.exists():
            raise ConfigError(f"tensor {spec.name!r}: missing file {f}")
        expected = spec.shape[0] * spec.shape[1] * 4
        actual = f.stat().st_size
        if actual != expected:
            raise ConfigError(
                f"tensor {spec.name!r}: file size {actual} != rows*cols*4 = {expected}")
    return manifest


def save_manifest(manifest: ModelManifest, path: str | Path):
    doc = {"model_name": manifest.model_name,
           "tensors": [t.to_json() for t in manifest.tensors]}
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_tensor(path: str | Path, w: np.ndarray):
    """Write a matrix as raw little-endian f32, row-major."""
    np.ascontiguousarray(w, dtype="<f4").tofile(path)


def canonical(w: np.ndarray, spec: TensorSpec) -> tuple[np.ndarray, bool]:
    """Orient w so the contraction axis is the rows; returns (matrix, transposed)."""
    if spec.contraction_axis == "cols":
        return np.ascontiguousarray(w.T), True
    return w, False


def vo_pairs(manifest: ModelManifest) -> tuple[list[tuple[TensorSpec, TensorSpec]], list[TensorSpec]]:
    """Match attn_v tensors with same-layer attn_o partners.

    Returns (pairs, unpaired) where unpaired holds v/o tensors that have
    no conformable same-layer partner; those fall back to single-matrix
    treatment with a logged warning.
    """
    by_layer: dict[int, dict[str, TensorSpec]] = {}
    for t in manifest.tensors:
        if t.role in ("attn_v", "attn_o"):
            by_layer.setdefault(t.layer_index, {})[t.role] = t
    pairs = []
    unpaired = []
    for layer, members in sorted(by_layer.items()):
        v = members.get("attn_v")
        o = members.get("attn_o")
        if v is None or o is None:
            present = v or o
            log.warning("layer %d: %s has no value/output partner; skipping paired method",
                        layer, present.name)
            unpaired.append(present)
            continue
        # After canonicalization, v's output width must feed o's contraction dim.
        v_out = v.shape[1] if v.contraction_axis == "rows" else v.shape[0]
        o_in = o.shape[0] if o.contraction_axis == "rows" else o.shape[1]
        if v_out != o_in:
            log.warning("layer %d: %s (%s) and %s (%s) are not conformable; "
                        "skipping paired method", layer, v.name, v.shape, o.name, o.shape)
            unpaired.extend([v, o])
            continue
        pairs.append((v, o))
    return pairs, unpaired
