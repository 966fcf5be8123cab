"""Per-vertex scalar fields and their on-disk JSON form."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .mesh import TriMesh


class FieldFileError(ValueError):
    """Unreadable or tampered field file."""


def values_checksum(values) -> str:
    v = np.ascontiguousarray(np.asarray(values, dtype="<f8"))
    return hashlib.sha256(v.tobytes()).hexdigest()


@dataclass(frozen=True)
class ScalarField:
    """Values of ``phi`` at the mesh vertices, linear over each face."""

    values: np.ndarray
    mesh_checksum: str
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.ndim != 1:
            raise ValueError(f"field values must be 1-D, got shape {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError(f"field value at vertex {int(np.argmin(np.isfinite(v)))} is not finite")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @classmethod
    def on(cls, mesh: TriMesh, values, **meta) -> "ScalarField":
        values = np.asarray(values, dtype=float)
        if values.shape != (mesh.n_vertices,):
            raise ValueError(f"expected {mesh.n_vertices} values, got shape {values.shape}")
        return cls(values, mesh.checksum(), dict(meta))

    def checksum(self) -> str:
        return values_checksum(self.values)

    @property
    def range(self) -> tuple[float, float]:
        return float(self.values.min()), float(self.values.max())

    def check_mesh(self, mesh: TriMesh) -> None:
        if mesh.checksum() != self.mesh_checksum or mesh.n_vertices != len(self.values):
            raise FieldFileError("field was computed on a different mesh (checksum mismatch)")

    def to_dict(self) -> dict:
        return {
            "values": self.values.tolist(),
            "checksum": self.checksum(),
            "mesh_checksum": self.mesh_checksum,
            "meta": self.meta,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ScalarField":
        try:
            out = cls(np.asarray(data["values"], dtype=float), str(data["mesh_checksum"]), dict(data.get("meta", {})))
        except (KeyError, TypeError, ValueError) as exc:
            raise FieldFileError(f"malformed field data: {exc}") from None
        stored = data.get("checksum")
        if stored is not None and stored != out.checksum():
            raise FieldFileError("field checksum mismatch (file corrupted or edited)")
        return out

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "ScalarField":
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise FieldFileError(f"{path}: not valid JSON ({exc.msg})") from None
        if not isinstance(data, dict):
            raise FieldFileError(f"{path}: expected a JSON object")
        return cls.from_dict(data)
