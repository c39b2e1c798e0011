"""Truncated signed distance grids: construction from analytic SDFs and the
raw-float32 + JSON sidecar file format."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

DEFAULT_TRUNCATION = 3.0  # voxel widths


@dataclass(frozen=True)
class TsdfGrid:
    values: np.ndarray  # [D, D, D] float32 in [-1, 1]
    truncation: float = DEFAULT_TRUNCATION
    object_id: str = ""

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float32)
        if v.ndim != 3 or len(set(v.shape)) != 1:
            raise ValueError(f"TSDF must be a cubic grid, got shape {v.shape}")
        if not np.isfinite(v).all() or np.abs(v).max(initial=0.0) > 1.0 + 1e-6:
            raise ValueError("TSDF values must be finite and within [-1, 1]")
        object.__setattr__(self, "values", np.clip(v, -1.0, 1.0))

    @property
    def resolution(self) -> int:
        return self.values.shape[0]


def grid_points(resolution: int) -> np.ndarray:
    """Voxel-centre coordinates of a grid spanning the cube [-0.5, 0.5]^3."""
    c = (np.arange(resolution) + 0.5) / resolution - 0.5
    return np.stack(np.meshgrid(c, c, c, indexing="ij"), axis=-1)


def tsdf_from_sdf(
    sdf: Callable[[np.ndarray], np.ndarray],
    resolution: int = 16,
    truncation: float = DEFAULT_TRUNCATION,
    object_id: str = "",
) -> TsdfGrid:
    """Sample ``sdf`` (metric units of the unit cube) and normalize by the
    truncation band so the grid lies in [-1, 1]."""
    pts = grid_points(resolution)
    band = truncation / resolution
    d = sdf(pts.reshape(-1, 3)).reshape(resolution, resolution, resolution)
    return TsdfGrid(np.clip(d / band, -1.0, 1.0).astype(np.float32), truncation, object_id)


# analytic primitives in unit-cube coordinates


def sphere_sdf(radius: float, center=(0.0, 0.0, 0.0)):
    c = np.asarray(center, dtype=np.float64)
    return lambda p: np.linalg.norm(p - c, axis=-1) - radius


def box_sdf(half_extents, center=(0.0, 0.0, 0.0)):
    h = np.asarray(half_extents, dtype=np.float64)
    c = np.asarray(center, dtype=np.float64)

    def f(p):
        q = np.abs(p - c) - h
        outside = np.linalg.norm(np.maximum(q, 0.0), axis=-1)
        inside = np.minimum(q.max(axis=-1), 0.0)
        return outside + inside

    return f


def cylinder_sdf(radius: float, half_height: float, center=(0.0, 0.0, 0.0)):
    c = np.asarray(center, dtype=np.float64)

    def f(p):
        q = p - c
        d = np.stack([np.linalg.norm(q[:, :2], axis=-1) - radius, np.abs(q[:, 2]) - half_height], -1)
        return np.minimum(d.max(-1), 0.0) + np.linalg.norm(np.maximum(d, 0.0), axis=-1)

    return f


def torus_sdf(major: float, minor: float, center=(0.0, 0.0, 0.0)):
    c = np.asarray(center, dtype=np.float64)

    def f(p):
        q = p - c
        ring = np.linalg.norm(q[:, :2], axis=-1) - major
        return np.sqrt(ring**2 + q[:, 2] ** 2) - minor

    return f


def union_sdf(*fns):
    return lambda p: np.min(np.stack([f(p) for f in fns]), axis=0)


# raw file format


def save_tsdf(grid: TsdfGrid, path: str | Path) -> None:
    """Write ``<path>.raw`` (little-endian float32, C order) and ``<path>.json``."""
    base = Path(path).with_suffix("")
    base.parent.mkdir(parents=True, exist_ok=True)
    grid.values.astype("<f4").tofile(base.with_suffix(".raw"))
    meta = {"D": grid.resolution, "truncation": grid.truncation, "object_id": grid.object_id}
    base.with_suffix(".json").write_text(json.dumps(meta, sort_keys=True) + "\n")


def load_tsdf(path: str | Path) -> TsdfGrid:
    base = Path(path).with_suffix("")
    meta = json.loads(base.with_suffix(".json").read_text())
    d = int(meta["D"])
    values = np.fromfile(base.with_suffix(".raw"), dtype="<f4")
    if values.size != d**3:
        raise ValueError(f"{base}.raw holds {values.size} floats, expected {d ** 3}")
    return TsdfGrid(values.reshape(d, d, d), float(meta["truncation"]), str(meta.get("object_id", "")))


def load_tsdf_directory(directory: str | Path) -> dict[str, TsdfGrid]:
    """All grids in ``directory`` keyed by object id."""
    out = {}
    for meta in sorted(Path(directory).glob("*.json")):
        if meta.with_suffix(".raw").exists():
            g = load_tsdf(meta)
            out[g.object_id or meta.stem] = g
    return out
