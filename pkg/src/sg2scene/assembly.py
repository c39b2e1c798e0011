"""Scene assembly: isosurfaces from TSDF grids, fitting meshes into boxes,
a software top-down semantic renderer, and OBJ / PNG export."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Sequence

import numpy as np
from PIL import Image
from skimage import measure

from .scene_model import BoundingBox, SceneError, Vocabulary, default_vocabulary
from .shape.tsdf import TsdfGrid

RENDER_SIZE = 256
RENDER_HALF_EXTENT = 4.0  # metres covered on each side of the origin


@dataclass(frozen=True)
class TriangleMesh:
    vertices: np.ndarray  # [V, 3] float64
    faces: np.ndarray  # [F, 3] int64

    @classmethod
    def empty(cls) -> "TriangleMesh":
        return cls(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64))

    @property
    def is_empty(self) -> bool:
        return len(self.faces) == 0

    def euler_characteristic(self) -> int:
        edges = np.sort(self.faces[:, [0, 1, 1, 2, 2, 0]].reshape(-1, 2), axis=1)
        n_edges = len(np.unique(edges, axis=0))
        n_verts = len(np.unique(self.faces))
        return n_verts - n_edges + len(self.faces)

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        return self.vertices.min(axis=0), self.vertices.max(axis=0)


def sdf_to_mesh(grid: TsdfGrid | np.ndarray, iso: float = 0.0) -> TriangleMesh:
    """Zero isosurface in the grid's unit-cube frame [-0.5, 0.5]^3.

    Vertices are placed on voxel centres' lattice, so a grid of resolution D
    maps voxel index i to ``(i + 0.5) / D - 0.5``. Grids without a sign change
    give an empty mesh.
    """
    values = np.asarray(grid.values if isinstance(grid, TsdfGrid) else grid, dtype=np.float64)
    if values.min() >= iso or values.max() <= iso:
        return TriangleMesh.empty()
    d = values.shape[0]
    verts, faces, _, _ = measure.marching_cubes(values, level=iso, spacing=(1.0 / d,) * 3)
    verts = verts + (0.5 / d - 0.5)
    return TriangleMesh(verts.astype(np.float64), faces.astype(np.int64))


def yaw_matrix(alpha: float) -> np.ndarray:
    c, s = math.cos(alpha), math.sin(alpha)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def normalize_mesh(mesh: TriangleMesh) -> TriangleMesh:
    """Map the mesh's axis-aligned bounds onto the centred unit cube."""
    if mesh.is_empty:
        return mesh
    lo, hi = mesh.bounds()
    extent = np.where(hi - lo > 1e-12, hi - lo, 1.0)
    return TriangleMesh((mesh.vertices - (lo + hi) / 2) / extent, mesh.faces)


def fit_to_box(mesh: TriangleMesh, box: BoundingBox) -> TriangleMesh:
    """Normalize, scale by the box size, rotate about +z by the yaw, translate."""
    if mesh.is_empty:
        return mesh
    unit = normalize_mesh(mesh)
    v = unit.vertices * np.asarray(box.size)
    v = v @ yaw_matrix(box.yaw).T + np.asarray(box.translation)
    return TriangleMesh(v, mesh.faces)


def box_mesh(box: BoundingBox) -> TriangleMesh:
    """The 12-triangle cuboid of ``box``."""
    corners = np.array([[x, y, z] for x in (-0.5, 0.5) for y in (-0.5, 0.5) for z in (-0.5, 0.5)])
    faces = np.array([
        [0, 2, 1], [1, 2, 3], [4, 5, 6], [5, 7, 6],
        [0, 1, 4], [1, 5, 4], [2, 6, 3], [3, 6, 7],
        [0, 4, 2], [2, 4, 6], [1, 3, 5], [3, 7, 5],
    ])
    return fit_to_box(TriangleMesh(corners, faces), box)


# -- rendering --------------------------------------------------------------


@lru_cache(maxsize=1)
def default_palette() -> dict[str, tuple[int, int, int]]:
    text = resources.files("sg2scene").joinpath("assets/palette.json").read_text()
    return {k: tuple(v) for k, v in json.loads(text).items()}


@dataclass(frozen=True)
class PlacedObject:
    mesh: TriangleMesh  # world coordinates
    class_id: int
    name: str = ""


def _rasterize(
    tri: np.ndarray, size: int, half: float, depth: np.ndarray, labels: np.ndarray, value: int
) -> None:
    """Write ``value`` where this triangle's top surface beats the z-buffer."""
    px = (tri[:, 0] + half) / (2 * half) * size - 0.5  # column coordinate
    py = (half - tri[:, 1]) / (2 * half) * size - 0.5  # row coordinate
    c0, c1 = int(max(math.ceil(px.min()), 0)), int(min(math.floor(px.max()), size - 1))
    r0, r1 = int(max(math.ceil(py.min()), 0)), int(min(math.floor(py.max()), size - 1))
    if c0 > c1 or r0 > r1:
        return
    (x0, x1, x2), (y0, y1, y2) = px, py
    area = (x1 - x0) * (y2 - y0) - (x2 - x0) * (y1 - y0)
    if abs(area) < 1e-12:
        return
    cols, rows = np.meshgrid(np.arange(c0, c1 + 1), np.arange(r0, r1 + 1))
    w1 = ((cols - x0) * (y2 - y0) - (x2 - x0) * (rows - y0)) / area
    w2 = ((x1 - x0) * (rows - y0) - (cols - x0) * (y1 - y0)) / area
    w0 = 1.0 - w1 - w2
    eps = -1e-9
    inside = (w0 >= eps) & (w1 >= eps) & (w2 >= eps)
    if not inside.any():
        return
    z = w0 * tri[0, 2] + w1 * tri[1, 2] + w2 * tri[2, 2]
    r, c, z = rows[inside], cols[inside], z[inside]
    win = z > depth[r, c]
    depth[r[win], c[win]] = z[win]
    labels[r[win], c[win]] = value


def render_topdown_labels(
    objects: Sequence[PlacedObject], size: int = RENDER_SIZE, half_extent: float = RENDER_HALF_EXTENT
) -> np.ndarray:
    """Orthographic view from +z: per pixel, ``class_id + 1`` of the topmost
    surface, 0 for background. Pixel (0, 0) is the (-x, +y) corner."""
    depth = np.full((size, size), -np.inf)
    labels = np.zeros((size, size), dtype=np.int32)
    for obj in objects:
        tris = obj.mesh.vertices[obj.mesh.faces]
        for tri in tris:
            _rasterize(tri, size, half_extent, depth, labels, obj.class_id + 1)
    return labels


def colorize(labels: np.ndarray, vocab: Vocabulary | None = None, palette=None) -> np.ndarray:
    vocab = vocab or default_vocabulary()
    palette = palette or default_palette()
    lut = np.zeros((vocab.num_classes + 1, 3), dtype=np.uint8)
    lut[0] = palette["background"]
    for c in range(vocab.num_classes):
        lut[c + 1] = palette[vocab.class_name(c)]
    return lut[labels]


def render_topdown_semantic(
    objects: Sequence[PlacedObject],
    vocab: Vocabulary | None = None,
    size: int = RENDER_SIZE,
    half_extent: float = RENDER_HALF_EXTENT,
) -> np.ndarray:
    """``[size, size, 3]`` uint8 image of class colours seen from above."""
    return colorize(render_topdown_labels(objects, size, half_extent), vocab)


def place_objects(
    boxes: Sequence[BoundingBox],
    class_ids: Sequence[int],
    shapes: dict[int, TsdfGrid] | None = None,
    node_ids: Sequence[int] | None = None,
) -> list[PlacedObject]:
    """Fit each node's shape (or its plain box if it has none) into its box."""
    if len(boxes) != len(class_ids):
        raise SceneError("boxes and classes must be index-aligned")
    node_ids = list(node_ids) if node_ids is not None else list(range(len(boxes)))
    shapes = shapes or {}
    out = []
    for nid, box, cls in zip(node_ids, boxes, class_ids):
        grid = shapes.get(nid)
        mesh = fit_to_box(sdf_to_mesh(grid), box) if grid is not None else TriangleMesh.empty()
        if mesh.is_empty:
            mesh = box_mesh(box)
        out.append(PlacedObject(mesh, int(cls), f"node{nid}"))
    return out


# -- export -----------------------------------------------------------------


def write_obj(objects: Sequence[PlacedObject], path: str | Path, vocab: Vocabulary | None = None) -> None:
    """ASCII OBJ with one ``o``/``g`` block per object, tagged by class name."""
    vocab = vocab or default_vocabulary()
    lines, offset = [], 1
    for obj in objects:
        lines.append(f"o {obj.name or 'object'}")
        lines.append(f"g {vocab.class_name(obj.class_id)}")
        lines += [f"v {x:.6f} {y:.6f} {z:.6f}" for x, y, z in obj.mesh.vertices]
        lines += [f"f {a + offset} {b + offset} {c + offset}" for a, b, c in obj.mesh.faces]
        offset += len(obj.mesh.vertices)
    Path(path).write_text("\n".join(lines) + "\n")


def write_png(image: np.ndarray, path: str | Path, vocab: Vocabulary | None = None) -> None:
    """8-bit RGB PNG plus a ``.palette.json`` sidecar mapping class to colour."""
    vocab = vocab or default_vocabulary()
    path = Path(path)
    Image.fromarray(np.ascontiguousarray(image, dtype=np.uint8), "RGB").save(path, optimize=False)
    palette = default_palette()
    used = {k: list(v) for k, v in palette.items() if k == "background" or k in vocab.class_names}
    path.with_suffix(".palette.json").write_text(json.dumps(used, indent=1, sort_keys=True) + "\n")
