"""Evaluation: scene-graph constraint accuracy, box IoU, Chamfer-based
consistency / diversity, and FID / KID over rendered images."""

from __future__ import annotations

import math
from collections import defaultdict
from typing import Mapping, Protocol, Sequence

import numpy as np
from scipy.spatial import cKDTree
from shapely.geometry import Polygon

from .annotator import GEOMETRIC_RULES, STYLE_RULES, RelationThresholds, relation_holds
from .assembly import TriangleMesh, normalize_mesh
from .scene_model import BoundingBox, SceneGraph, Vocabulary, VocabularyError, default_vocabulary

EASY_PREDICATES = (
    "left of", "right of", "in front of", "behind",
    "bigger than", "smaller than", "taller than", "shorter than",
)
HARD_PREDICATES = ("close by", "symmetrical to")
SYMMETRY_TOLERANCE = 0.1  # metres of mirror residual
SIZE_TOLERANCE = 0.1  # relative per-axis size difference
CD_POINTS = 2048


class MetricError(ValueError):
    pass


# -- constraint accuracy ----------------------------------------------------


def is_symmetrical(a: BoundingBox, b: BoundingBox, tol: float = SYMMETRY_TOLERANCE, size_tol: float = SIZE_TOLERANCE) -> bool:
    """True when, for a room axis, reflecting ``a``'s centroid through the plane
    perpendicular to that axis halfway between the boxes lands within ``tol``
    of ``b``'s centroid, and the sizes agree within ``size_tol`` per axis."""
    ta, tb = np.asarray(a.translation), np.asarray(b.translation)
    sa, sb = np.asarray(a.size), np.asarray(b.size)
    if np.any(np.abs(sa - sb) > size_tol * np.maximum(sa, sb)):
        return False
    for axis in (0, 1):
        mirrored = ta.copy()
        mirrored[axis] = tb[axis]  # reflection about the midpoint plane
        if np.linalg.norm(mirrored - tb) <= tol:
            return True
    return False


def check_constraint(
    predicate: int | str,
    a: BoundingBox,
    b: BoundingBox,
    thresholds: RelationThresholds | None = None,
    vocab: Vocabulary | None = None,
    attributes: tuple[Mapping, Mapping] | None = None,
) -> bool:
    """Does "a <predicate> b" hold for the two boxes?

    Geometric predicates use the annotator's rules. Style predicates need
    ``attributes`` for both endpoints.
    """
    vocab = vocab or default_vocabulary()
    name = vocab.predicate_name(vocab.predicate_id(predicate))
    if name in GEOMETRIC_RULES:
        return relation_holds(name, a, b, thresholds)
    if name == "symmetrical to":
        return is_symmetrical(a, b)
    if name in STYLE_RULES:
        if attributes is None:
            raise VocabularyError(f"predicate {name!r} is checked on attributes, none given")
        key = STYLE_RULES[name]
        va, vb = attributes[0].get(key), attributes[1].get(key)
        return va is not None and va == vb
    raise VocabularyError(f"no test for predicate {name!r}")


def constraint_accuracy(
    layouts: Sequence[Sequence[BoundingBox]],
    graphs: Sequence[SceneGraph],
    thresholds: RelationThresholds | None = None,
    vocab: Vocabulary | None = None,
    predicates: Sequence[str] | None = None,
) -> dict:
    """Per-predicate satisfied fraction over all edges, plus unweighted means.

    Returns ``{"per_predicate": {...}, "mean": m, "easy": m_e, "hard": m_h}``
    where means are ``None`` when no predicate of that group occurs. Only
    box-checkable predicates are scored unless ``predicates`` narrows them.
    """
    vocab = vocab or default_vocabulary()
    if len(layouts) != len(graphs):
        raise MetricError("layouts and graphs must be aligned")
    scored = set(predicates) if predicates is not None else set(GEOMETRIC_RULES) | {"symmetrical to"}
    hits, totals = defaultdict(int), defaultdict(int)
    for boxes, graph in zip(layouts, graphs):
        if len(boxes) != graph.num_nodes:
            raise MetricError("one box per node is required")
        for e in graph.edges:
            name = vocab.predicate_name(e.predicate_id)
            if name not in scored:
                continue
            a, b = boxes[graph.node_index(e.src)], boxes[graph.node_index(e.dst)]
            totals[name] += 1
            hits[name] += check_constraint(name, a, b, thresholds, vocab)
    per = {k: hits[k] / totals[k] for k in sorted(totals)}

    def mean(keys):
        vals = [per[k] for k in keys if k in per]
        return float(np.mean(vals)) if vals else None

    return {
        "per_predicate": per,
        "mean": mean(per),
        "easy": mean(EASY_PREDICATES),
        "hard": mean(HARD_PREDICATES),
    }


def box_iou_3d(a: BoundingBox, b: BoundingBox) -> float:
    """Volume IoU of two yawed boxes (footprint polygon times vertical overlap)."""
    inter_area = Polygon(a.footprint_corners()).intersection(Polygon(b.footprint_corners())).area
    dz = max(0.0, min(a.top, b.top) - max(a.bottom, b.bottom))
    inter = inter_area * dz
    union = a.volume + b.volume - inter
    return inter / union if union > 0 else 0.0


def mean_iou(pred: Sequence[BoundingBox], gt: Sequence[BoundingBox]) -> float:
    if len(pred) != len(gt) or not gt:
        raise MetricError("need equally many non-zero predicted and reference boxes")
    return float(np.mean([box_iou_3d(p, g) for p, g in zip(pred, gt)]))


# -- Chamfer-based shape metrics --------------------------------------------


def chamfer_distance(a: np.ndarray, b: np.ndarray) -> float:
    """Mean squared nearest-neighbour distance from a to b plus from b to a."""
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    if len(a) == 0 or len(b) == 0:
        raise MetricError("Chamfer distance needs non-empty point sets")
    da, _ = cKDTree(b).query(a)
    db, _ = cKDTree(a).query(b)
    return float(np.mean(da**2) + np.mean(db**2))


def sample_surface(mesh: TriangleMesh, count: int = CD_POINTS, seed: int = 0) -> np.ndarray:
    """Area-weighted uniform samples on the mesh surface."""
    if mesh.is_empty:
        raise MetricError("cannot sample an empty mesh")
    rng = np.random.default_rng(seed)
    tri = mesh.vertices[mesh.faces]
    area = 0.5 * np.linalg.norm(np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0]), axis=1)
    face = rng.choice(len(tri), size=count, p=area / area.sum())
    u, v = rng.random(count), rng.random(count)
    flip = u + v > 1
    u[flip], v[flip] = 1 - u[flip], 1 - v[flip]
    t = tri[face]
    return t[:, 0] + u[:, None] * (t[:, 1] - t[:, 0]) + v[:, None] * (t[:, 2] - t[:, 0])


def shape_points(mesh: TriangleMesh, count: int = CD_POINTS, seed: int = 0) -> np.ndarray:
    """Surface samples of the box-normalized mesh, ready for comparison."""
    return sample_surface(normalize_mesh(mesh), count, seed)


def consistency_score(
    points: Mapping[int, np.ndarray],
    graph: SceneGraph,
    vocab: Vocabulary | None = None,
    predicate: str = "same shape as",
) -> float | None:
    """Mean CD over node pairs joined by ``predicate`` (lower is more
    consistent); ``None`` when no such pair has shapes."""
    vocab = vocab or default_vocabulary()
    pid = vocab.predicate_id(predicate)
    vals = [
        chamfer_distance(points[e.src], points[e.dst])
        for e in graph.edges
        if e.predicate_id == pid and e.src in points and e.dst in points
    ]
    return float(np.mean(vals)) if vals else None


def diversity_score(
    runs: Sequence[Mapping[int, np.ndarray]],
    class_of: Mapping[int, int],
    vocab: Vocabulary | None = None,
) -> dict[str, float]:
    """Mean CD between the same node's shapes in consecutive runs, per class
    name and over all nodes (key ``"total"``); higher is more diverse."""
    vocab = vocab or default_vocabulary()
    per_class = defaultdict(list)
    for prev, cur in zip(runs, runs[1:]):
        for nid in sorted(set(prev) & set(cur)):
            per_class[vocab.class_name(class_of[nid])].append(chamfer_distance(prev[nid], cur[nid]))
    out = {k: float(np.mean(v)) for k, v in sorted(per_class.items())}
    every = [x for v in per_class.values() for x in v]
    out["total"] = float(np.mean(every)) if every else 0.0
    return out


# -- image distribution metrics ---------------------------------------------


class FeatureExtractor(Protocol):
    name: str

    def __call__(self, images: np.ndarray) -> np.ndarray: ...


class RandomProjectionFeatures:
    """Deterministic image features: average-pool to ``pool``², flatten, and
    project with a fixed seeded Gaussian matrix."""

    def __init__(self, dim: int = 64, pool: int = 16, seed: int = 0):
        self.dim, self.pool, self.seed = dim, pool, seed
        self.name = f"random-projection-{dim}-{pool}-{seed}"
        rng = np.random.default_rng(seed)
        self.matrix = rng.standard_normal((pool * pool * 3, dim)) / math.sqrt(pool * pool * 3)

    def __call__(self, images: np.ndarray) -> np.ndarray:
        x = np.asarray(images, dtype=np.float64) / 255.0
        n, h, w, c = x.shape
        if h % self.pool or w % self.pool:
            raise MetricError(f"image size {h}x{w} not divisible by pool {self.pool}")
        x = x.reshape(n, self.pool, h // self.pool, self.pool, w // self.pool, c).mean(axis=(2, 4))
        return x.reshape(n, -1) @ self.matrix


def _sqrt_psd(m: np.ndarray) -> np.ndarray:
    w, v = np.linalg.eigh((m + m.T) / 2)
    return (v * np.sqrt(np.clip(w, 0, None))) @ v.T


def frechet_distance(feats_a: np.ndarray, feats_b: np.ndarray, eps: float = 1e-6) -> float:
    """||mu_a - mu_b||^2 + Tr(S_a + S_b - 2 (S_a S_b)^(1/2)) with eps*I added to
    both covariances; the trace of the matrix root is taken from the
    eigenvalues of S_a^(1/2) S_b S_a^(1/2)."""
    if len(feats_a) < 2 or len(feats_b) < 2:
        raise MetricError("need at least two samples per side")
    mu_a, mu_b = feats_a.mean(0), feats_b.mean(0)
    d = feats_a.shape[1]
    sa = np.cov(feats_a, rowvar=False).reshape(d, d) + eps * np.eye(d)
    sb = np.cov(feats_b, rowvar=False).reshape(d, d) + eps * np.eye(d)
    root_a = _sqrt_psd(sa)
    inner = np.linalg.eigvalsh(root_a @ sb @ root_a)
    tr_cross = np.sqrt(np.clip(inner, 0, None)).sum()
    return float(np.sum((mu_a - mu_b) ** 2) + np.trace(sa) + np.trace(sb) - 2.0 * tr_cross)


def kernel_mmd(feats_a: np.ndarray, feats_b: np.ndarray, degree: int = 3) -> float:
    """Unbiased MMD^2 with the kernel (x.y / dim + 1)^degree."""
    if len(feats_a) < 2 or len(feats_b) < 2:
        raise MetricError("need at least two samples per side")
    d = feats_a.shape[1]
    k = lambda x, y: (x @ y.T / d + 1.0) ** degree
    kaa, kbb, kab = k(feats_a, feats_a), k(feats_b, feats_b), k(feats_a, feats_b)
    m, n = len(feats_a), len(feats_b)
    off_a = (kaa.sum() - np.trace(kaa)) / (m * (m - 1))
    off_b = (kbb.sum() - np.trace(kbb)) / (n * (n - 1))
    return float(off_a + off_b - 2.0 * kab.mean())


def fid(images_a: np.ndarray, images_b: np.ndarray, extractor: FeatureExtractor | None = None) -> float:
    extractor = extractor or RandomProjectionFeatures()
    return frechet_distance(extractor(images_a), extractor(images_b))


def kid(images_a: np.ndarray, images_b: np.ndarray, extractor: FeatureExtractor | None = None) -> float:
    extractor = extractor or RandomProjectionFeatures()
    return kernel_mmd(extractor(images_a), extractor(images_b))
