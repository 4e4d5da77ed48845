"""Exact nearest-neighbor queries over 3-D point clouds and unsigned-distance
sampling: a balanced median-split tree whose query results must equal a
brute-force scan, plus uniform query generation keyed by (seed, shape index).
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .bundle import BinReader, BinWriter, atomic_write_bytes, check_magic_and_crc
from .errors import ConfigError, FormatError, ShapeError

UDF_MAGIC = b"HUDF"
UDF_VERSION = 1
DEFAULT_QUERIES = 10_000
NORMALIZE_HALF_EXTENT = 0.9


class KdTree:
    """Balanced median-split tree over 3-D points with exact NN distance.

    Nodes split on the axis of largest extent at the median point; leaves hold
    small index buckets. Queries descend with backtracking, pruning subtrees
    whose splitting plane is farther than the best distance found.
    """

    _LEAF_SIZE = 8

    def __init__(self, points: np.ndarray):
        points = np.asarray(points, dtype=np.float64)
        if points.ndim != 2 or points.shape[1] != 3 or points.shape[0] < 1:
            raise ShapeError(f"point cloud must be (m, 3) with m >= 1, got {points.shape}")
        if not np.all(np.isfinite(points)):
            raise ShapeError("point cloud contains non-finite coordinates")
        self.points = points
        # nodes: (axis, split_value, left, right, start, count); leaf when axis < 0
        self._axis: list[int] = []
        self._split: list[float] = []
        self._left: list[int] = []
        self._right: list[int] = []
        self._range: list[tuple[int, int]] = []
        self._order = np.arange(points.shape[0])
        self._root = self._build(0, points.shape[0])

    def _push(self, axis, split, left, right, rng):
        self._axis.append(axis)
        self._split.append(split)
        self._left.append(left)
        self._right.append(right)
        self._range.append(rng)
        return len(self._axis) - 1

    def _build(self, lo: int, hi: int) -> int:
        if hi - lo <= self._LEAF_SIZE:
            return self._push(-1, 0.0, -1, -1, (lo, hi))
        idx = self._order[lo:hi]
        pts = self.points[idx]
        axis = int(np.argmax(pts.max(axis=0) - pts.min(axis=0)))
        mid = (hi - lo) // 2
        part = np.argpartition(pts[:, axis], mid)
        self._order[lo:hi] = idx[part]
        split = float(self.points[self._order[lo + mid], axis])
        node = self._push(axis, split, -1, -1, (lo, hi))
        self._left[node] = self._build(lo, lo + mid)
        self._right[node] = self._build(lo + mid, hi)
        return node

    def nn_distance(self, query) -> float:
        """Exact Euclidean distance from query to the nearest cloud point."""
        q = np.asarray(query, dtype=np.float64).reshape(-1)
        if q.shape != (3,):
            raise ShapeError(f"query must be a 3-vector, got shape {q.shape}")
        best = np.inf
        stack = [self._root]
        while stack:
            node = stack.pop()
            axis = self._axis[node]
            if axis < 0:
                lo, hi = self._range[node]
                idx = self._order[lo:hi]
                d2 = np.sum((self.points[idx] - q) ** 2, axis=1)
                best = min(best, float(d2.min()))
                continue
            delta = q[axis] - self._split[node]
            near, far = (self._left[node], self._right[node]) if delta < 0 else (
                self._right[node], self._left[node])
            # visit near side first; the far side only if the plane is closer than best
            if delta * delta <= best:
                stack.append(far)
            stack.append(near)
        return float(np.sqrt(best))


def build_kdtree(points: np.ndarray) -> KdTree:
    return KdTree(points)


def nn_distance_bruteforce(points: np.ndarray, query) -> float:
    q = np.asarray(query, dtype=np.float64)
    return float(np.sqrt(np.min(np.sum((np.asarray(points) - q) ** 2, axis=1))))


def normalize_cloud(points: np.ndarray, half_extent: float = NORMALIZE_HALF_EXTENT) -> np.ndarray:
    """Translate and uniformly scale a cloud to fit [-half_extent, half_extent]^3."""
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2 or points.shape[1] != 3 or points.shape[0] < 1:
        raise ShapeError(f"point cloud must be (m, 3), got {points.shape}")
    lo, hi = points.min(axis=0), points.max(axis=0)
    center = 0.5 * (lo + hi)
    extent = float((hi - lo).max())
    scale = 2.0 * half_extent / extent if extent > 0 else 1.0
    return (points - center) * scale


def query_rng(seed: int, shape_index: int) -> np.random.Generator:
    """Counter-based generator keyed by (seed, shape index), so per-shape
    sampling is independent of processing order."""
    return np.random.Generator(np.random.Philox(key=[seed & 0xFFFFFFFFFFFFFFFF,
                                                     shape_index & 0xFFFFFFFFFFFFFFFF]))


def sample_udf(cloud: np.ndarray, n_queries: int = DEFAULT_QUERIES, seed: int = 0,
               shape_index: int = 0):
    """Uniform queries in [-1, 1]^3 with exact nearest-neighbor distances.

    Returns (queries (n, 3), udf (n,)). The cloud is expected to be already
    normalized into the unit cube; no augmentation or rescaling happens here.
    """
    tree = build_kdtree(cloud)
    rng = query_rng(seed, shape_index)
    queries = rng.uniform(-1.0, 1.0, size=(n_queries, 3))
    udf = np.empty(n_queries)
    for i in range(n_queries):
        udf[i] = tree.nn_distance(queries[i])
    return queries, udf


@dataclass(frozen=True)
class UdfDataset:
    """Per-shape uniform queries with unsigned distances and class labels."""

    queries: np.ndarray  # (t, n, 3)
    udf: np.ndarray      # (t, n)
    labels: np.ndarray   # (t,)

    def __post_init__(self):
        queries = np.asarray(self.queries, dtype=np.float64)
        udf = np.asarray(self.udf, dtype=np.float64)
        labels = np.asarray(self.labels, dtype=np.int64)
        if queries.ndim != 3 or queries.shape[2] != 3:
            raise ShapeError(f"queries must be (t, n, 3), got {queries.shape}")
        if udf.shape != queries.shape[:2]:
            raise ShapeError(f"udf {udf.shape} does not match queries {queries.shape}")
        if np.any(udf < 0):
            raise ShapeError("unsigned distances must be non-negative")
        if labels.shape != (queries.shape[0],):
            raise ShapeError("labels must have one entry per shape")
        object.__setattr__(self, "queries", queries)
        object.__setattr__(self, "udf", udf)
        object.__setattr__(self, "labels", labels)

    def __len__(self) -> int:
        return self.queries.shape[0]


def build_udf_dataset(clouds, labels, n_queries: int = DEFAULT_QUERIES, seed: int = 0,
                      normalize: bool = True) -> UdfDataset:
    qs, ds = [], []
    for i, cloud in enumerate(clouds):
        pts = normalize_cloud(cloud) if normalize else np.asarray(cloud, dtype=np.float64)
        q, u = sample_udf(pts, n_queries=n_queries, seed=seed, shape_index=i)
        qs.append(q)
        ds.append(u)
    return UdfDataset(np.array(qs), np.array(ds), np.asarray(labels, dtype=np.int64))


def save_udf_dataset(ds: UdfDataset, path) -> None:
    w = BinWriter()
    w.raw(UDF_MAGIC)
    w.u16(UDF_VERSION)
    t, n, _ = ds.queries.shape
    w.u64(t)
    w.u64(n)
    w.raw(np.ascontiguousarray(ds.queries, dtype="<f8").tobytes())
    w.raw(np.ascontiguousarray(ds.udf, dtype="<f8").tobytes())
    w.i64_array(ds.labels)
    atomic_write_bytes(path, w.finish_with_crc())


def load_udf_dataset(path) -> UdfDataset:
    body = check_magic_and_crc(Path(path).read_bytes(), UDF_MAGIC)
    r = BinReader(body)
    r.raw(4)
    version = r.u16()
    if version != UDF_VERSION:
        raise FormatError(f"unsupported cache version {version}")
    t = r.u64()
    n = r.u64()
    if t * n * 3 > (len(body) - r.off) // 8:
        raise FormatError(f"query block {t}x{n} exceeds file size")
    queries = np.frombuffer(r.raw(8 * t * n * 3), dtype="<f8").reshape(t, n, 3).copy()
    udf = np.frombuffer(r.raw(8 * t * n), dtype="<f8").reshape(t, n).copy()
    labels = r.i64_array()
    return UdfDataset(queries, udf, labels)


def parse_xyz(text: str) -> np.ndarray:
    """Whitespace-separated x y z rows; '#' starts a comment."""
    pts = []
    for ln, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        fields = line.split()
        if len(fields) != 3:
            raise FormatError(f"line {ln}: expected 3 coordinates, got {len(fields)}")
        try:
            pts.append([float(f) for f in fields])
        except ValueError as exc:
            raise FormatError(f"line {ln}: {exc}") from exc
    if not pts:
        raise FormatError("no points in file")
    return np.array(pts)


def load_xyz(path) -> np.ndarray:
    return parse_xyz(Path(path).read_text())
