"""
File formats
============

Readers and writers for the on-disk interfaces:

- Point clouds: CSV (one point per row, optional non-numeric header line)
  or a binary format: magic bytes ``PLAP``, u32 version (=1), u64 n, u64 d,
  then n*d little-endian float64 values row-major.
- Graph cache: raw CSR dump in little-endian order: u64 n, u64 nnz,
  (n+1) u64 row offsets, nnz u64 column indices, nnz f64 weights, f64 sigma.
  A trailing u64 stores the ambient dimension (2^64-1 when unknown).
- Real-valued labels: CSV ``vertex_index,label_value``.
- Class labels: CSV ``vertex_index,class_id``.
- Predictions: CSV ``vertex_index,predicted_class,score``.
- IDX image/label files (the handwritten-digit dataset family): big-endian
  magic 0x00000803 (images) / 0x00000801 (labels); images are flattened to
  float64 pixel rows without rescaling.

All writers produce byte-identical output for identical inputs; floats are
written with repr-round-trip precision.
"""

import struct

import numpy as np
from scipy import sparse

from .graphs import WeightedGraph

__all__ = [
    "write_points_csv", "read_points_csv",
    "write_points_binary", "read_points_binary",
    "write_graph_cache", "read_graph_cache",
    "write_value_labels", "read_value_labels",
    "write_class_labels", "read_class_labels",
    "write_predictions",
    "read_idx_images", "read_idx_labels",
]

_POINT_MAGIC = b"PLAP"
_NO_DIM = 2**64 - 1


def write_points_csv(path, points, header=None):
    points = np.asarray(points, dtype=np.float64)
    with open(path, "w") as fh:
        if header:
            fh.write(",".join(header) + "\n")
        for row in points:
            fh.write(",".join(repr(v) for v in row) + "\n")


def read_points_csv(path):
    with open(path) as fh:
        first = fh.readline()
        try:
            np.array([float(tok) for tok in first.strip().split(",")])
            skip = 0
        except ValueError:
            skip = 1
    pts = np.loadtxt(path, delimiter=",", skiprows=skip, ndmin=2, dtype=np.float64)
    return pts


def write_points_binary(path, points):
    points = np.ascontiguousarray(points, dtype=np.float64)
    n, d = points.shape
    with open(path, "wb") as fh:
        fh.write(_POINT_MAGIC)
        fh.write(struct.pack("<I", 1))
        fh.write(struct.pack("<QQ", n, d))
        fh.write(points.astype("<f8").tobytes())


def read_points_binary(path):
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != _POINT_MAGIC:
            raise ValueError(f"bad magic {magic!r} in point file {path}")
        (version,) = struct.unpack("<I", fh.read(4))
        if version != 1:
            raise ValueError(f"unsupported point file version {version}")
        n, d = struct.unpack("<QQ", fh.read(16))
        data = np.frombuffer(fh.read(8 * n * d), dtype="<f8")
        if data.size != n * d:
            raise ValueError("truncated point file")
    return data.reshape(n, d).copy()


def write_graph_cache(path, graph):
    W = graph.W
    with open(path, "wb") as fh:
        fh.write(struct.pack("<QQ", W.shape[0], W.nnz))
        fh.write(W.indptr.astype("<u8").tobytes())
        fh.write(W.indices.astype("<u8").tobytes())
        fh.write(W.data.astype("<f8").tobytes())
        fh.write(struct.pack("<d", graph.sigma))
        fh.write(struct.pack("<Q", _NO_DIM if graph.dim is None else graph.dim))


def read_graph_cache(path):
    with open(path, "rb") as fh:
        n, nnz = struct.unpack("<QQ", fh.read(16))
        indptr = np.frombuffer(fh.read(8 * (n + 1)), dtype="<u8").astype(np.int64)
        indices = np.frombuffer(fh.read(8 * nnz), dtype="<u8").astype(np.int64)
        data = np.frombuffer(fh.read(8 * nnz), dtype="<f8").copy()
        (sigma,) = struct.unpack("<d", fh.read(8))
        tail = fh.read(8)
        dim = None
        if tail:
            (raw,) = struct.unpack("<Q", tail)
            dim = None if raw == _NO_DIM else int(raw)
    W = sparse.csr_matrix((data, indices, indptr), shape=(n, n))
    return WeightedGraph(W, sigma=sigma, dim=dim)


def write_value_labels(path, indices, values):
    with open(path, "w") as fh:
        fh.write("vertex_index,label_value\n")
        for i, v in zip(indices, values):
            fh.write(f"{int(i)},{repr(float(v))}\n")


def read_value_labels(path):
    raw = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return raw[:, 0].astype(np.int64), raw[:, 1]


def write_class_labels(path, indices, classes):
    with open(path, "w") as fh:
        fh.write("vertex_index,class_id\n")
        for i, c in zip(indices, classes):
            fh.write(f"{int(i)},{int(c)}\n")


def read_class_labels(path):
    raw = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return raw[:, 0].astype(np.int64), raw[:, 1].astype(np.int64)


def write_predictions(path, predicted, scores):
    """Predictions CSV; ``score`` is the winning class score per vertex."""
    with open(path, "w") as fh:
        fh.write("vertex_index,predicted_class,score\n")
        for i, (c, s) in enumerate(zip(predicted, scores)):
            fh.write(f"{i},{int(c)},{repr(float(s))}\n")


def read_idx_images(path):
    """Read an IDX image file into an (n, rows*cols) float64 point cloud."""
    with open(path, "rb") as fh:
        (magic,) = struct.unpack(">I", fh.read(4))
        if magic != 0x00000803:
            raise ValueError(f"bad IDX image magic 0x{magic:08x}")
        count, rows, cols = struct.unpack(">III", fh.read(12))
        data = np.frombuffer(fh.read(count * rows * cols), dtype=np.uint8)
        if data.size != count * rows * cols:
            raise ValueError("truncated IDX image file")
    return data.reshape(count, rows * cols).astype(np.float64)


def read_idx_labels(path):
    with open(path, "rb") as fh:
        (magic,) = struct.unpack(">I", fh.read(4))
        if magic != 0x00000801:
            raise ValueError(f"bad IDX label magic 0x{magic:08x}")
        (count,) = struct.unpack(">I", fh.read(4))
        data = np.frombuffer(fh.read(count), dtype=np.uint8)
        if data.size != count:
            raise ValueError("truncated IDX label file")
    return data.astype(np.int64)
