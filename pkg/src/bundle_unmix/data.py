"""Matrix and group-structure containers plus on-disk formats.

Matrices are plain ``float64`` numpy arrays (rows x cols, C order).  Two
file formats are supported:

* ``binary``: ``b"BMAT"``, u32 LE rows, u32 LE cols, then rows*cols
  float64 LE values in row-major order.
* ``csv``: one row per line, comma separated, no header, LF endings.
  Values are written with ``repr`` so they parse back to the same double.

Hyperspectral cubes are flattened in row-major pixel order: pixel
``(y, x)`` of an ``H x W`` image becomes column ``y * W + x``.
"""
from __future__ import annotations

import json
import math
import os
import struct
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

MAGIC = b"BMAT"
_HEADER = struct.Struct("<4sII")


class MatrixFormatError(ValueError):
    """Raised when a matrix file cannot be decoded."""


@dataclass(frozen=True)
class GroupStructure:
    """Partition of the ``r`` bundle columns into ``k`` consecutive groups."""

    sizes: tuple[int, ...]

    def __init__(self, sizes: Sequence[int]):
        sizes = tuple(int(s) for s in sizes)
        if len(sizes) < 1:
            raise ValueError("k >= 1 required")
        if any(s < 1 for s in sizes):
            raise ValueError(f"group sizes must be positive, got {list(sizes)}")
        object.__setattr__(self, "sizes", sizes)

    @property
    def k(self) -> int:
        return len(self.sizes)

    @property
    def r(self) -> int:
        return sum(self.sizes)

    @property
    def starts(self) -> np.ndarray:
        return np.concatenate(([0], np.cumsum(self.sizes)[:-1])).astype(int)

    def ranges(self) -> list[range]:
        out, start = [], 0
        for m in self.sizes:
            out.append(range(start, start + m))
            start += m
        return out

    def labels(self) -> np.ndarray:
        """Group index of every bundle column."""
        return np.repeat(np.arange(self.k), self.sizes)

    def summation_matrix(self) -> np.ndarray:
        """The k x r 0/1 matrix whose l-th row sums group l."""
        Z = np.zeros((self.k, self.r))
        for l, rg in enumerate(self.ranges()):
            Z[l, rg.start:rg.stop] = 1.0
        return Z

    def to_json(self) -> str:
        return json.dumps(list(self.sizes))

    @classmethod
    def from_json(cls, text: str) -> "GroupStructure":
        sizes = json.loads(text)
        if not isinstance(sizes, list) or not all(
            isinstance(s, int) and not isinstance(s, bool) for s in sizes
        ):
            raise ValueError("group file must be a JSON array of positive integers")
        return cls(sizes)


@dataclass(frozen=True)
class CubeShape:
    height: int
    width: int
    bands: int

    def __post_init__(self):
        for name in ("height", "width", "bands"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be >= 1")

    @property
    def n_pixels(self) -> int:
        return self.height * self.width

    def to_json(self) -> str:
        return json.dumps({"height": self.height, "width": self.width, "bands": self.bands})

    @classmethod
    def from_json(cls, text: str) -> "CubeShape":
        d = json.loads(text)
        return cls(int(d["height"]), int(d["width"]), int(d["bands"]))


def as_matrix(values) -> np.ndarray:
    m = np.array(values, dtype=np.float64, order="C")
    if m.ndim != 2 or m.shape[0] < 1 or m.shape[1] < 1:
        raise ValueError(f"expected a non-empty 2-D matrix, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValueError("matrix contains non-finite values")
    return m


def validate_groups(groups: GroupStructure, B: np.ndarray) -> None:
    if groups.r != B.shape[1]:
        raise ValueError(
            f"group sizes sum to {groups.r} but bundle matrix has {B.shape[1]} columns"
        )


def cube_to_matrix(cube: np.ndarray, shape: CubeShape) -> np.ndarray:
    """H x W x w cube -> w x (H*W) matrix, pixels in row-major order."""
    cube = np.asarray(cube, dtype=np.float64)
    expected = (shape.height, shape.width, shape.bands)
    if cube.shape != expected:
        raise ValueError(f"cube has shape {cube.shape}, expected {expected}")
    return np.ascontiguousarray(cube.reshape(shape.n_pixels, shape.bands).T)


def matrix_to_cube(X: np.ndarray, shape: CubeShape) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.shape != (shape.bands, shape.n_pixels):
        raise ValueError(
            f"matrix has shape {X.shape}, expected ({shape.bands}, {shape.n_pixels}) "
            f"for a {shape.height}x{shape.width} image"
        )
    return np.ascontiguousarray(X.T.reshape(shape.height, shape.width, shape.bands))


# ---------------------------------------------------------------- file I/O


def _format_from_path(path: Path, fmt: str | None) -> str:
    if fmt is not None:
        if fmt not in ("csv", "binary"):
            raise ValueError(f"unknown matrix format {fmt!r}")
        return fmt
    return "csv" if path.suffix.lower() == ".csv" else "binary"


def atomic_write(path: str | os.PathLike, data: bytes) -> None:
    """Write to a temp file in the target directory then rename over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def encode_binary(m: np.ndarray) -> bytes:
    m = as_matrix(m)
    rows, cols = m.shape
    return _HEADER.pack(MAGIC, rows, cols) + m.astype("<f8").tobytes(order="C")


def decode_binary(buf: bytes) -> np.ndarray:
    if len(buf) < _HEADER.size:
        raise MatrixFormatError(f"truncated header at byte offset {len(buf)}")
    magic, rows, cols = _HEADER.unpack_from(buf, 0)
    if magic != MAGIC:
        raise MatrixFormatError(f"bad magic {magic!r} at byte offset 0")
    if rows < 1 or cols < 1:
        raise MatrixFormatError(f"malformed header: {rows}x{cols} at byte offset 4")
    expected = _HEADER.size + 8 * rows * cols
    if len(buf) != expected:
        raise MatrixFormatError(
            f"dimension mismatch: header says {rows}x{cols} ({expected} bytes), "
            f"file ends at byte offset {len(buf)}"
        )
    m = np.frombuffer(buf, dtype="<f8", offset=_HEADER.size).reshape(rows, cols)
    bad = np.flatnonzero(~np.isfinite(m))
    if bad.size:
        raise MatrixFormatError(f"non-finite value at byte offset {_HEADER.size + 8 * bad[0]}")
    return m.astype(np.float64)


def encode_csv(m: np.ndarray) -> bytes:
    m = as_matrix(m)
    lines = [",".join(repr(float(v)) for v in row) for row in m]
    return ("\n".join(lines) + "\n").encode("ascii")


def decode_csv(text: str) -> np.ndarray:
    rows: list[list[float]] = []
    for lineno, line in enumerate(text.split("\n"), start=1):
        if line.endswith("\r"):
            line = line[:-1]
        if not line.strip():
            continue
        try:
            row = [float(tok) for tok in line.split(",")]
        except ValueError as exc:
            raise MatrixFormatError(f"line {lineno}: {exc}") from None
        if not all(math.isfinite(v) for v in row):
            raise MatrixFormatError(f"line {lineno}: non-finite value")
        if rows and len(row) != len(rows[0]):
            raise MatrixFormatError(
                f"line {lineno}: ragged row ({len(row)} values, expected {len(rows[0])})"
            )
        rows.append(row)
    if not rows:
        raise MatrixFormatError("line 1: empty matrix")
    return np.array(rows, dtype=np.float64)


def save_matrix(m: np.ndarray, path: str | os.PathLike, fmt: str | None = None) -> None:
    path = Path(path)
    fmt = _format_from_path(path, fmt)
    atomic_write(path, encode_csv(m) if fmt == "csv" else encode_binary(m))


def load_matrix(path: str | os.PathLike, fmt: str | None = None) -> np.ndarray:
    path = Path(path)
    fmt = _format_from_path(path, fmt)
    if fmt == "csv":
        return decode_csv(path.read_text(encoding="ascii"))
    return decode_binary(path.read_bytes())


def save_groups(groups: GroupStructure, path: str | os.PathLike) -> None:
    atomic_write(path, groups.to_json().encode())


def load_groups(path: str | os.PathLike) -> GroupStructure:
    return GroupStructure.from_json(Path(path).read_text())


def save_cube_shape(shape: CubeShape, path: str | os.PathLike) -> None:
    atomic_write(path, shape.to_json().encode())


def load_cube_shape(path: str | os.PathLike) -> CubeShape:
    return CubeShape.from_json(Path(path).read_text())
