"""Feature sequences, the relational matrix and summed-area block sums."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import softmax


@dataclass(frozen=True)
class FeatureSequence:
    """A length-T sequence of d-dimensional frame features.

    Stands in for the output of a frame encoder; rows are frames.
    """

    frames: np.ndarray

    def __post_init__(self):
        arr = np.array(self.frames, dtype=np.float64)
        if arr.ndim != 2:
            raise ValueError(f"frames must be a T x d grid, got array of shape {arr.shape}")
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ValueError(f"need T >= 1 and d >= 1, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("frames contain non-finite entries")
        arr.setflags(write=False)
        object.__setattr__(self, "frames", arr)

    @property
    def length(self) -> int:
        return self.frames.shape[0]

    @property
    def dim(self) -> int:
        return self.frames.shape[1]

    def __len__(self):
        return self.length


def summed_area_table(values: np.ndarray) -> np.ndarray:
    """Return the (n+1) x (m+1) table with ``sat[i, j] = values[:i, :j].sum()``."""
    values = np.asarray(values, dtype=np.float64)
    sat = np.zeros((values.shape[0] + 1, values.shape[1] + 1))
    sat[1:, 1:] = values.cumsum(axis=0).cumsum(axis=1)
    return sat


@dataclass(frozen=True)
class RelationalMatrix:
    values: np.ndarray
    row_normalized: bool = False
    sat: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        vals = np.array(self.values, dtype=np.float64)
        if vals.ndim != 2 or vals.size == 0:
            raise ValueError(f"relational matrix must be a non-empty 2-D grid, got shape {vals.shape}")
        if not np.all(np.isfinite(vals)):
            raise ValueError("relational matrix contains non-finite entries")
        if np.any(vals < 0):
            raise ValueError("relational matrix entries must be non-negative")
        if self.row_normalized and not np.allclose(vals.sum(axis=1), 1.0, rtol=0, atol=1e-9):
            raise ValueError("row_normalized is set but rows do not sum to 1")
        vals.setflags(write=False)
        sat = summed_area_table(vals)
        sat.setflags(write=False)
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "sat", sat)

    @classmethod
    def from_values(cls, values) -> "RelationalMatrix":
        """Wrap a user-supplied non-negative grid as-is (raw mode, no softmax)."""
        return cls(values, row_normalized=False)

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    def block_sum(self, a: int, b: int, x: int, y: int) -> float:
        s = self.sat
        return float(s[x, y] - s[a, y] - s[x, b] + s[a, b])


@dataclass(frozen=True)
class Block:
    """Half-open block ``[a, x) x [b, y)`` of a relational matrix.

    ``a``/``x`` index sequence-1 frames (rows), ``b``/``y`` sequence-2 frames.
    """

    a: int
    b: int
    x: int
    y: int

    def __post_init__(self):
        if not (0 <= self.a < self.x and 0 <= self.b < self.y):
            raise ValueError(f"empty or negative block {self.as_tuple()}")

    def as_tuple(self) -> tuple[int, int, int, int]:
        return (self.a, self.b, self.x, self.y)

    @property
    def area(self) -> int:
        return (self.x - self.a) * (self.y - self.b)


def compute_relational_matrix(F1: FeatureSequence, F2: FeatureSequence) -> RelationalMatrix:
    """Row-wise softmax of scaled dot products between the frames of two sequences.

    Entry (i, j) is the similarity of frame i of ``F1`` to frame j of ``F2``;
    each row is normalized over the frames of ``F2``.
    """
    if F1.dim != F2.dim:
        raise ValueError(f"feature dimension mismatch: {F1.dim} vs {F2.dim}")
    logits = F1.frames @ F2.frames.T / np.sqrt(F1.dim)
    return RelationalMatrix(softmax(logits, axis=1), row_normalized=True)


def block_consistency(M: RelationalMatrix, blk: Block) -> float:
    """Average of ``M`` over ``blk``, read off the summed-area table in O(1)."""
    n1, n2 = M.shape
    if blk.x > n1 or blk.y > n2:
        raise ValueError(f"block {blk.as_tuple()} exceeds matrix shape {M.shape}")
    return M.block_sum(blk.a, blk.b, blk.x, blk.y) / blk.area
