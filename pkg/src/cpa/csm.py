"""Collaborative step mining.

Partitions a relational matrix into ``K`` consecutive blocks along its
diagonal so that the summed block averages are maximal; the block edges give
a simultaneous step segmentation of both sequences.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import Block, FeatureSequence, RelationalMatrix, block_consistency, compute_relational_matrix

MAX_FRAMES = 256
POLICIES = ("midpoint", "seeded_random", "mean")


@dataclass(frozen=True)
class BlockPartition:
    blocks: tuple[Block, ...]
    score: float

    def __post_init__(self):
        blocks = tuple(self.blocks)
        if not blocks:
            raise ValueError("a partition needs at least one block")
        if blocks[0].a != 0 or blocks[0].b != 0:
            raise ValueError("first block must start at (0, 0)")
        for prev, nxt in zip(blocks, blocks[1:]):
            if nxt.a != prev.x or nxt.b != prev.y:
                raise ValueError(f"blocks {prev.as_tuple()} and {nxt.as_tuple()} do not tile")
        object.__setattr__(self, "blocks", blocks)

    @classmethod
    def from_boundaries(cls, M: RelationalMatrix, boundaries) -> "BlockPartition":
        """Build a partition from its end points ``[(x_1, y_1), ..., (x_K, y_K)]``."""
        blocks = []
        a = b = 0
        for x, y in boundaries:
            blocks.append(Block(a, b, int(x), int(y)))
            a, b = int(x), int(y)
        if (a, b) != M.shape:
            raise ValueError(f"boundaries end at {(a, b)}, matrix shape is {M.shape}")
        return cls(tuple(blocks), sum(block_consistency(M, blk) for blk in blocks))

    @property
    def k(self) -> int:
        return len(self.blocks)

    @property
    def boundaries(self) -> list[tuple[int, int]]:
        return [(blk.x, blk.y) for blk in self.blocks]

    def intervals(self, side: int) -> list[tuple[int, int]]:
        """Step intervals ``[start, end)`` of sequence ``side`` (1 or 2)."""
        if side == 1:
            return [(blk.a, blk.x) for blk in self.blocks]
        if side == 2:
            return [(blk.b, blk.y) for blk in self.blocks]
        raise ValueError(f"side must be 1 or 2, got {side}")

    def to_dict(self) -> dict:
        return {"k": self.k, "boundaries": [list(p) for p in self.boundaries], "score": self.score}


@dataclass(frozen=True)
class CsmTables:
    """DP tables of the step-mining recursion.

    ``d_csm[i, j, k - 1]`` is the best summed consistency of splitting the
    leading ``i`` x ``j`` sub-matrix into ``k`` blocks (``-inf`` when
    infeasible). ``d_id[i, j, k - 1]`` holds the start corner ``(a, b)`` of the
    last block of that optimum, or ``(-1, -1)``.
    """

    d_csm: np.ndarray
    d_id: np.ndarray

    @property
    def k(self) -> int:
        return self.d_csm.shape[2]

    def best(self) -> float:
        n1, n2 = self.d_csm.shape[0] - 1, self.d_csm.shape[1] - 1
        return float(self.d_csm[n1, n2, -1])


@dataclass(frozen=True)
class StepFeatures:
    steps: np.ndarray
    source: tuple[int, ...] | None
    policy: str
    intervals: tuple[tuple[int, int], ...]

    @property
    def k(self) -> int:
        return self.steps.shape[0]

    @property
    def dim(self) -> int:
        return self.steps.shape[1]

    def pooling_matrix(self, length: int) -> np.ndarray:
        """K x T matrix ``P`` with ``steps == P @ frames``."""
        P = np.zeros((self.k, length))
        for k, (start, end) in enumerate(self.intervals):
            if self.source is None:
                P[k, start:end] = 1.0 / (end - start)
            else:
                P[k, self.source[k]] = 1.0
        return P


def _check_k(K: int, n1: int, n2: int):
    if not isinstance(K, (int, np.integer)) or K < 1 or K > min(n1, n2):
        raise ValueError(f"K must satisfy 1 <= K <= min(T1, T2) = {min(n1, n2)}, got {K}")


def dynamic_procedure_matching(M: RelationalMatrix, K: int) -> CsmTables:
    """Fill the step-mining DP tables for ``K`` blocks.

    Each block covers at least one frame of both sequences. Ties in the
    predecessor choice go to the lexicographically smallest ``(a, b)``.
    """
    n1, n2 = M.shape
    _check_k(K, n1, n2)
    sat = M.sat

    d_csm = np.full((n1 + 1, n2 + 1, K), -np.inf)
    d_id = np.full((n1 + 1, n2 + 1, K, 2), -1, dtype=np.int64)
    d_csm[1:, 1:, 0] = sat[1:, 1:] / np.outer(np.arange(1, n1 + 1), np.arange(1, n2 + 1))
    d_id[1:, 1:, 0] = 0
    if K == 1:
        return CsmTables(d_csm, d_id)

    cols = np.arange(n2 + 1)
    # b_lt_j[b, j] marks predecessor columns b strictly before end column j
    b_lt_j = cols[:, None] < cols[None, :]
    width = np.where(b_lt_j, cols[None, :] - cols[:, None], 1)
    for i in range(2, n1 + 1):
        a = np.arange(i)
        # block sums of [a, i) x [b, j) for every (a, b, j), b < j
        sums = (sat[i][None, None, :] - sat[:i][:, None, :]
                - sat[i][None, :, None] + sat[:i][:, :, None])
        area = (i - a)[:, None, None] * width[None, :, :]
        cons = np.where(b_lt_j[None], sums / area, -np.inf)
        for k in range(1, min(K, i)):
            cand = d_csm[:i, :, k - 1][:, :, None] + cons
            flat = cand.reshape(i * (n2 + 1), n2 + 1)
            best = flat.argmax(axis=0)
            vals = flat[best, cols]
            ok = np.isfinite(vals)
            d_csm[i, ok, k] = vals[ok]
            d_id[i, ok, k, 0] = best[ok] // (n2 + 1)
            d_id[i, ok, k, 1] = best[ok] % (n2 + 1)
    return CsmTables(d_csm, d_id)


def backtrace(tables: CsmTables, K: int, M: RelationalMatrix | None = None) -> BlockPartition:
    """Recover the optimal blocks by walking the index table back from the corner.

    When ``M`` is given the partition score is recomputed from block averages,
    otherwise it is taken from the DP table.
    """
    if K != tables.k:
        raise ValueError(f"tables were built for K={tables.k}, asked to backtrace K={K}")
    n1, n2 = tables.d_csm.shape[0] - 1, tables.d_csm.shape[1] - 1
    if not np.isfinite(tables.d_csm[n1, n2, K - 1]):
        raise ValueError("end state is unreachable")
    i, j = n1, n2
    ends = []
    for k in range(K, 0, -1):
        a, b = (int(v) for v in tables.d_id[i, j, k - 1])
        if not (0 <= a < i and 0 <= b < j):
            raise ValueError(f"corrupt index table at {(i, j, k)}: predecessor {(a, b)}")
        if k == 1 and (a, b) != (0, 0):
            raise ValueError(f"corrupt index table: first block starts at {(a, b)}")
        ends.append((i, j))
        i, j = a, b
    ends.reverse()
    if M is not None:
        return BlockPartition.from_boundaries(M, ends)
    blocks, a, b = [], 0, 0
    for x, y in ends:
        blocks.append(Block(a, b, x, y))
        a, b = x, y
    return BlockPartition(tuple(blocks), float(tables.d_csm[n1, n2, K - 1]))


def sample_step_features(F: FeatureSequence, partition: BlockPartition, side: int,
                         policy: str = "midpoint", seed: int = 0) -> StepFeatures:
    """Pick one representative feature per step of ``F``.

    ``midpoint`` takes the middle frame (lower middle for even lengths),
    ``seeded_random`` a uniform frame drawn from ``np.random.default_rng(seed)``,
    ``mean`` the average of the step's frames.
    """
    intervals = partition.intervals(side)
    if intervals[-1][1] != F.length:
        raise ValueError(f"partition side {side} covers {intervals[-1][1]} frames, sequence has {F.length}")
    if policy == "midpoint":
        source = tuple((s + e - 1) // 2 for s, e in intervals)
    elif policy == "seeded_random":
        rng = np.random.default_rng(seed)
        source = tuple(int(rng.integers(s, e)) for s, e in intervals)
    elif policy == "mean":
        steps = np.stack([F.frames[s:e].mean(axis=0) for s, e in intervals])
        return StepFeatures(steps, None, policy, tuple(intervals))
    else:
        raise ValueError(f"unknown sampling policy {policy!r}; expected one of {POLICIES}")
    return StepFeatures(F.frames[list(source)].copy(), source, policy, tuple(intervals))


def collaborative_step_mining(F1: FeatureSequence, F2: FeatureSequence, K: int,
                              policy: str = "midpoint", seed: int = 0):
    """Segment both sequences jointly into ``K`` steps and sample step features.

    Returns ``(partition, steps_1, steps_2)``. With ``seeded_random`` the two
    sides draw from independent streams spawned from ``seed``.
    """
    M = compute_relational_matrix(F1, F2)
    partition = backtrace(dynamic_procedure_matching(M, K), K, M)
    seed1, seed2 = _side_seeds(seed)
    S1 = sample_step_features(F1, partition, 1, policy, seed1)
    S2 = sample_step_features(F2, partition, 2, policy, seed2)
    return partition, S1, S2


def _side_seeds(seed: int) -> tuple[int, int]:
    children = np.random.SeedSequence(seed).spawn(2)
    return tuple(int(c.generate_state(1)[0]) for c in children)
