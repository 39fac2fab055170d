"""Exhaustive reference solvers for testing the dynamic programs.

Nothing here takes shortcuts: every candidate partition or path is
enumerated and scored directly. Size guards are hard limits.
"""
from __future__ import annotations

from itertools import combinations

import numpy as np

from .core import Block, RelationalMatrix
from .csm import BlockPartition

MAX_PARTITION_FRAMES = 10
MAX_PARTITION_K = 5
MAX_ALIGNMENT_FRAMES = 12


def _direct_mean(values: np.ndarray, blk: Block) -> float:
    total = 0.0
    for m in range(blk.a, blk.x):
        for n in range(blk.b, blk.y):
            total += values[m, n]
    return total / blk.area


def brute_force_partition(M: RelationalMatrix, K: int) -> tuple[float, BlockPartition]:
    n1, n2 = M.shape
    if n1 > MAX_PARTITION_FRAMES or n2 > MAX_PARTITION_FRAMES or K > MAX_PARTITION_K:
        raise ValueError(f"brute force limited to T <= {MAX_PARTITION_FRAMES}, K <= {MAX_PARTITION_K}")
    if K < 1 or K > min(n1, n2):
        raise ValueError(f"K={K} infeasible for shape {M.shape}")

    best_score, best_ends = -np.inf, None
    # itertools yields cuts in lexicographic order, so strict '>' keeps the smallest on ties
    for cuts1 in combinations(range(1, n1), K - 1):
        for cuts2 in combinations(range(1, n2), K - 1):
            ends = list(zip(cuts1 + (n1,), cuts2 + (n2,)))
            score, a, b = 0.0, 0, 0
            for x, y in ends:
                score += _direct_mean(M.values, Block(a, b, x, y))
                a, b = x, y
            if score > best_score:
                best_score, best_ends = score, ends
    return best_score, BlockPartition.from_boundaries(M, best_ends)


def enumerate_alignment_paths(T: int, K: int):
    """Yield every monotone surjective step assignment of ``T`` frames to ``K`` steps.

    Paths are 0-based tuples starting at step 0 and ending at step ``K - 1``.
    """
    for switches in combinations(range(1, T), K - 1):
        path, step = [], 0
        cut = set(switches)
        for t in range(T):
            if t in cut:
                step += 1
            path.append(step)
        yield tuple(path)


def brute_force_alignment(W) -> float:
    """Total probability of all monotone surjective frame-to-step paths.

    ``W`` is either an ``AssignmentMatrix`` or a T x K probability grid.
    """
    probs = np.asarray(getattr(W, "probs", W), dtype=np.float64)
    T, K = probs.shape
    if T > MAX_ALIGNMENT_FRAMES:
        raise ValueError(f"brute force limited to T <= {MAX_ALIGNMENT_FRAMES}")
    if K < 1 or K > T:
        raise ValueError(f"need 1 <= K <= T, got T={T}, K={K}")
    total = 0.0
    for path in enumerate_alignment_paths(T, K):
        p = 1.0
        for t, k in enumerate(path):
            p *= probs[t, k]
        total += p
    return total
