"""Synthetic procedures, verification pairs and the verification benchmark.

A procedure is an ordered list of step prototypes. A sequence is drawn by
sampling step durations and emitting each frame as its step's prototype plus
Gaussian noise. Two sequences form a positive pair when they run the same
steps in the same order.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .core import FeatureSequence
from .csm import collaborative_step_mining
from .fsa import alignment_distance
from .metrics import verification_auc

NEGATIVE_MODES = ("step_permutation", "different_procedure")
METHODS = ("cpa", "mean_feature_l2")


@dataclass(frozen=True)
class ProcedureSpec:
    step_prototypes: np.ndarray
    min_duration: int
    max_duration: int
    noise_sigma: float
    total_frames: int
    step_ids: tuple[int, ...] | None = None
    procedure_id: int = 0

    def __post_init__(self):
        protos = np.array(self.step_prototypes, dtype=np.float64)
        if protos.ndim != 2 or protos.shape[0] < 1:
            raise ValueError("step_prototypes must be a non-empty K x d grid")
        if len({p.tobytes() for p in protos}) != protos.shape[0]:
            raise ValueError("step prototypes must be pairwise distinct")
        if self.min_duration < 1 or self.max_duration < self.min_duration:
            raise ValueError(f"bad duration range [{self.min_duration}, {self.max_duration}]")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be non-negative")
        protos.setflags(write=False)
        object.__setattr__(self, "step_prototypes", protos)
        ids = tuple(range(protos.shape[0])) if self.step_ids is None else tuple(int(i) for i in self.step_ids)
        if len(ids) != protos.shape[0]:
            raise ValueError("need one step id per prototype")
        object.__setattr__(self, "step_ids", ids)

    @property
    def n_steps(self) -> int:
        return self.step_prototypes.shape[0]

    @property
    def dim(self) -> int:
        return self.step_prototypes.shape[1]

    def feasible(self) -> bool:
        k = self.n_steps
        return k * self.min_duration <= self.total_frames <= k * self.max_duration

    def permuted(self, i: int, j: int) -> "ProcedureSpec":
        """Copy with steps ``i`` and ``j`` swapped."""
        order = list(range(self.n_steps))
        order[i], order[j] = order[j], order[i]
        return replace(self, step_prototypes=self.step_prototypes[order],
                       step_ids=tuple(self.step_ids[o] for o in order))


@dataclass(frozen=True)
class SequenceRecord:
    features: FeatureSequence
    boundaries: tuple[tuple[int, int], ...]
    step_ids: tuple[int, ...]
    procedure_id: int


@dataclass(frozen=True)
class PairEntry:
    a: str
    b: str
    label: bool


@dataclass
class PairManifest:
    entries: list[PairEntry] = field(default_factory=list)
    sequences: dict[str, SequenceRecord] = field(default_factory=dict)

    def __len__(self):
        return len(self.entries)

    @property
    def labels(self) -> list[bool]:
        return [e.label for e in self.entries]


@dataclass
class VerificationReport:
    distances: list[float]
    labels: list[bool]
    auc: float
    method: str
    k: int | None = None

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "k": self.k,
            "auc": self.auc,
            "pairs": [{"d": d, "label": "positive" if y else "negative"}
                      for d, y in zip(self.distances, self.labels)],
        }


def _duration_counts(k: int, total: int, lo: int, hi: int) -> np.ndarray:
    # counts[n, r]: ways to split r frames into n steps with durations in [lo, hi]
    counts = np.zeros((k + 1, total + 1), dtype=object)
    counts[0, 0] = 1
    for n in range(1, k + 1):
        for r in range(total + 1):
            counts[n, r] = sum(counts[n - 1, r - d] for d in range(lo, min(hi, r) + 1))
    return counts


def sample_durations(k: int, total: int, lo: int, hi: int, rng: np.random.Generator) -> list[int]:
    """Draw a duration vector uniformly from all admissible compositions of ``total``."""
    counts = _duration_counts(k, total, lo, hi)
    if counts[k, total] == 0:
        raise ValueError(f"cannot split {total} frames into {k} steps of {lo}..{hi} frames")
    out, remaining = [], total
    for n in range(k, 0, -1):
        options = list(range(lo, min(hi, remaining) + 1))
        weights = np.array([float(counts[n - 1, remaining - d]) for d in options])
        d = options[rng.choice(len(options), p=weights / weights.sum())]
        out.append(d)
        remaining -= d
    return out


def generate_procedure(spec: ProcedureSpec, seed: int):
    """Sample one sequence of ``spec``; returns ``(features, boundaries)``."""
    if not spec.feasible():
        raise ValueError(
            f"infeasible durations: {spec.n_steps} steps of {spec.min_duration}..{spec.max_duration} "
            f"frames cannot fill T={spec.total_frames}")
    rng = np.random.default_rng(seed)
    durations = sample_durations(spec.n_steps, spec.total_frames, spec.min_duration, spec.max_duration, rng)
    frames = np.repeat(spec.step_prototypes, durations, axis=0)
    if spec.noise_sigma > 0:
        frames = frames + rng.normal(0.0, spec.noise_sigma, size=frames.shape)
    ends = np.cumsum(durations)
    boundaries = tuple((int(e - d), int(e)) for d, e in zip(durations, ends))
    return FeatureSequence(frames), boundaries


# Equal step widths: with row-normalized similarities, block averages scale with
# 1/width, so unequal widths let a narrow step outscore the true partition when split.
BENCHMARK = dict(n_procedures=8, n_steps=4, dim=16, frames=16, noise_sigma=0.1,
                 min_duration=4, max_duration=4, prototype_scale=1.5)


def random_procedures(n_procedures: int = 8, n_steps: int = 4, dim: int = 16, frames: int = 16,
                      noise_sigma: float = 0.1, min_duration: int = 2, max_duration: int = 6,
                      prototype_scale: float = 1.0, seed: int = 0) -> list[ProcedureSpec]:
    """Independent procedures whose prototype entries are i.i.d. ``N(0, prototype_scale**2)``."""
    rng = np.random.default_rng(seed)
    specs = []
    for p in range(n_procedures):
        protos = rng.normal(0.0, prototype_scale, size=(n_steps, dim))
        specs.append(ProcedureSpec(protos, min_duration, max_duration, noise_sigma, frames,
                                   step_ids=tuple(p * n_steps + s for s in range(n_steps)),
                                   procedure_id=p))
    return specs


def _record(spec: ProcedureSpec, seed: int) -> SequenceRecord:
    features, bounds = generate_procedure(spec, seed)
    return SequenceRecord(features, bounds, spec.step_ids, spec.procedure_id)


def generate_pairs(specs, n_pos: int, n_neg: int, negative_mode: str = "step_permutation",
                   seed: int = 0) -> PairManifest:
    """Build a labelled pair set from ``specs``.

    Positives are two fresh draws of one procedure. ``step_permutation``
    negatives pair a draw of a procedure with a draw of the same procedure
    after swapping two non-adjacent steps; ``different_procedure`` negatives
    pair draws of two distinct procedures.
    """
    specs = list(specs)
    if negative_mode not in NEGATIVE_MODES:
        raise ValueError(f"unknown negative mode {negative_mode!r}; expected one of {NEGATIVE_MODES}")
    if n_neg > 0 and negative_mode == "different_procedure" and len(specs) < 2:
        raise ValueError("different_procedure negatives need at least 2 procedures")
    if n_neg > 0 and negative_mode == "step_permutation" and any(s.n_steps < 3 for s in specs):
        raise ValueError("step_permutation negatives need procedures with at least 3 steps")
    if (n_pos or n_neg) and not specs:
        raise ValueError("no procedures given")
    for s in specs:
        if not s.feasible():
            raise ValueError(
                f"infeasible durations for procedure {s.procedure_id}: {s.n_steps} steps of "
                f"{s.min_duration}..{s.max_duration} frames cannot fill T={s.total_frames}")

    rng = np.random.default_rng(seed)
    manifest = PairManifest()

    def add(spec):
        ref = f"seq{len(manifest.sequences):04d}"
        manifest.sequences[ref] = _record(spec, int(rng.integers(2**32)))
        return ref

    for _ in range(n_pos):
        spec = specs[rng.integers(len(specs))]
        manifest.entries.append(PairEntry(add(spec), add(spec), True))
    for _ in range(n_neg):
        if negative_mode == "step_permutation":
            spec = specs[rng.integers(len(specs))]
            swaps = [(i, j) for i in range(spec.n_steps) for j in range(i + 2, spec.n_steps)]
            i, j = swaps[rng.integers(len(swaps))]
            other = spec.permuted(i, j)
        else:
            p, q = rng.choice(len(specs), size=2, replace=False)
            spec, other = specs[p], specs[q]
        manifest.entries.append(PairEntry(add(spec), add(other), False))
    return manifest


def benchmark_manifest(seed: int = 0, n_pos: int = 100, n_neg: int = 100,
                       negative_mode: str = "step_permutation", **procedure_kw) -> PairManifest:
    """The default verification benchmark (see ``BENCHMARK``); keywords override it."""
    proc_seed, pair_seed = np.random.SeedSequence(seed).spawn(2)
    params = {**BENCHMARK, **procedure_kw}
    specs = random_procedures(seed=int(proc_seed.generate_state(1)[0]), **params)
    return generate_pairs(specs, n_pos, n_neg, negative_mode, seed=int(pair_seed.generate_state(1)[0]))


def mean_feature_l2(F1: FeatureSequence, F2: FeatureSequence) -> float:
    """L2 distance between the unit-normalized time averages of two sequences."""
    m1, m2 = F1.frames.mean(axis=0), F2.frames.mean(axis=0)
    m1 = m1 / max(np.linalg.norm(m1), 1e-12)
    m2 = m2 / max(np.linalg.norm(m2), 1e-12)
    return float(np.linalg.norm(m1 - m2))


def cpa_distance(F1: FeatureSequence, F2: FeatureSequence, K: int, policy: str = "midpoint",
                 seed: int = 0, boundary: str = "semantic") -> float:
    _, S1, S2 = collaborative_step_mining(F1, F2, K, policy, seed)
    return alignment_distance(F1, F2, S1, S2, boundary).d_align


def pair_distances(manifest: PairManifest, method: str = "cpa", K: int = 4, policy: str = "midpoint",
                   seed: int = 0, boundary: str = "semantic", workers: int = 1, features=None) -> list[float]:
    """Distance of every manifest pair, in manifest order.

    ``features`` optionally maps a sequence ref to replacement features (used
    to score encoded sequences).
    """
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}; expected one of {METHODS}")
    seqs = features if features is not None else {r: rec.features for r, rec in manifest.sequences.items()}
    pair_seeds = np.random.SeedSequence(seed).generate_state(max(len(manifest), 1))

    def one(idx):
        e = manifest.entries[idx]
        F1, F2 = seqs[e.a], seqs[e.b]
        if method == "mean_feature_l2":
            return mean_feature_l2(F1, F2)
        return cpa_distance(F1, F2, K, policy, int(pair_seeds[idx]), boundary)

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            return list(pool.map(one, range(len(manifest))))
    return [one(i) for i in range(len(manifest))]


def evaluate_verification(manifest: PairManifest, method: str = "cpa", K: int = 4, seed: int = 0,
                          policy: str = "midpoint", boundary: str = "semantic", workers: int = 1,
                          features=None) -> VerificationReport:
    labels = manifest.labels
    if all(labels) or not any(labels):
        raise ValueError("AUC undefined: manifest needs both positive and negative pairs")
    d = pair_distances(manifest, method, K, policy, seed, boundary, workers, features)
    return VerificationReport(d, labels, verification_auc(d, labels), method,
                              K if method == "cpa" else None)
