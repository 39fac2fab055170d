"""Training losses and a small trainable linear encoder.

The encoder maps fixed per-frame features to a lower-dimensional space and is
trained with plain full-batch gradient descent on positive pairs. Gradients
flow through the alignment analytically (forward-backward posteriors) and
through step mining with the mined partition held fixed for each update.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.special import log_softmax, softmax

from .core import FeatureSequence, compute_relational_matrix
from .csm import collaborative_step_mining, dynamic_procedure_matching
from .fsa import AssignmentMatrix, alignment_distance, alignment_gradient, alignment_log_probability

log = logging.getLogger(__name__)

TASK_MODES = ("none", "centroid")


@dataclass(frozen=True)
class LossReport:
    l_step: float
    l_align: float
    l_task: float
    total: float

    @classmethod
    def combine(cls, l_step: float, l_align: float, l_task: float = 0.0) -> "LossReport":
        return cls(l_step, l_align, l_task, l_task + l_step + l_align)


def step_loss(F1: FeatureSequence, F2: FeatureSequence, K: int) -> float:
    """Negative optimal summed block consistency of the pair."""
    M = compute_relational_matrix(F1, F2)
    return -dynamic_procedure_matching(M, K).best()


def align_loss(F1, F2, S1, S2, boundary: str = "semantic") -> float:
    return alignment_distance(F1, F2, S1, S2, boundary).d_align


def task_loss_mse(pred: float, target: float) -> float:
    return float((pred - target) ** 2)


def task_loss_mse_grad(pred: float, target: float) -> float:
    return 2.0 * (pred - target)


def task_loss_ce(logits, class_index: int) -> float:
    logits = np.asarray(logits, dtype=np.float64)
    if not 0 <= class_index < logits.shape[0]:
        raise IndexError(f"class index {class_index} out of range for {logits.shape[0]} classes")
    return float(-log_softmax(logits)[class_index])


def pair_losses(F1: FeatureSequence, F2: FeatureSequence, K: int, policy: str = "midpoint", seed: int = 0,
                boundary: str = "semantic", l_task: float = 0.0) -> LossReport:
    partition, S1, S2 = collaborative_step_mining(F1, F2, K, policy, seed)
    return LossReport.combine(-partition.score, align_loss(F1, F2, S1, S2, boundary), l_task)


@dataclass
class LinearEncoder:
    weight: np.ndarray

    def __post_init__(self):
        self.weight = np.array(self.weight, dtype=np.float64)
        if self.weight.ndim != 2 or not np.all(np.isfinite(self.weight)):
            raise ValueError("encoder weight must be a finite d_in x d_out matrix")

    @classmethod
    def random(cls, d_in: int, d_out: int, seed: int = 0) -> "LinearEncoder":
        rng = np.random.default_rng(seed)
        return cls(rng.normal(0.0, 1.0 / np.sqrt(d_in), size=(d_in, d_out)))

    @property
    def d_out(self) -> int:
        return self.weight.shape[1]

    def encode(self, F: FeatureSequence) -> FeatureSequence:
        return FeatureSequence(F.frames @ self.weight)


@dataclass(frozen=True)
class FrozenStructure:
    """Mined blocks and step pooling of one pair, held fixed during an update."""

    blocks: tuple[tuple[int, int, int, int], ...]
    pool1: np.ndarray
    pool2: np.ndarray


def freeze_structure(G1: FeatureSequence, G2: FeatureSequence, K: int, policy: str = "midpoint",
                     seed: int = 0) -> FrozenStructure:
    partition, S1, S2 = collaborative_step_mining(G1, G2, K, policy, seed)
    return FrozenStructure(tuple(b.as_tuple() for b in partition.blocks),
                           S1.pooling_matrix(G1.length), S2.pooling_matrix(G2.length))


def _step_term(G1, G2, blocks, scale):
    logits = G1 @ G2.T * scale
    M = softmax(logits, axis=1)
    dM = np.zeros_like(M)
    loss = 0.0
    for a, b, x, y in blocks:
        area = (x - a) * (y - b)
        loss -= M[a:x, b:y].sum() / area
        dM[a:x, b:y] = -1.0 / area
    dlogits = M * (dM - (dM * M).sum(axis=1, keepdims=True)) * scale
    return loss, dlogits @ G2, dlogits.T @ G1


def _align_term(G, S, boundary, scale):
    """``-log P(S | G)`` and its gradients with respect to ``G`` and ``S``."""
    W = AssignmentMatrix.from_logits(G @ S.T * scale)
    loss = -alignment_log_probability(W, boundary).log_prob
    dlogits = alignment_gradient(W, boundary) * scale
    return loss, dlogits @ S, dlogits.T @ G


def pair_objective(weight: np.ndarray, X1: np.ndarray, X2: np.ndarray, frozen: FrozenStructure,
                   boundary: str = "semantic", loss_weights=(1.0, 1.0)):
    """Step and align losses of one pair under ``frozen``, plus the weight gradient.

    Returns ``(l_step, l_align, grad)`` where ``grad`` is the gradient of
    ``w_step * l_step + w_align * l_align``.
    """
    w_step, w_align = loss_weights
    G1, G2 = X1 @ weight, X2 @ weight
    scale = 1.0 / np.sqrt(weight.shape[1])

    l_step, dG1, dG2 = _step_term(G1, G2, frozen.blocks, scale)
    dG1, dG2 = w_step * dG1, w_step * dG2

    S1, S2 = frozen.pool1 @ G1, frozen.pool2 @ G2
    l12, dG1_a, dS2 = _align_term(G1, S2, boundary, scale)
    l21, dG2_a, dS1 = _align_term(G2, S1, boundary, scale)
    half = 0.5 * w_align
    dG1 = dG1 + half * (dG1_a + frozen.pool1.T @ dS1)
    dG2 = dG2 + half * (dG2_a + frozen.pool2.T @ dS2)
    return l_step, 0.5 * (l12 + l21), X1.T @ dG1 + X2.T @ dG2


def centroid_task(weight: np.ndarray, X: np.ndarray, label: int, centroids: np.ndarray):
    """Cross-entropy of a nearest-centroid classifier on the time-averaged embedding.

    ``centroids`` are treated as constants. Returns ``(loss, grad)``.
    """
    scale = 1.0 / np.sqrt(weight.shape[1])
    emb = (X @ weight).mean(axis=0)
    logits = centroids @ emb * scale
    loss = task_loss_ce(logits, label)
    dlogits = softmax(logits)
    dlogits[label] -= 1.0
    demb = centroids.T @ dlogits * scale
    return loss, np.outer(X.mean(axis=0), demb)


class TrainingDiverged(RuntimeError):
    def __init__(self, epoch: int, curve: list):
        super().__init__(f"non-finite loss at epoch {epoch}")
        self.epoch = epoch
        self.curve = curve


@dataclass
class TrainingResult:
    encoder: LinearEncoder
    curve: list[LossReport] = field(default_factory=list)

    @property
    def totals(self) -> list[float]:
        return [r.total for r in self.curve]


def train_linear_encoder(manifest, K: int, epochs: int = 10, learning_rate: float = 0.05, seed: int = 0,
                         d_out: int = 8, policy: str = "midpoint", boundary: str = "semantic",
                         task: str = "none", loss_weights=(1.0, 1.0, 1.0)) -> TrainingResult:
    """Fit a linear encoder on the positive pairs of ``manifest``.

    Each epoch mines steps on the current encodings, freezes them, evaluates
    the mean pair loss (recorded in the curve) and takes one gradient step.
    ``task="centroid"`` adds a cross-entropy over procedure classes scored
    against per-class mean embeddings.
    """
    if task not in TASK_MODES:
        raise ValueError(f"unknown task mode {task!r}; expected one of {TASK_MODES}")
    positives = [e for e in manifest.entries if e.label]
    if not positives:
        raise ValueError("training needs at least one positive pair")
    seqs = manifest.sequences
    d_in = seqs[positives[0].a].features.dim
    enc_seed, pair_seed = np.random.SeedSequence(seed).spawn(2)
    encoder = LinearEncoder.random(d_in, d_out, int(enc_seed.generate_state(1)[0]))
    w_step, w_align, w_task = loss_weights
    result = TrainingResult(encoder)

    classes = sorted({seqs[r].procedure_id for e in positives for r in (e.a, e.b)})
    class_index = {c: i for i, c in enumerate(classes)}

    for epoch in range(epochs):
        weight = encoder.weight
        seeds = pair_seed.spawn(1)[0].generate_state(len(positives))
        centroids = None
        try:
            with np.errstate(over="raise", invalid="raise"):
                if task == "centroid":
                    embs = {r: (seqs[r].features.frames @ weight).mean(axis=0)
                            for e in positives for r in (e.a, e.b)}
                    centroids = np.stack([np.mean([v for r, v in embs.items() if seqs[r].procedure_id == c], axis=0)
                                          for c in classes])
                ls, la, lt, grad = _epoch(seqs, positives, seeds, weight, K, policy, boundary,
                                          loss_weights, centroids, class_index)
        except FloatingPointError:
            raise TrainingDiverged(epoch + 1, result.curve) from None
        n = len(positives)
        report = LossReport.combine(w_step * ls / n, w_align * la / n, w_task * lt / n)
        result.curve.append(report)
        log.debug("epoch %d: %s", epoch + 1, report)
        weight = weight - learning_rate * grad / n
        if not np.isfinite(report.total) or not np.all(np.isfinite(weight)):
            raise TrainingDiverged(epoch + 1, result.curve)
        encoder = LinearEncoder(weight)
        result.encoder = encoder
    return result


def _epoch(seqs, positives, seeds, weight, K, policy, boundary, loss_weights, centroids, class_index):
    w_step, w_align, w_task = loss_weights
    grad = np.zeros_like(weight)
    ls = la = lt = 0.0
    for e, s in zip(positives, seeds):
        X1, X2 = seqs[e.a].features.frames, seqs[e.b].features.frames
        frozen = freeze_structure(FeatureSequence(X1 @ weight), FeatureSequence(X2 @ weight), K, policy, int(s))
        l_step, l_align, g = pair_objective(weight, X1, X2, frozen, boundary, (w_step, w_align))
        ls += l_step
        la += l_align
        grad += g
        if centroids is not None:
            for ref, X in ((e.a, X1), (e.b, X2)):
                l_t, g_t = centroid_task(weight, X, class_index[seqs[ref].procedure_id], centroids)
                lt += 0.5 * l_t
                grad += 0.5 * w_task * g_t
    return ls, la, lt, grad
