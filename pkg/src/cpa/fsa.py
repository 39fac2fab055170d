"""Frame-to-step alignment.

Scores how well the frames of one sequence can be assigned, in order, to the
steps mined from another. The score sums over every monotone assignment that
starts at the first step, ends at the last and visits each step. All
accumulation happens in natural-log space.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import log_softmax, softmax

from .core import FeatureSequence
from .csm import StepFeatures

BOUNDARY_MODES = ("semantic", "paper-literal-boundary")


@dataclass(frozen=True)
class AssignmentMatrix:
    """T x K frame-to-step assignment probabilities.

    ``log_probs`` is kept alongside ``probs`` so that zero entries of raw grids
    map to ``-inf`` rather than being multiplied through.
    """

    logits: np.ndarray
    probs: np.ndarray
    log_probs: np.ndarray

    @classmethod
    def from_logits(cls, logits) -> "AssignmentMatrix":
        logits = np.array(logits, dtype=np.float64)
        if logits.ndim != 2 or not np.all(np.isfinite(logits)):
            raise ValueError("logits must be a finite T x K grid")
        return cls(logits, softmax(logits, axis=1), log_softmax(logits, axis=1))

    @classmethod
    def from_probs(cls, probs) -> "AssignmentMatrix":
        """Wrap a raw non-negative grid; rows are not renormalized."""
        probs = np.array(probs, dtype=np.float64)
        if probs.ndim != 2 or not np.all(np.isfinite(probs)) or np.any(probs < 0):
            raise ValueError("probabilities must be a finite, non-negative T x K grid")
        with np.errstate(divide="ignore"):
            logp = np.log(probs)
        return cls(logp, probs, logp)

    @property
    def shape(self) -> tuple[int, int]:
        return self.probs.shape


@dataclass(frozen=True)
class AlignmentResult:
    log_prob: float
    table: np.ndarray
    boundary: str = "semantic"
    posteriors: np.ndarray | None = None


@dataclass(frozen=True)
class VerificationDistance:
    d_align: float
    log_p_s2_given_f1: float
    log_p_s1_given_f2: float

    def to_dict(self) -> dict:
        return {
            "d_align": self.d_align,
            "log_p_s2_given_f1": self.log_p_s2_given_f1,
            "log_p_s1_given_f2": self.log_p_s1_given_f2,
        }


def frame_to_step_probabilities(F: FeatureSequence, S: StepFeatures) -> AssignmentMatrix:
    if F.dim != S.dim:
        raise ValueError(f"feature dimension mismatch: {F.dim} vs {S.dim}")
    if F.length < S.k:
        raise ValueError(f"need T >= K for alignment, got T={F.length}, K={S.k}")
    return AssignmentMatrix.from_logits(F.frames @ S.steps.T / np.sqrt(F.dim))


def _emissions(W: AssignmentMatrix, boundary: str) -> np.ndarray:
    if boundary not in BOUNDARY_MODES:
        raise ValueError(f"unknown boundary mode {boundary!r}; expected one of {BOUNDARY_MODES}")
    T, K = W.shape
    if T < K or K < 1:
        raise ValueError(f"need T >= K >= 1, got T={T}, K={K}")
    logw = W.log_probs
    if boundary == "paper-literal-boundary":
        # the first-step column counts as probability 1, i.e. D(t, 1) = 1
        logw = logw.copy()
        logw[:, 0] = 0.0
    return logw


def _forward(logw: np.ndarray) -> np.ndarray:
    T, K = logw.shape
    alpha = np.full((T + 1, K + 1), -np.inf)
    alpha[0, 0] = 0.0
    for t in range(1, T + 1):
        stay = alpha[t - 1, 1:]
        switch = alpha[t - 1, :-1]
        alpha[t, 1:] = logw[t - 1] + np.logaddexp(stay, switch)
    return alpha


def _backward(logw: np.ndarray) -> np.ndarray:
    """``beta[t, k]``: log mass of frames after ``t`` given frame ``t`` sits on step ``k``."""
    T, K = logw.shape
    beta = np.full((T + 1, K + 1), -np.inf)
    beta[T, K] = 0.0
    for t in range(T - 1, 0, -1):
        stay = logw[t, :] + beta[t + 1, 1:]
        nxt = np.full(K, -np.inf)
        nxt[:-1] = logw[t, 1:] + beta[t + 1, 2:]
        beta[t, 1:] = np.logaddexp(stay, nxt)
    return beta


def alignment_log_probability(W: AssignmentMatrix, boundary: str = "semantic",
                              with_posteriors: bool = False) -> AlignmentResult:
    """Log of the summed probability over all admissible frame-to-step paths.

    ``table[t, k]`` is the log mass of aligning the first ``t`` frames to the
    first ``k`` steps. A fully blocked path space gives ``-inf``.
    """
    logw = _emissions(W, boundary)
    alpha = _forward(logw)
    log_prob = float(alpha[-1, -1])
    post = _posteriors(logw, alpha, log_prob) if with_posteriors else None
    return AlignmentResult(log_prob, alpha, boundary, post)


def _posteriors(logw, alpha, log_prob):
    if not np.isfinite(log_prob):
        raise ValueError("posteriors undefined: no admissible alignment path has positive probability")
    beta = _backward(logw)
    return np.exp(alpha[1:, 1:] + beta[1:, 1:] - log_prob)


def alignment_posteriors(W: AssignmentMatrix, boundary: str = "semantic") -> np.ndarray:
    """Per-frame marginals ``P(frame t on step k)`` under the path distribution."""
    logw = _emissions(W, boundary)
    alpha = _forward(logw)
    return _posteriors(logw, alpha, float(alpha[-1, -1]))


def alignment_gradient(W: AssignmentMatrix, boundary: str = "semantic") -> np.ndarray:
    """Gradient of ``-log P(S|F)`` with respect to ``W.logits``.

    Per frame this is ``probs_t * sum(gamma_t) - gamma_t`` over the columns that
    carry emissions; in semantic mode ``gamma_t`` sums to one, giving the
    familiar ``probs_t - gamma_t``.
    """
    gamma = alignment_posteriors(W, boundary)
    if boundary == "paper-literal-boundary":
        gamma = gamma.copy()
        gamma[:, 0] = 0.0
    return W.probs * gamma.sum(axis=1, keepdims=True) - gamma


def directional_log_probability(F: FeatureSequence, S: StepFeatures, boundary: str = "semantic") -> float:
    return alignment_log_probability(frame_to_step_probabilities(F, S), boundary).log_prob


def alignment_distance(F1: FeatureSequence, F2: FeatureSequence, S1: StepFeatures, S2: StepFeatures,
                       boundary: str = "semantic") -> VerificationDistance:
    """Symmetric negative log-likelihood of cross-aligning frames to the other side's steps."""
    if S1.k != S2.k:
        raise ValueError(f"step counts differ: {S1.k} vs {S2.k}")
    lp12 = directional_log_probability(F1, S2, boundary)
    lp21 = directional_log_probability(F2, S1, boundary)
    return VerificationDistance(-0.5 * (lp12 + lp21), lp12, lp21)

