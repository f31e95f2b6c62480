"""Latent codebook: soft-EM sampling, EMA updates, hard assignment.

All routines here are numpy-only. Randomness comes from a
``numpy.random.Generator`` (use :func:`make_rng`, a counter-based Philox
stream) and categorical draws are done by inverse-CDF lookup, so sampled
codes are reproducible for a given seed.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np

logger = logging.getLogger(__name__)

DEFAULT_DECAY = 0.99
DEFAULT_EPSILON = 1e-5


def make_rng(*seed) -> np.random.Generator:
    """Philox-backed generator keyed on one or more integers."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(list(seed))))


def squared_distances(x: np.ndarray, e: np.ndarray) -> np.ndarray:
    """Pairwise squared Euclidean distances between rows of ``x`` and ``e``."""
    x = np.asarray(x)
    e = np.asarray(e)
    d = (x * x).sum(-1)[..., None] - 2.0 * x @ e.T + (e * e).sum(-1)
    return np.maximum(d, 0.0)


def exact_squared_distances(x: np.ndarray, e: np.ndarray, chunk_elems: int = 4_000_000) -> np.ndarray:
    """Like :func:`squared_distances` but summing explicit differences.

    Slower, free of cancellation error; exact ties stay exact.
    """
    x = np.asarray(x)
    e = np.asarray(e)
    rows = max(1, chunk_elems // max(1, e.shape[0] * e.shape[1]))
    out = np.empty((x.shape[0], e.shape[0]), dtype=np.result_type(x, e))
    for start in range(0, x.shape[0], rows):
        diff = x[start:start + rows, None, :] - e[None, :, :]
        out[start:start + rows] = np.einsum("nkd,nkd->nk", diff, diff)
    return out


def softmax_neg(d2: np.ndarray, axis: int = -1) -> np.ndarray:
    """softmax(-d2) with max-logit subtraction."""
    logits = -np.asarray(d2, dtype=np.float64)
    logits = logits - logits.max(axis=axis, keepdims=True)
    p = np.exp(logits)
    return p / p.sum(axis=axis, keepdims=True)


def inverse_cdf_sample(probs: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Map uniforms ``u`` (shape (..., m)) to categories of the matching rows of ``probs``."""
    cdf = np.cumsum(probs, axis=-1)
    cdf[..., -1] = 1.0
    if probs.ndim == 1:
        return np.searchsorted(cdf, u, side="right").clip(max=probs.shape[-1] - 1)
    flat_cdf = cdf.reshape(-1, cdf.shape[-1])
    flat_u = u.reshape(flat_cdf.shape[0], -1)
    out = np.empty(flat_u.shape, dtype=np.int64)
    for row in range(flat_cdf.shape[0]):
        out[row] = np.searchsorted(flat_cdf[row], flat_u[row], side="right")
    return out.clip(max=probs.shape[-1] - 1).reshape(u.shape)


@dataclass
class Codebook:
    """K code embeddings with their EMA statistics.

    ``embeddings[k] == ema_sums[k] / max(ema_counts[k], epsilon)`` holds
    after every update.
    """

    embeddings: np.ndarray
    ema_counts: np.ndarray
    ema_sums: np.ndarray
    decay: float = DEFAULT_DECAY
    epsilon: float = DEFAULT_EPSILON

    @classmethod
    def from_embeddings(cls, embeddings, decay=DEFAULT_DECAY, epsilon=DEFAULT_EPSILON,
                        counts: float = 1.0) -> "Codebook":
        e = np.array(embeddings, copy=True)
        if e.ndim != 2:
            raise ValueError("embeddings must be a K x D matrix")
        c = np.full(e.shape[0], counts, dtype=e.dtype)
        return cls(e, c, e * c[:, None], decay, epsilon)

    @property
    def size(self) -> int:
        return self.embeddings.shape[0]

    @property
    def dim(self) -> int:
        return self.embeddings.shape[1]

    def copy(self) -> "Codebook":
        return Codebook(self.embeddings.copy(), self.ema_counts.copy(), self.ema_sums.copy(),
                        self.decay, self.epsilon)

    def reseed(self, codes: Sequence[int], vectors: np.ndarray) -> None:
        """Reset ``codes`` to ``vectors`` with unit count."""
        codes = np.asarray(codes, dtype=np.int64)
        self.ema_counts[codes] = 1.0
        self.ema_sums[codes] = vectors
        self.embeddings[codes] = vectors


@dataclass
class SoftAssignment:
    sampled_codes: np.ndarray
    quantized: np.ndarray


def _check_finite(x):
    if not np.all(np.isfinite(x)):
        raise ValueError("head vector contains non-finite values")


def soft_assign_batch(cb: Codebook, x: np.ndarray, m: int,
                      rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Sample ``m`` codes per row of ``x`` (shape (..., D)).

    Returns ``(codes, q)`` with codes of shape (..., m) and q the mean of the
    sampled embeddings, shape (..., D).
    """
    if m < 1:
        raise ValueError("m must be >= 1")
    x = np.asarray(x)
    _check_finite(x)
    probs = softmax_neg(squared_distances(x, cb.embeddings))
    u = rng.random(x.shape[:-1] + (m,))
    codes = inverse_cdf_sample(probs, u)
    q = cb.embeddings[codes].mean(axis=-2)
    return codes, q


def soft_assign(cb: Codebook, x_h: np.ndarray, m: int, rng: np.random.Generator) -> SoftAssignment:
    """Draw ``m`` codes i.i.d. from softmax(-||x_h - e_k||^2) and average them."""
    x_h = np.asarray(x_h)
    if x_h.ndim != 1:
        raise ValueError("x_h must be a single D-vector")
    codes, q = soft_assign_batch(cb, x_h, m, rng)
    return SoftAssignment(codes, q)


def ema_update(cb: Codebook, vectors: np.ndarray, codes: np.ndarray,
               weights: np.ndarray | None = None) -> Codebook:
    """One EMA step in place; returns ``cb``.

    ``vectors`` (n, D) are head vectors and ``codes`` (n,) their code ids.
    ``weights`` lets a vector contribute fractionally (soft counts).
    """
    vectors = np.asarray(vectors, dtype=cb.embeddings.dtype).reshape(-1, cb.dim)
    codes = np.asarray(codes, dtype=np.int64).reshape(-1)
    if codes.size and (codes.min() < 0 or codes.max() >= cb.size):
        raise ValueError("code id out of range")
    w = np.ones(codes.shape[0], dtype=cb.embeddings.dtype) if weights is None \
        else np.asarray(weights, dtype=cb.embeddings.dtype).reshape(-1)
    counts = np.bincount(codes, weights=w, minlength=cb.size).astype(cb.embeddings.dtype)
    sums = np.zeros_like(cb.ema_sums)
    np.add.at(sums, codes, vectors * w[:, None])
    g = cb.decay
    cb.ema_counts *= g
    cb.ema_counts += (1 - g) * counts
    cb.ema_sums *= g
    cb.ema_sums += (1 - g) * sums
    cb.embeddings[:] = cb.ema_sums / np.maximum(cb.ema_counts, cb.epsilon)[:, None]
    return cb


@dataclass
class AssignmentTable:
    """Hard assignment of every (sentence, head) vector to its nearest code.

    ``codes`` and ``sq_dists`` have shape (N, H); ``popularity`` has length K.
    """

    codes: np.ndarray
    sq_dists: np.ndarray
    popularity: np.ndarray

    @property
    def num_sentences(self) -> int:
        return self.codes.shape[0]

    @property
    def num_heads(self) -> int:
        return self.codes.shape[1]

    def head_usage(self, num_codes: int | None = None) -> np.ndarray:
        """(K, H) matrix counting how often each head lands on each code."""
        k = num_codes or self.popularity.shape[0]
        usage = np.zeros((k, self.num_heads), dtype=np.int64)
        for h in range(self.num_heads):
            usage[:, h] = np.bincount(self.codes[:, h], minlength=k)
        return usage


def hard_assign(cb: Codebook, encodings: np.ndarray) -> AssignmentTable:
    """Nearest code per (sentence, head); ties go to the lower code id.

    ``encodings`` is an (N, H, D) array, or a list of (H, D) arrays.
    """
    enc = np.asarray(encodings)
    if enc.ndim == 2:
        enc = enc[None]
    if enc.shape[0] == 0:
        raise ValueError("no encodings to assign")
    n, h, _ = enc.shape
    d2 = exact_squared_distances(enc.reshape(n * h, -1), cb.embeddings)
    codes = d2.argmin(axis=1)  # argmin returns the first minimum
    dists = d2[np.arange(n * h), codes]
    pop = np.bincount(codes, minlength=cb.size)
    return AssignmentTable(codes.reshape(n, h), dists.reshape(n, h), pop)


def head_purity(table: AssignmentTable) -> tuple[float, np.ndarray]:
    """Fraction of assignments that go to each code's majority head.

    Returns the count-weighted overall purity and the majority head of every
    code (-1 for codes with no assignments).
    """
    usage = table.head_usage()
    total = usage.sum()
    owner = np.where(usage.sum(1) > 0, usage.argmax(1), -1)
    purity = float(usage.max(1).sum() / total) if total else 1.0
    return purity, owner
