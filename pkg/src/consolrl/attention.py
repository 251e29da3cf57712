"""Cross-attention readout over the consolidation variables.

The reward-weight vector is the query; the slow successor-feature outputs,
differenced against their faster neighbour and layer-normalized, are keys
and values. The weighted value sum is added to the plastic SF output, and
gradients reach only the three projection matrices (and, upstream, the
plastic network): the chain outputs are analytic inputs and receive none.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .nets import LN_EPS, softmax, softmax_backward


@dataclass
class AttentionCache:
    ln_d: np.ndarray      # (J, ..., n) normalized difference keys/values input
    keys: np.ndarray      # (J, ..., n)
    vals: np.ndarray      # (J, ..., n)
    probs: np.ndarray     # (J, ...)
    q_proj: np.ndarray    # (n,)
    w: np.ndarray         # (n,) query input


class AttentionHead:
    """Single-head cross-attention with projection dim equal to the SF dim."""

    def __init__(self, n: int, rng: np.random.Generator):
        self.n = n
        self.d_k = n
        self.flat = np.zeros(3 * n * n)
        self.w_query = self.flat[: n * n].reshape(n, n)
        self.w_keys = self.flat[n * n: 2 * n * n].reshape(n, n)
        self.w_values = self.flat[2 * n * n:].reshape(n, n)
        bound = 1.0 / math.sqrt(n)
        for m in (self.w_query, self.w_keys, self.w_values):
            m[:] = rng.uniform(-bound, bound, size=m.shape)

    def attend(self, w: np.ndarray, chain_sfs: np.ndarray,
               want_cache: bool = False):
        """Attention output and probabilities for stacked chain SF outputs.

        `chain_sfs` has shape (K, ..., n) with row 0 the most plastic
        variable; keys come from the K-1 neighbour differences, so at least
        two variables are required. Returns (out, probs[, cache]) with
        out shaped (..., n) and probs (..., K-1), probabilities summing to
        one over the last axis.
        """
        sfs = np.asarray(chain_sfs, dtype=np.float64)
        if sfs.ndim < 2 or sfs.shape[0] < 2:
            raise ValueError("need at least two chain variables to attend over")
        diffs = sfs[1:] - sfs[:-1]
        mu = diffs.mean(axis=-1, keepdims=True)
        sd = np.sqrt(diffs.var(axis=-1, keepdims=True) + LN_EPS)
        ln_d = (diffs - mu) / sd
        keys = ln_d @ self.w_keys.T
        vals = ln_d @ self.w_values.T
        q_proj = self.w_query @ np.asarray(w, dtype=np.float64)
        scores = (keys @ q_proj) / math.sqrt(self.d_k)   # (J, ...)
        probs = softmax(scores, axis=0)
        out = np.sum(probs[..., None] * vals, axis=0)     # (..., n)
        probs_out = np.moveaxis(probs, 0, -1)
        if want_cache:
            return out, probs_out, AttentionCache(ln_d, keys, vals, probs,
                                                  q_proj, np.asarray(w))
        return out, probs_out

    def backward(self, upstream: np.ndarray, cache: AttentionCache) -> np.ndarray:
        """Gradient of the projections; inputs are analytic, so none flow back.

        `upstream` is the loss gradient at the attention output, any shape
        (..., n). Returns a flat gradient aligned with `self.flat`.
        """
        n = self.n
        up = np.broadcast_to(upstream, cache.vals.shape[1:])
        d_vals = cache.probs[..., None] * up[None, ...]
        d_probs = np.sum(up[None, ...] * cache.vals, axis=-1)     # (J, ...)
        d_scores = softmax_backward(d_probs, cache.probs, axis=0)
        d_keys = d_scores[..., None] * (cache.q_proj / math.sqrt(self.d_k))
        d_qproj = np.sum(
            d_scores[..., None] * cache.keys, axis=tuple(range(cache.keys.ndim - 1))
        ) / math.sqrt(self.d_k)

        ln_flat = cache.ln_d.reshape(-1, n)
        grad = np.zeros_like(self.flat)
        g_q = grad[: n * n].reshape(n, n)
        g_k = grad[n * n: 2 * n * n].reshape(n, n)
        g_v = grad[2 * n * n:].reshape(n, n)
        g_q += np.outer(d_qproj, cache.w)
        g_k += d_keys.reshape(-1, n).T @ ln_flat
        g_v += d_vals.reshape(-1, n).T @ ln_flat
        return grad
