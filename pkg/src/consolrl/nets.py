"""Dense network machinery with hand-derived reverse-mode gradients.

Everything is float64 and batch-first. An `Mlp` binds its weights as views
into one flat parameter vector, so a whole model can live inside a larger
buffer (a consolidation-chain row) and be updated by flat vector math with
no copying. Gradients accumulate into a `GradTape` of identical layout.
Correctness is established against central finite differences rather than
any autodiff framework.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

LN_EPS = 1e-5
L2_EPS = 1e-8

_ACTIVATIONS = ("linear", "relu", "tanh")


def layer_norm(x: np.ndarray) -> np.ndarray:
    """Standardize the last axis (no learned affine). Needs dim >= 2."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] < 2:
        raise ValueError("layer_norm needs at least 2 features")
    mu = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    return (x - mu) / np.sqrt(var + LN_EPS)


def _layer_norm_cached(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    mu = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    s = np.sqrt(var + LN_EPS)
    return (x - mu) / s, s


def _layer_norm_backward(d_out: np.ndarray, xhat: np.ndarray,
                         s: np.ndarray) -> np.ndarray:
    m1 = d_out.mean(axis=-1, keepdims=True)
    m2 = (d_out * xhat).mean(axis=-1, keepdims=True)
    return (d_out - m1 - xhat * m2) / s


def l2_normalize(x: np.ndarray) -> np.ndarray:
    """x / max(||x||_2, eps) along the last axis; zero maps to zero."""
    x = np.asarray(x, dtype=np.float64)
    norm = np.linalg.norm(x, axis=-1, keepdims=True)
    return x / np.maximum(norm, L2_EPS)


def l2_normalize_backward(d_out: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Gradient of l2_normalize wrt its input."""
    norm = np.linalg.norm(x, axis=-1, keepdims=True)
    safe = np.maximum(norm, L2_EPS)
    y = x / safe
    # Below the eps guard the map is x / eps, which is plain scaling.
    proj = d_out - y * np.sum(y * d_out, axis=-1, keepdims=True)
    return np.where(norm > L2_EPS, proj, d_out) / safe


def softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    z = x - np.max(x, axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def softmax_backward(d_out: np.ndarray, probs: np.ndarray,
                     axis: int = -1) -> np.ndarray:
    inner = np.sum(d_out * probs, axis=axis, keepdims=True)
    return probs * (d_out - inner)


@dataclass
class GradTape:
    """Flat gradient buffer with per-layer views mirroring an Mlp."""

    flat: np.ndarray
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def zero(self) -> None:
        self.flat[:] = 0.0


class Mlp:
    """Sequence of linear layers with optional relu/tanh and layer norm.

    `activations[i]` and `layer_norms[i]` apply to the output of layer i.
    Parameters are views into `flat`; callers may hand in a preallocated
    buffer (e.g. a slice of a consolidation-chain row).
    """

    def __init__(self, dims: list[int], activations: list[str],
                 layer_norms: list[bool] | None = None,
                 flat: np.ndarray | None = None):
        if len(dims) < 2:
            raise ValueError("need at least input and output dims")
        n_layers = len(dims) - 1
        if len(activations) != n_layers:
            raise ValueError("one activation per layer")
        for act in activations:
            if act not in _ACTIVATIONS:
                raise ValueError(f"unknown activation {act!r}")
        if layer_norms is None:
            layer_norms = [False] * n_layers
        if len(layer_norms) != n_layers:
            raise ValueError("one layer_norm flag per layer")
        for i, ln in enumerate(layer_norms):
            if ln and dims[i + 1] < 2:
                raise ValueError("layer_norm needs at least 2 features")
        self.dims = list(dims)
        self.activations = list(activations)
        self.layer_norms = list(layer_norms)
        n = self.param_count(dims)
        if flat is None:
            flat = np.zeros(n)
        if flat.shape != (n,):
            raise ValueError(f"flat buffer must have shape ({n},), got {flat.shape}")
        self.flat = flat
        self.weights: list[np.ndarray] = []
        self.biases: list[np.ndarray] = []
        off = 0
        for d_in, d_out in zip(dims[:-1], dims[1:]):
            w = flat[off:off + d_in * d_out].reshape(d_out, d_in)
            off += d_in * d_out
            b = flat[off:off + d_out]
            off += d_out
            self.weights.append(w)
            self.biases.append(b)

    @staticmethod
    def param_count(dims: list[int]) -> int:
        return sum(i * o + o for i, o in zip(dims[:-1], dims[1:]))

    @property
    def in_dim(self) -> int:
        return self.dims[0]

    @property
    def out_dim(self) -> int:
        return self.dims[-1]

    def init_params(self, rng: np.random.Generator) -> None:
        """Uniform fan-in scaling, biases zero."""
        for w in self.weights:
            bound = 1.0 / np.sqrt(w.shape[1])
            w[:] = rng.uniform(-bound, bound, size=w.shape)
        for b in self.biases:
            b[:] = 0.0

    def make_tape(self) -> GradTape:
        shadow = Mlp(self.dims, self.activations, self.layer_norms,
                     flat=np.zeros_like(self.flat))
        return GradTape(shadow.flat, shadow.weights, shadow.biases)

    def forward(self, x: np.ndarray, want_cache: bool = False):
        """Returns (output, cache); cache is None unless requested."""
        x = np.asarray(x, dtype=np.float64)
        squeeze = x.ndim == 1
        h = x[None, :] if squeeze else x
        if h.shape[-1] != self.in_dim:
            raise ValueError(f"input dim {h.shape[-1]} != expected {self.in_dim}")
        cache = [] if want_cache else None
        for w, b, act, ln in zip(self.weights, self.biases,
                                 self.activations, self.layer_norms):
            z = h @ w.T + b
            if act == "relu":
                a = np.maximum(z, 0.0)
            elif act == "tanh":
                a = np.tanh(z)
            else:
                a = z
            if ln:
                xhat, s = _layer_norm_cached(a)
                out = xhat
            else:
                xhat, s = None, None
                out = a
            if want_cache:
                cache.append((h, z, a, xhat, s))
            h = out
        if squeeze:
            h = h[0]
        return h, cache

    def backward(self, cache: list, upstream: np.ndarray,
                 tape: GradTape) -> np.ndarray:
        """Accumulate parameter gradients into `tape`; returns d(input)."""
        if cache is None or len(cache) != len(self.weights):
            raise ValueError("backward needs the cache from a matching forward")
        d = np.asarray(upstream, dtype=np.float64)
        squeeze = d.ndim == 1
        if squeeze:
            d = d[None, :]
        for i in range(len(self.weights) - 1, -1, -1):
            h, z, a, xhat, s = cache[i]
            if self.layer_norms[i]:
                d = _layer_norm_backward(d, xhat, s)
            act = self.activations[i]
            if act == "relu":
                d = d * (z > 0.0)
            elif act == "tanh":
                d = d * (1.0 - a * a)
            tape.weights[i] += d.T @ h
            tape.biases[i] += d.sum(axis=0)
            d = d @ self.weights[i]
        return d[0] if squeeze else d

    def clone(self) -> "Mlp":
        return Mlp(self.dims, self.activations, self.layer_norms,
                   flat=self.flat.copy())


def finite_difference_check(
    loss_and_grad: Callable[[], tuple[float, np.ndarray]],
    params: np.ndarray,
    rng: np.random.Generator,
    probes: int = 10,
    h: float = 1e-5,
) -> float:
    """Max relative error between analytic and central-difference gradients.

    `loss_and_grad` must recompute from the live `params` buffer, which this
    function perturbs in place and restores.
    """
    _, grad = loss_and_grad()
    grad = grad.copy()
    idx = rng.choice(params.size, size=min(probes, params.size), replace=False)
    worst = 0.0
    for i in idx:
        keep = params[i]
        params[i] = keep + h
        up, _ = loss_and_grad()
        params[i] = keep - h
        dn, _ = loss_and_grad()
        params[i] = keep
        fd = (up - dn) / (2.0 * h)
        denom = max(abs(fd), abs(grad[i]), 1e-6)
        worst = max(worst, abs(fd - grad[i]) / denom)
    return worst
