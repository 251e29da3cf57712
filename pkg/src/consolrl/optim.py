"""Plain SGD and Adam, plus a probe for their timescale behaviour.

The chain update must be applied with SGD semantics: an SGD step is linear
in the gradient, so scaling a gradient by kappa scales the parameter motion
by kappa and the relative timescales along the chain survive. Adam divides
by the running RMS of the gradient, which cancels any constant kappa, so
the same probe shows all displacement ratios collapsing to one.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class SgdConfig:
    alpha: float

    def __post_init__(self) -> None:
        if self.alpha <= 0:
            raise ValueError(f"learning rate must be positive, got {self.alpha}")


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros(cls, dim: int, beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8) -> "AdamState":
        return cls(np.zeros(dim), np.zeros(dim), 0, beta1, beta2, eps)

    def __post_init__(self) -> None:
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("beta1 and beta2 must lie in [0, 1)")
        if self.t < 0:
            raise ValueError("step count must be non-negative")
        if np.any(self.v < 0):
            raise ValueError("second-moment estimate must be non-negative")


def _check_shapes(theta: np.ndarray, grad: np.ndarray) -> None:
    if theta.shape != grad.shape:
        raise ValueError(f"shape mismatch: theta {theta.shape} vs grad {grad.shape}")


def sgd_step(theta: np.ndarray, grad: np.ndarray, cfg: SgdConfig) -> np.ndarray:
    theta = np.asarray(theta, dtype=np.float64)
    grad = np.asarray(grad, dtype=np.float64)
    _check_shapes(theta, grad)
    return theta - cfg.alpha * grad


def adam_step(theta: np.ndarray, grad: np.ndarray, st: AdamState,
              alpha: float) -> tuple[np.ndarray, AdamState]:
    """Bias-corrected Adam update, returning the new parameters and state."""
    theta = np.asarray(theta, dtype=np.float64)
    grad = np.asarray(grad, dtype=np.float64)
    _check_shapes(theta, grad)
    t = st.t + 1
    m = st.beta1 * st.m + (1.0 - st.beta1) * grad
    v = st.beta2 * st.v + (1.0 - st.beta2) * grad * grad
    m_hat = m / (1.0 - st.beta1 ** t)
    v_hat = v / (1.0 - st.beta2 ** t)
    new_theta = theta - alpha * m_hat / (np.sqrt(v_hat) + st.eps)
    return new_theta, AdamState(m, v, t, st.beta1, st.beta2, st.eps)


def adam_step_inplace(theta: np.ndarray, grad: np.ndarray, st: AdamState,
                      alpha: float) -> None:
    """Hot-loop variant of `adam_step`: mutates theta and st, no allocation churn."""
    st.t += 1
    st.m *= st.beta1
    st.m += (1.0 - st.beta1) * grad
    st.v *= st.beta2
    st.v += (1.0 - st.beta2) * grad * grad
    corr1 = 1.0 - st.beta1 ** st.t
    corr2 = 1.0 - st.beta2 ** st.t
    theta -= (alpha / corr1) * st.m / (np.sqrt(st.v / corr2) + st.eps)


def timescale_probe(kappas: list[float], optimizer: str, steps: int = 250,
                    alpha: float = 1.0) -> list[float]:
    """Asymptotic per-step displacement for a constant unit gradient scaled by kappa.

    Drives one scalar parameter per kappa with gradient kappa * 1 at every
    step and reports |theta_T - theta_{T-1}|. Under SGD the displacements
    are exactly alpha * kappa; under Adam they all converge to alpha.
    """
    if len(kappas) == 0:
        raise ValueError("need at least one kappa")
    if any(k <= 0 for k in kappas):
        raise ValueError("kappas must be positive")
    if steps < 50:
        raise ValueError(f"need at least 50 steps for the asymptote, got {steps}")
    optimizer = optimizer.lower()
    if optimizer not in ("sgd", "adam"):
        raise ValueError(f"unknown optimizer {optimizer!r}")

    out: list[float] = []
    for kappa in kappas:
        theta = np.zeros(1)
        grad = np.array([float(kappa)])
        if optimizer == "sgd":
            cfg = SgdConfig(alpha)
            prev = theta
            for _ in range(steps):
                prev, theta = theta, sgd_step(theta, grad, cfg)
        else:
            st = AdamState.zeros(1)
            prev = theta
            for _ in range(steps):
                prev, (theta, st) = theta, adam_step(theta, grad, st, alpha)
        out.append(float(abs(theta[0] - prev[0])))
    return out


def normalized_ratios(displacements: list[float]) -> list[float]:
    """Displacements divided by the smallest entry."""
    lo = min(displacements)
    if lo <= 0:
        raise ValueError("displacements must be positive to normalize")
    return [d / lo for d in displacements]
