"""Linear consolidation chain with geometrically graded timescales.

A chain couples K parameter vectors u_1..u_K of equal dimension. Each
variable k has a capacity C_k = C1 * capacity_rule**(k-1) (its inertia) and
couples to its downstream neighbour with flow strength
g_{k,k+1} = g12 * flow_rule**-(k-1). The continuous dynamics are

    C_1 du_1/dt = g_{1,2} (u_2 - u_1)                    (external input enters u_1 separately)
    C_k du_k/dt = g_{k-1,k} (u_{k-1} - u_k) + g_{k,k+1} (u_{k+1} - u_k)
    C_K du_K/dt = g_{K-1,K} (u_{K-1} - u_K) - g_{K,K+1} u_K

i.e. the missing neighbour beyond u_K is held at zero, which acts as a leak.
`euler_step` is the production discrete update (one explicit Euler step of
size dt, all right-hand sides read from a pre-step snapshot); `ode_oracle`
integrates the same dynamics with fixed-step RK4 and exists purely as an
independent reference, as does the analytic `equilibrium_profile`.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class ChainConfig:
    """Static description of a K-variable chain."""

    K: int
    C1: float = 2.0
    g12: float = 0.125
    dt: float = 1.0
    capacity_rule: float = 2.0  # per-depth capacity multiplier
    flow_rule: float = 2.0      # per-depth flow divisor

    def __post_init__(self) -> None:
        if self.K < 1:
            raise ValueError(f"chain needs K >= 1, got {self.K}")
        if self.C1 <= 0 or self.g12 <= 0 or self.dt <= 0:
            raise ValueError("C1, g12 and dt must all be positive")
        if self.capacity_rule <= 1 or self.flow_rule <= 1:
            raise ValueError("capacity_rule and flow_rule must exceed 1")

    def capacities(self) -> np.ndarray:
        """C_k for k = 1..K, strictly increasing."""
        return _coeffs(self)[0]

    def flows(self) -> np.ndarray:
        """g_{k,k+1} for k = 1..K; the last entry is the leak coefficient."""
        return _coeffs(self)[1]

    def etas(self) -> np.ndarray:
        """Per-variable Euler gains dt / C_k, strictly decreasing."""
        return _coeffs(self)[2]


@functools.lru_cache(maxsize=64)
def _coeffs(cfg: "ChainConfig") -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    k = np.arange(cfg.K, dtype=np.float64)
    caps = cfg.C1 * cfg.capacity_rule ** k
    flows = cfg.g12 * cfg.flow_rule ** -k
    caps.setflags(write=False)
    flows.setflags(write=False)
    etas = cfg.dt / caps
    etas.setflags(write=False)
    return caps, flows, etas


@dataclass
class ChainState:
    """K stacked parameter vectors, row k-1 holding u_k."""

    vars: np.ndarray  # shape (K, n)
    step_count: int = 0

    def __post_init__(self) -> None:
        self.vars = np.atleast_2d(np.asarray(self.vars, dtype=np.float64))

    @property
    def K(self) -> int:
        return self.vars.shape[0]

    def copy(self) -> "ChainState":
        return ChainState(self.vars.copy(), self.step_count)


def init_chain(cfg: ChainConfig, theta0: np.ndarray) -> ChainState:
    """All K variables start as copies of theta0."""
    theta0 = np.asarray(theta0, dtype=np.float64).ravel()
    if not np.all(np.isfinite(theta0)):
        raise ValueError("initial parameter vector must be finite")
    return ChainState(np.tile(theta0, (cfg.K, 1)), step_count=0)


def chain_drive(u: np.ndarray, cfg: ChainConfig) -> np.ndarray:
    """Right-hand side C_k du_k/dt for every variable, from a single snapshot.

    Shared by the Euler update and the RK4 oracle so both integrate the
    identical vector field.
    """
    g = cfg.flows()
    drive = np.zeros_like(u)
    if u.shape[0] > 1:
        down = u[1:] - u[:-1]
        drive[:-1] += g[:-1, None] * down   # pull toward downstream neighbour
        drive[1:] -= g[:-1, None] * down    # equal and opposite on the deeper side
    drive[-1] -= g[-1] * u[-1]              # absent neighbour beyond u_K is zero
    return drive


@functools.lru_cache(maxsize=64)
def transition_matrix(cfg: ChainConfig) -> np.ndarray:
    """T with u(t+dt) = T @ u(t): the Euler step of the linear chain.

    T = I + diag(dt / C_k) M, where M holds the flow couplings and the leak.
    One matmul per step replaces the per-variable update loop exactly
    (synchronous reads are automatic: every output row only sees u(t)).
    """
    g = _coeffs(cfg)[1]
    k = cfg.K
    m = np.zeros((k, k))
    for i in range(k):
        if i > 0:
            m[i, i - 1] = g[i - 1]
            m[i, i] -= g[i - 1]
        if i < k - 1:
            m[i, i + 1] = g[i]
            m[i, i] -= g[i]
    m[k - 1, k - 1] -= g[k - 1]  # leak: the neighbour beyond u_K is zero
    t = np.eye(k) + cfg.etas()[:, None] * m
    t.setflags(write=False)
    return t


def euler_step(state: ChainState, cfg: ChainConfig) -> ChainState:
    """One synchronous explicit Euler step of size cfg.dt.

    Row 0 is expected to already hold any externally applied input (the
    half-step gradient write); this update only exchanges mass along the
    chain. Every right-hand side reads the entry snapshot, so the result is
    independent of any per-variable write order. A K=1 chain degenerates to
    pure decay of u_1 at rate eta_1 * g_{1,2}.
    """
    if state.vars.shape[0] != cfg.K:
        raise ValueError(f"state has {state.vars.shape[0]} variables, config says {cfg.K}")
    if not np.all(np.isfinite(state.vars)):
        raise ValueError("chain state must be finite")
    return ChainState(transition_matrix(cfg) @ state.vars, state.step_count + 1)


def euler_step_inplace(u: np.ndarray, cfg: ChainConfig,
                       scratch: np.ndarray | None = None) -> None:
    """In-place body of `euler_step` for hot loops; same snapshot semantics."""
    if scratch is None:
        scratch = np.empty_like(u)
    np.matmul(transition_matrix(cfg), u, out=scratch)
    u[:] = scratch


def ode_oracle(
    state: ChainState,
    cfg: ChainConfig,
    horizon: float,
    substeps: int,
    clamp_first: bool = False,
) -> ChainState:
    """Integrate the continuous dynamics over `horizon` with fixed-step RK4.

    Zero external input throughout (free relaxation). With `clamp_first`,
    u_1 is held at its initial value, which is the boundary condition the
    analytic equilibrium profile assumes. `substeps` must make the oracle at
    least as fine as the production Euler step.
    """
    if substeps < horizon / cfg.dt:
        raise ValueError(
            f"oracle must be finer than the production step: need substeps >= "
            f"{horizon / cfg.dt:.3g}, got {substeps}"
        )
    u = state.vars.astype(np.float64, copy=True)
    h = horizon / substeps
    g = cfg.flows()
    g_side = g[:-1, None]
    g_leak = g[-1]
    inv_c = (1.0 / cfg.capacities())[:, None]
    multi = u.shape[0] > 1

    def f(y: np.ndarray) -> np.ndarray:
        dy = np.zeros_like(y)
        if multi:
            down = y[1:] - y[:-1]
            dy[:-1] += g_side * down
            dy[1:] -= g_side * down
        dy[-1] -= g_leak * y[-1]
        dy *= inv_c
        if clamp_first:
            dy[0] = 0.0
        return dy

    for _ in range(substeps):
        k1 = f(u)
        k2 = f(u + 0.5 * h * k1)
        k3 = f(u + 0.5 * h * k2)
        k4 = f(u + h * k3)
        u += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    return ChainState(u, state.step_count)


def equilibrium_profile(cfg: ChainConfig, clamp: float) -> np.ndarray:
    """Steady state of u_2..u_K with u_1 clamped to `clamp`.

    Solves the K-1 linear balance equations (zero net flow at every interior
    variable, leak balance at u_K) with a dense solver. Used only as a test
    oracle for long-horizon relaxation.
    """
    if cfg.K == 1:
        return np.array([float(clamp)])
    g = cfg.flows()
    m = cfg.K - 1
    a = np.zeros((m, m))
    b = np.zeros(m)
    for i in range(m):  # row i is the balance at u_{i+2}
        up = g[i]                     # coupling to u_{i+1}
        down = g[i + 1]               # coupling to u_{i+3}, or the leak at the end
        a[i, i] = -(up + down)
        if i > 0:
            a[i, i - 1] = up
        else:
            b[i] = -up * clamp        # u_1 enters as a known boundary value
        if i < m - 1:
            a[i, i + 1] = down
    sol = np.linalg.solve(a, b)
    return np.concatenate(([float(clamp)], sol))
