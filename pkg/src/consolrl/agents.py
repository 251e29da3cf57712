"""Learning agents: double DQN, the successor-feature agent, their
consolidation-chain variants, and the EWC / plasticity-injection /
continual-backprop mechanism wrappers.

The successor-feature model factors the action value as
Q(s,a,w) = psi(s,a,w)^T w. A shared trunk feeds two heads: a linear
features-task head whose L2-normalized output is the basis feature phi, and
the SF head, which reads the trunk output together with w. The reward
weights w are trained only by the reward-prediction loss (phi treated as
constant there); the trunk and SF head only by the TD loss on psi^T w.
Consolidation keeps K copies of the full network parameter vector coupled
through a chain: the gradient phase writes into the fastest copy, then one
chain Euler step runs with plain SGD semantics (learning rate one) so the
chain's timescales survive.

All agent state lives in flat float64 vectors; networks are view-based, so
for chain agents the plastic network literally *is* row 0 of the chain.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .chain import ChainConfig, euler_step_inplace
from .gridworld import N_ACTIONS
from .nets import Mlp, finite_difference_check, l2_normalize
from .optim import AdamState, adam_step_inplace


@dataclass(frozen=True)
class AgentConfig:
    kind: str = "dqn"              # dqn | sf
    sc_k: int = 0                  # number of chain variables, 0 = chain off
    mechanism: str = "none"        # none | ewc | pinject | cbp
    attention: bool = False
    sf_dim: int = 10
    hidden: int = 64
    lr: float = 1e-3
    w_lr: float = 1e-3
    gamma: float = 0.99
    batch_size: int = 32
    replay_capacity: int = 10_000
    replay_min: int = 1_000
    eps_start: float = 1.0
    eps_end: float = 0.05
    eps_decay_steps: int = 20_000
    target_tau: float = 0.01
    target_sync: int = 1_000
    chain_c1: float = 2.0
    chain_g12: float = 0.125
    chain_dt: float = 1.0
    chain_capacity_rule: float = 2.0
    chain_flow_rule: float = 2.0
    ewc_lambda: float = 25.0
    ewc_interval: int = 10_000
    cbp_rate: float = 1e-4
    cbp_maturity: int = 1_000
    cbp_decay: float = 0.99
    inject_step: int = 100_000

    def __post_init__(self) -> None:
        if self.kind not in ("dqn", "sf"):
            raise ValueError(f"unknown agent kind {self.kind!r}")
        if self.mechanism not in ("none", "ewc", "pinject", "cbp"):
            raise ValueError(f"unknown mechanism {self.mechanism!r}")
        if self.sc_k < 0:
            raise ValueError("sc_k must be >= 0")
        if self.mechanism == "pinject" and self.sc_k > 0:
            raise ValueError("plasticity injection on a chain agent is not supported")
        if self.attention and (self.kind != "sf" or self.sc_k < 2):
            raise ValueError("attention readout needs an sf agent with sc_k >= 2")

    def chain_config(self) -> ChainConfig:
        return ChainConfig(
            K=self.sc_k, C1=self.chain_c1, g12=self.chain_g12, dt=self.chain_dt,
            capacity_rule=self.chain_capacity_rule, flow_rule=self.chain_flow_rule,
        )


class ReplayBuffer:
    """Uniform ring buffer; sampling is allowed only once min_fill is reached."""

    def __init__(self, capacity: int, obs_dim: int, min_fill: int):
        if min_fill > capacity:
            raise ValueError("min_fill cannot exceed capacity")
        self.capacity = capacity
        self.min_fill = min_fill
        self.obs = np.zeros((capacity, obs_dim), dtype=np.float32)
        self.next_obs = np.zeros((capacity, obs_dim), dtype=np.float32)
        self.actions = np.zeros(capacity, dtype=np.int64)
        self.rewards = np.zeros(capacity, dtype=np.float64)
        self.dones = np.zeros(capacity, dtype=bool)
        self.size = 0
        self.pos = 0

    def push(self, s, a, r, s2, done) -> None:
        i = self.pos
        self.obs[i] = s
        self.actions[i] = a
        self.rewards[i] = r
        self.next_obs[i] = s2
        self.dones[i] = done
        self.pos = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    @property
    def ready(self) -> bool:
        return self.size >= self.min_fill

    def sample(self, batch_size: int, rng: np.random.Generator):
        if not self.ready:
            raise RuntimeError("replay buffer below min_fill")
        idx = rng.integers(0, self.size, size=batch_size)
        return (
            self.obs[idx].astype(np.float64),
            self.actions[idx],
            self.rewards[idx],
            self.next_obs[idx].astype(np.float64),
            self.dones[idx],
        )


def act_epsilon_greedy(q_values: np.ndarray, epsilon: float,
                       rng: np.random.Generator) -> int:
    """Argmax with probability 1-epsilon, else uniform; ties go to the
    lowest action index."""
    if not 0.0 <= epsilon <= 1.0:
        raise ValueError("epsilon must lie in [0, 1]")
    if epsilon > 0.0 and rng.random() < epsilon:
        return int(rng.integers(len(q_values)))
    return int(np.argmax(q_values))


def td_target(reward: np.ndarray, max_next_q: np.ndarray, done: np.ndarray,
              gamma: float) -> np.ndarray:
    """r + gamma * max_a' Q'(s', a'), with the bootstrap masked on done."""
    return reward + gamma * np.where(done, 0.0, max_next_q)


# ---------------------------------------------------------------------------
# Mechanism states
# ---------------------------------------------------------------------------

@dataclass
class EwcState:
    """Online EWC: quadratic pull toward a periodically refreshed anchor,
    weighted by the running mean of squared task gradients."""

    lam: float
    interval: int
    fisher: np.ndarray
    anchor: np.ndarray
    sq_sum: np.ndarray
    count: int = 0

    @classmethod
    def fresh(cls, lam: float, interval: int, params: np.ndarray) -> "EwcState":
        return cls(lam, interval, np.zeros_like(params), params.copy(),
                   np.zeros_like(params), 0)

    def accumulate(self, task_grad: np.ndarray) -> None:
        self.sq_sum += task_grad * task_grad
        self.count += 1

    def maybe_refresh(self, train_step: int, params: np.ndarray) -> None:
        if self.interval > 0 and train_step % self.interval == 0 and self.count > 0:
            self.fisher = self.sq_sum / self.count
            self.anchor = params.copy()
            self.sq_sum = np.zeros_like(params)
            self.count = 0


def ewc_penalty_grad(state: EwcState, theta: np.ndarray) -> np.ndarray:
    """Gradient of sum_i (lambda/2) F_i (theta_i - anchor_i)^2."""
    return state.lam * state.fisher * (theta - state.anchor)


@dataclass
class PInjectState:
    """Plasticity injection on a linear last layer.

    At injection the frozen layer theta is kept, and two equal random
    copies theta1' (trainable) and theta2' (frozen) are added so the output
    becomes h_theta + h_theta1' - h_theta2', unchanged at that instant.
    Because the layer is linear, the sum collapses to a single effective
    weight matrix theta + theta1' - theta2'; the live buffer stores that
    effective layer while theta and theta2' are kept here, so theta1' is
    recovered as effective - theta + theta2'.
    """

    inject_step: int
    injected: bool = False
    frozen: np.ndarray | None = None   # theta, the pre-injection last layer
    prime2: np.ndarray | None = None   # theta2', never trained

    def prime1(self, effective: np.ndarray) -> np.ndarray:
        if not self.injected:
            raise RuntimeError("not injected yet")
        return effective - self.frozen + self.prime2


def inject_plasticity(state: PInjectState, layer_params: np.ndarray,
                      fan_in: int, rng: np.random.Generator,
                      adam: AdamState | None = None,
                      layer_span: slice | None = None) -> None:
    """Perform the injection on the live last-layer parameter slice.

    theta1' = theta2' is drawn with fan-in scaling, so the effective layer
    (and hence the network output) is exactly unchanged. The trainable
    object from here on is theta1'; its optimizer state starts fresh, which
    for the effective layer means resetting the Adam moments on that slice.
    """
    if state.injected:
        raise RuntimeError("plasticity can be injected only once")
    state.frozen = layer_params.copy()
    bound = 1.0 / math.sqrt(fan_in)
    state.prime2 = rng.uniform(-bound, bound, size=layer_params.shape)
    state.injected = True
    if adam is not None and layer_span is not None:
        adam.m[layer_span] = 0.0
        adam.v[layer_span] = 0.0


@dataclass
class CbpLayer:
    utility: np.ndarray
    age: np.ndarray
    acc: float = 0.0


@dataclass
class CbpState:
    """Continual backprop over the hidden units of one Mlp."""

    rate: float
    maturity: int
    decay: float
    layers: list[CbpLayer]

    @classmethod
    def fresh(cls, net: Mlp, rate: float, maturity: int, decay: float) -> "CbpState":
        layers = [CbpLayer(np.zeros(d), np.zeros(d, dtype=np.int64))
                  for d in net.dims[1:-1]]
        return cls(rate, maturity, decay, layers)


def cbp_update_and_reset(state: CbpState, net: Mlp, cache: list,
                         rng: np.random.Generator,
                         param_offset: int = 0,
                         adam: AdamState | None = None) -> list[tuple[int, int]]:
    """Update contribution utilities and re-initialize stale low-utility units.

    Utility for unit i: u <- decay * u + (1 - decay) * |h_i| * sum_k |w_out[i,k]|,
    with |h_i| taken as the batch mean of the unit's post-activation output.
    Only units older than the maturity threshold are eligible; the
    replacement budget accumulates at `rate` per eligible unit per call.
    Reset = random incoming weights, zero incoming bias, zero outgoing
    weights, utility/age/optimizer moments cleared. Returns (layer, unit)
    pairs that were reset.
    """
    resets: list[tuple[int, int]] = []
    if cache is None:
        raise ValueError("cbp needs the forward cache")
    spans = []
    off = param_offset
    for w, b in zip(net.weights, net.biases):
        spans.append((off, off + w.size))
        off += w.size + b.size
    for li, layer in enumerate(state.layers):
        h = cache[li + 1][0]                      # input to the next layer
        w_out = net.weights[li + 1]
        contrib = np.mean(np.abs(h), axis=0) * np.sum(np.abs(w_out), axis=0)
        layer.utility = state.decay * layer.utility + (1.0 - state.decay) * contrib
        layer.age += 1
        if state.rate <= 0.0:
            continue
        eligible = np.flatnonzero(layer.age > state.maturity)
        if eligible.size == 0:
            continue
        layer.acc += state.rate * eligible.size
        n_reset = int(layer.acc)
        if n_reset < 1:
            continue
        layer.acc -= n_reset
        order = eligible[np.argsort(layer.utility[eligible], kind="stable")]
        w_in = net.weights[li]
        b_in = net.biases[li]
        bound = 1.0 / math.sqrt(w_in.shape[1])
        for unit in order[:n_reset]:
            w_in[unit, :] = rng.uniform(-bound, bound, size=w_in.shape[1])
            b_in[unit] = 0.0
            w_out[:, unit] = 0.0
            layer.utility[unit] = 0.0
            layer.age[unit] = 0
            resets.append((li, int(unit)))
            if adam is not None:
                w_start, b_start = spans[li]
                row = slice(w_start + unit * w_in.shape[1],
                            w_start + (unit + 1) * w_in.shape[1])
                adam.m[row] = 0.0
                adam.v[row] = 0.0
                adam.m[b_start + unit] = 0.0
                adam.v[b_start + unit] = 0.0
                # outgoing weights of `unit` sit strided inside W_{l+1}
                w2_start, _ = spans[li + 1]
                idx = w2_start + unit + np.arange(w_out.shape[0]) * w_out.shape[1]
                adam.m[idx] = 0.0
                adam.v[idx] = 0.0
    return resets


# ---------------------------------------------------------------------------
# Agents
# ---------------------------------------------------------------------------

class BaseAgent:
    """Shared plumbing: replay, epsilon schedule, chain, targets, mechanisms."""

    def __init__(self, cfg: AgentConfig, obs_dim: int, seed: int):
        self.cfg = cfg
        self.obs_dim = obs_dim
        self.n_actions = N_ACTIONS
        self.rng_init = np.random.default_rng(np.random.SeedSequence((seed, 1)))
        self.rng_act = np.random.default_rng(np.random.SeedSequence((seed, 2)))
        self.rng_replay = np.random.default_rng(np.random.SeedSequence((seed, 3)))
        self.rng_mech = np.random.default_rng(np.random.SeedSequence((seed, 4)))
        self.replay = ReplayBuffer(cfg.replay_capacity, obs_dim, cfg.replay_min)
        self.train_steps = 0
        self.env_steps = 0
        self.chain_cfg = cfg.chain_config() if cfg.sc_k >= 1 else None
        self.chain_vars: np.ndarray | None = None
        self._chain_scratch: np.ndarray | None = None
        self.ewc: EwcState | None = None
        self.pinject: PInjectState | None = None
        self.cbp: CbpState | None = None

    # -- construction helpers -------------------------------------------
    def _alloc_params(self, n_params: int) -> np.ndarray:
        """Flat parameter buffer; row 0 of the chain when consolidation is on."""
        if self.chain_cfg is not None:
            self.chain_vars = np.zeros((self.cfg.sc_k, n_params))
            self._chain_scratch = np.empty_like(self.chain_vars)
            return self.chain_vars[0]
        return np.zeros(n_params)

    def _finish_init(self, params: np.ndarray) -> None:
        if self.chain_vars is not None:
            # All chain variables start as copies of the freshly drawn row 0.
            self.chain_vars[1:] = self.chain_vars[0]
        self.adam = AdamState.zeros(params.size)
        if self.cfg.mechanism == "ewc":
            self.ewc = EwcState.fresh(self.cfg.ewc_lambda, self.cfg.ewc_interval, params)
        elif self.cfg.mechanism == "pinject":
            self.pinject = PInjectState(self.cfg.inject_step)
        elif self.cfg.mechanism == "cbp":
            self.cbp = CbpState.fresh(self.cbp_net(), self.cfg.cbp_rate,
                                      self.cfg.cbp_maturity, self.cfg.cbp_decay)

    # -- schedule --------------------------------------------------------
    def epsilon(self) -> float:
        c = self.cfg
        if self.env_steps >= c.eps_decay_steps:
            return c.eps_end
        frac = self.env_steps / max(c.eps_decay_steps, 1)
        return c.eps_start + frac * (c.eps_end - c.eps_start)

    # -- common step plumbing ---------------------------------------------
    def observe(self, s, a, r, s2, done) -> bool:
        """Store the transition and run one learning update if replay is warm.

        Returns True when a gradient step happened."""
        self.replay.push(s, a, r, s2, done)
        self.env_steps += 1
        if not self.replay.ready:
            return False
        batch = self.replay.sample(self.cfg.batch_size, self.rng_replay)
        self.train_step(batch)
        return True

    def _consolidate(self) -> None:
        if self.chain_vars is not None:
            euler_step_inplace(self.chain_vars, self.chain_cfg, self._chain_scratch)

    def _update_targets(self, online: np.ndarray, target: np.ndarray) -> None:
        tau = self.cfg.target_tau
        target *= 1.0 - tau
        target += tau * online
        if self.cfg.target_sync > 0 and self.train_steps % self.cfg.target_sync == 0:
            target[:] = online

    def _apply_mechanisms_pre(self, tape_flat: np.ndarray, params: np.ndarray) -> None:
        """EWC hooks run between gradient computation and the optimizer step."""
        if self.ewc is not None:
            self.ewc.accumulate(tape_flat)
            if self.ewc.lam != 0.0:
                tape_flat += ewc_penalty_grad(self.ewc, params)

    def _apply_mechanisms_post(self, params: np.ndarray, cache: list) -> None:
        if self.ewc is not None:
            self.ewc.maybe_refresh(self.train_steps, params)
        if self.cbp is not None:
            cbp_update_and_reset(self.cbp, self.cbp_net(), cache, self.rng_mech,
                                 self.cbp_offset(), self.adam)
        if self.pinject is not None and not self.pinject.injected \
                and self.env_steps >= self.pinject.inject_step:
            net = self.pinject_net()
            w_last = net.weights[-1]
            span_len = w_last.size + net.biases[-1].size
            start = self.pinject_offset() + net.flat.size - span_len
            inject_plasticity(self.pinject, self._pinject_layer(), w_last.shape[1],
                              self.rng_mech, self.adam,
                              slice(start, start + span_len))

    def _pinject_layer(self) -> np.ndarray:
        """Live parameter slice of the last layer the injection acts on."""
        net = self.pinject_net()
        span_len = net.weights[-1].size + net.biases[-1].size
        return net.flat[-span_len:]

    # subclasses supply: train_step, q_values, cbp_net, cbp_offset,
    # pinject_net, pinject_offset, gradient_check


class DqnAgent(BaseAgent):
    """Double DQN on a tanh+layer-norm trunk, optionally chain-consolidated."""

    def __init__(self, cfg: AgentConfig, obs_dim: int, seed: int):
        super().__init__(cfg, obs_dim, seed)
        dims = [obs_dim, cfg.hidden, cfg.hidden, self.n_actions]
        acts = ["tanh", "relu", "linear"]
        lns = [True, False, False]
        n_params = Mlp.param_count(dims)
        flat = self._alloc_params(n_params)
        self.net = Mlp(dims, acts, lns, flat=flat)
        self.net.init_params(self.rng_init)
        self.target_net = self.net.clone()
        self._finish_init(flat)
        self._tape = self.net.make_tape()

    # -- mechanism targets -------------------------------------------------
    def cbp_net(self) -> Mlp:
        return self.net

    def cbp_offset(self) -> int:
        return 0

    def pinject_net(self) -> Mlp:
        return self.net

    def pinject_offset(self) -> int:
        return 0

    # -- forward -----------------------------------------------------------
    def q_values(self, obs: np.ndarray) -> np.ndarray:
        q, _ = self.net.forward(obs)
        return q

    def act(self, obs: np.ndarray) -> int:
        return act_epsilon_greedy(self.q_values(obs), self.epsilon(), self.rng_act)

    def act_greedy(self, obs: np.ndarray) -> int:
        return int(np.argmax(self.q_values(obs)))

    # -- learning ------------------------------------------------------------
    def train_step(self, batch) -> None:
        s, a, r, s2, done = batch
        self.train_steps += 1
        b = s.shape[0]

        q_next_online, _ = self.net.forward(s2)
        a_star = np.argmax(q_next_online, axis=1)
        q_next_target, _ = self.target_net.forward(s2)
        y = td_target(r, q_next_target[np.arange(b), a_star], done, self.cfg.gamma)

        q_all, cache = self.net.forward(s, want_cache=True)
        q_sel = q_all[np.arange(b), a]
        delta = q_sel - y

        upstream = np.zeros_like(q_all)
        upstream[np.arange(b), a] = delta / b
        self._tape.zero()
        self.net.backward(cache, upstream, self._tape)
        grad = self._tape.flat
        self._apply_mechanisms_pre(grad, self.net.flat)
        adam_step_inplace(self.net.flat, grad, self.adam, self.cfg.lr)
        self._consolidate()
        self._update_targets(self.net.flat, self.target_net.flat)
        self._apply_mechanisms_post(self.net.flat, cache)

    # -- validation -----------------------------------------------------------
    def gradient_check(self, rng: np.random.Generator, probes: int = 10) -> float:
        b = 8
        s = rng.random((b, self.obs_dim))
        a = rng.integers(0, self.n_actions, size=b)
        y = rng.normal(size=b)

        def loss_and_grad():
            q_all, cache = self.net.forward(s, want_cache=True)
            q_sel = q_all[np.arange(b), a]
            delta = q_sel - y
            loss = 0.5 * float(np.mean(delta ** 2))
            upstream = np.zeros_like(q_all)
            upstream[np.arange(b), a] = delta / b
            tape = self.net.make_tape()
            self.net.backward(cache, upstream, tape)
            return loss, tape.flat
        return finite_difference_check(loss_and_grad, self.net.flat, rng, probes)


class SfAgent(BaseAgent):
    """Successor-feature agent; sc_k >= 1 adds the consolidation chain and
    sc_k = 0 is the plain (simple) variant.

    Three view-based networks share one flat vector: a trunk (tanh +
    layer-norm body), a linear features-task head whose L2-normalized
    output is phi, and the SF head, which reads the trunk output together
    with w. The TD loss trains trunk and SF head; phi is a readout whose
    only consumer is the stop-gradient reward regression, so the features
    head itself receives no gradient from anywhere.
    """

    def __init__(self, cfg: AgentConfig, obs_dim: int, seed: int):
        if cfg.kind != "sf":
            raise ValueError("SfAgent needs kind='sf'")
        super().__init__(cfg, obs_dim, seed)
        n = cfg.sf_dim
        h = cfg.hidden
        self.n = n
        trunk_dims = [obs_dim, h]
        feat_dims = [h, n]
        head_dims = [h + n, h, h, n * self.n_actions]
        self.trunk_size = Mlp.param_count(trunk_dims)
        self.feat_size = Mlp.param_count(feat_dims)
        self.head_size = Mlp.param_count(head_dims)
        self._spans = (
            slice(0, self.trunk_size),
            slice(self.trunk_size, self.trunk_size + self.feat_size),
            slice(self.trunk_size + self.feat_size,
                  self.trunk_size + self.feat_size + self.head_size),
        )
        flat = self._alloc_params(self.trunk_size + self.feat_size + self.head_size)

        def build(buf):
            trunk = Mlp(trunk_dims, ["tanh"], [True], flat=buf[self._spans[0]])
            feat = Mlp(feat_dims, ["linear"], flat=buf[self._spans[1]])
            head = Mlp(head_dims, ["relu", "relu", "linear"], flat=buf[self._spans[2]])
            return trunk, feat, head

        self.flat = flat
        self.trunk, self.feat_head, self.sf_head = build(flat)
        self.trunk.init_params(self.rng_init)
        self.feat_head.init_params(self.rng_init)
        self.sf_head.init_params(self.rng_init)
        bound = 1.0 / math.sqrt(n)
        self.w = self.rng_init.uniform(-bound, bound, size=n)
        self.target_flat = flat.copy()
        self.target_trunk, self.target_feat, self.target_sf_head = build(self.target_flat)
        self._build = build
        self._finish_init(flat)
        self.w_adam = AdamState.zeros(n)
        self._tape_trunk = self.trunk.make_tape()
        self._tape_head = self.sf_head.make_tape()
        self.attn = None
        if cfg.attention:
            from .attention import AttentionHead
            self.attn = AttentionHead(n, self.rng_init)
            self.attn_adam = AdamState.zeros(self.attn.flat.size)
            self.attn_probs_sum = np.zeros(cfg.sc_k - 1)
            self.attn_probs_count = 0

    # -- mechanism targets ---------------------------------------------------
    def cbp_net(self) -> Mlp:
        return self.sf_head

    def cbp_offset(self) -> int:
        return self._spans[2].start

    def pinject_net(self) -> Mlp:
        return self.sf_head

    def pinject_offset(self) -> int:
        return self._spans[2].start

    # -- forward ---------------------------------------------------------------
    def _psi(self, obs: np.ndarray, trunk: Mlp, head: Mlp,
             want_cache: bool = False):
        """psi(s, ., w) for all actions; returns (B, A, n) plus caches."""
        obs = np.atleast_2d(obs)
        z, trunk_cache = trunk.forward(obs, want_cache)
        x = np.concatenate([z, np.broadcast_to(self.w, (z.shape[0], self.n))], axis=1)
        flat_psi, head_cache = head.forward(x, want_cache)
        psi = flat_psi.reshape(obs.shape[0], self.n_actions, self.n)
        return psi, z, trunk_cache, head_cache

    def basis_features(self, obs: np.ndarray, target: bool = False) -> np.ndarray:
        """phi: L2-normalized features-task output."""
        trunk = self.target_trunk if target else self.trunk
        feat = self.target_feat if target else self.feat_head
        z, _ = trunk.forward(np.atleast_2d(obs))
        raw, _ = feat.forward(z)
        return l2_normalize(raw)

    def psi_values(self, obs: np.ndarray, target: bool = False) -> np.ndarray:
        trunk = self.target_trunk if target else self.trunk
        head = self.target_sf_head if target else self.sf_head
        psi, _, _, _ = self._psi(obs, trunk, head)
        return psi

    def q_values(self, obs: np.ndarray) -> np.ndarray:
        single = np.asarray(obs).ndim == 1
        psi = self.psi_values(np.atleast_2d(obs))
        if self.attn is not None:
            psi = psi + self._attention_output(np.atleast_2d(obs), psi)[0]
        q = psi @ self.w
        return q[0] if single else q

    def act(self, obs: np.ndarray) -> int:
        return act_epsilon_greedy(self.q_values(obs), self.epsilon(), self.rng_act)

    def act_greedy(self, obs: np.ndarray) -> int:
        return int(np.argmax(self.q_values(obs)))

    # -- attention ---------------------------------------------------------------
    def _chain_row_models(self):
        """Mlp views over every chain row (built lazily, rows alias the chain)."""
        if not hasattr(self, "_row_models"):
            self._row_models = [self._build(self.chain_vars[k])
                                for k in range(1, self.cfg.sc_k)]
        return self._row_models

    def _chain_sf_outputs(self, obs: np.ndarray, psi_u1: np.ndarray) -> np.ndarray:
        """SF outputs of every chain variable, stacked (K, B, A, n)."""
        outs = [psi_u1]
        for trunk, _, head in self._chain_row_models():
            psi, _, _, _ = self._psi(obs, trunk, head)
            outs.append(psi)
        return np.stack(outs, axis=0)

    def _attention_output(self, obs: np.ndarray, psi_u1: np.ndarray):
        sfs = self._chain_sf_outputs(obs, psi_u1)
        out, probs, cache = self.attn.attend(self.w, sfs, want_cache=True)
        return out, probs, cache

    # -- learning --------------------------------------------------------------
    def td_targets(self, s2: np.ndarray, r: np.ndarray, done: np.ndarray) -> np.ndarray:
        """Bootstrapped targets with double-Q action selection: the online
        psi picks a', the target psi evaluates it."""
        psi2_online = self.psi_values(s2)
        psi2 = self.psi_values(s2, target=True)
        if self.attn is not None:
            attn2 = self._attention_output(s2, psi2)[0]
            psi2_online = psi2_online + attn2
            psi2 = psi2 + attn2
        a_star = np.argmax(psi2_online @ self.w, axis=1)
        q2 = (psi2 @ self.w)[np.arange(s2.shape[0]), a_star]
        return td_target(r, q2, done, self.cfg.gamma)

    def train_step(self, batch) -> None:
        s, a, r, s2, done = batch
        self.train_steps += 1
        b = s.shape[0]

        y = self.td_targets(s2, r, done)

        # TD loss on psi^T w; gradients flow to trunk and SF head only.
        psi, z, trunk_cache, head_cache = self._psi(
            s, self.trunk, self.sf_head, want_cache=True)
        attn_cache = None
        if self.attn is not None:
            attn_out, probs, attn_cache = self._attention_output(s, psi)
            psi_used = psi + attn_out
            self.attn_probs_sum += probs.reshape(-1, probs.shape[-1]).mean(axis=0)
            self.attn_probs_count += 1
        else:
            psi_used = psi
        q_sel = psi_used[np.arange(b), a] @ self.w
        delta = q_sel - y

        d_psi = np.zeros_like(psi)
        d_psi[np.arange(b), a] = (delta / b)[:, None] * self.w
        self._tape_trunk.zero()
        self._tape_head.zero()
        d_x = self.sf_head.backward(head_cache, d_psi.reshape(b, -1), self._tape_head)
        d_z = d_x[:, : self.cfg.hidden]  # the w part of the input is stop-gradient
        self.trunk.backward(trunk_cache, d_z, self._tape_trunk)
        grad = np.concatenate([self._tape_trunk.flat,
                               np.zeros(self.feat_size),
                               self._tape_head.flat])

        if self.attn is not None:
            attn_grad = self.attn.backward(d_psi, attn_cache)

        # Reward loss trains w alone; phi over s' is treated as constant.
        phi2 = self.basis_features(s2)
        w_err = phi2 @ self.w - r
        w_grad = (w_err[:, None] * phi2).mean(axis=0)

        self._apply_mechanisms_pre(grad, self.flat)
        adam_step_inplace(self.flat, grad, self.adam, self.cfg.lr)
        adam_step_inplace(self.w, w_grad, self.w_adam, self.cfg.w_lr)
        if self.attn is not None:
            adam_step_inplace(self.attn.flat, attn_grad, self.attn_adam, self.cfg.lr)
        self._consolidate()
        self._update_targets(self.flat, self.target_flat)
        self._apply_mechanisms_post(self.flat, head_cache)

    def drain_attention_probs(self) -> np.ndarray | None:
        """Mean attention probabilities since last drain, or None if idle."""
        if self.attn is None or self.attn_probs_count == 0:
            return None
        out = self.attn_probs_sum / self.attn_probs_count
        self.attn_probs_sum = np.zeros_like(self.attn_probs_sum)
        self.attn_probs_count = 0
        return out

    # -- validation ---------------------------------------------------------------
    def gradient_check(self, rng: np.random.Generator, probes: int = 10) -> float:
        b = 8
        s = rng.random((b, self.obs_dim))
        a = rng.integers(0, self.n_actions, size=b)
        y = rng.normal(size=b)

        def loss_and_grad():
            psi, z, trunk_cache, head_cache = self._psi(
                s, self.trunk, self.sf_head, want_cache=True)
            q_sel = psi[np.arange(b), a] @ self.w
            delta = q_sel - y
            loss = 0.5 * float(np.mean(delta ** 2))
            d_psi = np.zeros_like(psi)
            d_psi[np.arange(b), a] = (delta / b)[:, None] * self.w
            tape_t = self.trunk.make_tape()
            tape_h = self.sf_head.make_tape()
            d_x = self.sf_head.backward(head_cache, d_psi.reshape(b, -1), tape_h)
            self.trunk.backward(trunk_cache, d_x[:, : self.cfg.hidden], tape_t)
            return loss, np.concatenate([tape_t.flat,
                                         np.zeros(self.feat_size),
                                         tape_h.flat])
        return finite_difference_check(loss_and_grad, self.flat, rng, probes)

    def w_gradient_check(self, rng: np.random.Generator, probes: int = 5) -> float:
        b = 8
        s2 = rng.random((b, self.obs_dim))
        r = rng.normal(size=b)

        def loss_and_grad():
            phi2 = self.basis_features(s2)
            err = phi2 @ self.w - r
            loss = 0.5 * float(np.mean(err ** 2))
            return loss, (err[:, None] * phi2).mean(axis=0)
        return finite_difference_check(loss_and_grad, self.w, rng, probes)


def make_agent(cfg: AgentConfig, obs_dim: int, seed: int) -> BaseAgent:
    if cfg.kind == "sf":
        return SfAgent(cfg, obs_dim, seed)
    return DqnAgent(cfg, obs_dim, seed)


def train_step_dqn(agent: DqnAgent, batch) -> None:
    agent.train_step(batch)


def train_step_sf_sc(agent: SfAgent, batch) -> None:
    agent.train_step(batch)
