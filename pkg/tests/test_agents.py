import numpy as np
import pytest

from consolrl.agents import (
    AgentConfig,
    CbpState,
    DqnAgent,
    EwcState,
    PInjectState,
    ReplayBuffer,
    SfAgent,
    act_epsilon_greedy,
    cbp_update_and_reset,
    ewc_penalty_grad,
    inject_plasticity,
    make_agent,
    td_target,
)
from consolrl.drift import DriftConfig, DriftKind
from consolrl.gridworld import EnvConfig, FourRooms
from consolrl.nets import Mlp
from consolrl.optim import AdamState

OBS_DIM = 171


def small_cfg(**kw) -> AgentConfig:
    base = dict(kind="dqn", hidden=16, sf_dim=6, replay_capacity=2000,
                replay_min=64, batch_size=8, eps_decay_steps=500)
    base.update(kw)
    return AgentConfig(**base)


def constant_env(seed=0, slip=0.0, **env_kw) -> FourRooms:
    drift = DriftConfig(kind=DriftKind.PERIODIC_SINE, amplitude=0.0,
                        noise_sigma=0.0, clip_lo=slip, clip_hi=slip + 1e-12)
    return FourRooms(EnvConfig(**env_kw), drift, seed=seed)


def drive(agent, env, steps, seed_actions=False):
    """Run the standard act/step/observe loop for `steps` env steps."""
    state = env.reset(0)
    obs = env.feature_obs(state)
    for _ in range(steps):
        a = agent.act(obs)
        state, out = env.step(state, a)
        agent.observe(obs, a, out.reward, out.next_obs, out.done)
        obs = out.next_obs
        if out.done:
            state = env.reset()
            obs = env.feature_obs(state)


class TestActSelection:
    def test_epsilon_one_is_uniform(self):
        rng = np.random.default_rng(0)
        q = np.array([1.0, 3.0, 2.0, 0.0])
        counts = np.zeros(4)
        n = 10_000
        for _ in range(n):
            counts[act_epsilon_greedy(q, 1.0, rng)] += 1
        chi2 = np.sum((counts - n / 4) ** 2 / (n / 4))
        assert chi2 < 16.27  # 3 dof at the 0.1% level

    def test_epsilon_zero_is_argmax(self):
        rng = np.random.default_rng(0)
        assert act_epsilon_greedy(np.array([1.0, 3.0, 2.0, 0.0]), 0.0, rng) == 1

    def test_tie_breaks_to_lowest_index(self):
        rng = np.random.default_rng(0)
        assert act_epsilon_greedy(np.array([2.0, 2.0, 2.0, 2.0]), 0.0, rng) == 0

    def test_bad_epsilon_rejected(self):
        with pytest.raises(ValueError):
            act_epsilon_greedy(np.zeros(4), 1.5, np.random.default_rng(0))


class TestTdTarget:
    def test_terminal_masks_bootstrap(self):
        y = td_target(np.array([0.7]), np.array([9.0]), np.array([True]), 0.99)
        assert y[0] == 0.7

    def test_gamma_zero(self):
        y = td_target(np.array([0.7]), np.array([9.0]), np.array([False]), 0.0)
        assert y[0] == 0.7

    def test_substitution(self):
        y = td_target(np.array([1.0]), np.array([2.0]), np.array([False]), 0.99)
        assert y[0] == pytest.approx(2.98)


class TestReplay:
    def test_min_fill_enforced(self):
        buf = ReplayBuffer(100, 4, min_fill=10)
        buf.push(np.zeros(4), 0, 0.0, np.zeros(4), False)
        assert not buf.ready
        with pytest.raises(RuntimeError):
            buf.sample(2, np.random.default_rng(0))

    def test_ring_overwrites_oldest(self):
        buf = ReplayBuffer(4, 1, min_fill=1)
        for i in range(6):
            buf.push(np.array([float(i)]), i, float(i), np.array([0.0]), False)
        assert buf.size == 4
        assert sorted(buf.rewards.tolist()) == [2.0, 3.0, 4.0, 5.0]

    def test_uniform_sampling_covers_buffer(self):
        buf = ReplayBuffer(16, 1, min_fill=1)
        for i in range(16):
            buf.push(np.array([float(i)]), i, float(i), np.array([0.0]), False)
        rng = np.random.default_rng(0)
        seen = set()
        for _ in range(200):
            _, actions, _, _, _ = buf.sample(8, rng)
            seen.update(actions.tolist())
        assert seen == set(range(16))


class TestSfModel:
    def test_q_is_psi_dot_w(self):
        agent = make_agent(small_cfg(kind="sf"), OBS_DIM, seed=0)
        rng = np.random.default_rng(1)
        obs = rng.random((3, OBS_DIM))
        psi = agent.psi_values(obs)
        q = agent.q_values(obs)
        assert np.allclose(q, psi @ agent.w, atol=1e-15)

    def test_phi_is_unit_norm(self):
        agent = make_agent(small_cfg(kind="sf"), OBS_DIM, seed=0)
        obs = np.random.default_rng(2).random((5, OBS_DIM))
        phi = agent.basis_features(obs)
        assert np.allclose(np.linalg.norm(phi, axis=1), 1.0)

    def test_td_loss_gradients_match_fd(self):
        agent = make_agent(small_cfg(kind="sf"), OBS_DIM, seed=0)
        rng = np.random.default_rng(3)
        assert agent.gradient_check(rng) < 1e-4

    def test_scalar_td_derivative(self):
        # psi^T w = 2 with w = 1 and target 0: dL/dpsi = -(y - psi w) w = 2.
        psi_sel = np.array([[2.0]])
        w = np.array([1.0])
        y = np.array([0.0])
        delta = psi_sel @ w - y
        d_psi = delta[:, None] * w
        assert d_psi[0, 0] == 2.0

    def test_reward_grad_zero_at_fit(self):
        agent = make_agent(small_cfg(kind="sf"), OBS_DIM, seed=0)
        obs = np.random.default_rng(4).random((4, OBS_DIM))
        phi = agent.basis_features(obs)
        r = phi @ agent.w  # targets already satisfied
        w_err = phi @ agent.w - r
        assert not (w_err[:, None] * phi).mean(axis=0).any()

    def test_reward_grad_at_zero_w(self):
        agent = make_agent(small_cfg(kind="sf"), OBS_DIM, seed=0)
        agent.w[:] = 0.0
        obs = np.random.default_rng(5).random((1, OBS_DIM))
        phi = agent.basis_features(obs)
        r = np.array([1.0])
        grad = ((phi @ agent.w - r)[:, None] * phi).mean(axis=0)
        assert np.allclose(grad, -phi[0])

    def test_w_gradient_check(self):
        agent = make_agent(small_cfg(kind="sf"), OBS_DIM, seed=0)
        assert agent.w_gradient_check(np.random.default_rng(6)) < 1e-4

    def test_reward_loss_touches_only_w(self):
        # A batch engineered to zero the TD gradient isolates the w update.
        agent = make_agent(small_cfg(kind="sf"), OBS_DIM, seed=0)
        agent.w[:] = 0.0
        rng = np.random.default_rng(7)
        s = rng.random((4, OBS_DIM))
        batch = (s, np.zeros(4, dtype=int), np.ones(4), s, np.ones(4, dtype=bool))
        before = agent.flat.copy()
        w_before = agent.w.copy()
        agent.train_step(batch)
        assert np.array_equal(agent.flat, before)   # no encoder/head motion
        assert not np.array_equal(agent.w, w_before)


class TestSfScTraining:
    def zero_grad_batch(self, agent, rng):
        s = rng.random((4, OBS_DIM))
        return (s, np.zeros(4, dtype=int), np.zeros(4), s, np.ones(4, dtype=bool))

    def test_equal_chain_zero_grads_only_leak(self):
        agent = make_agent(small_cfg(kind="sf", sc_k=4), OBS_DIM, seed=0)
        agent.w[:] = 0.0
        rng = np.random.default_rng(8)
        chain_before = agent.chain_vars.copy()
        agent.train_step(self.zero_grad_batch(agent, rng))
        cfg = agent.chain_cfg
        leak = cfg.etas()[-1] * cfg.flows()[-1]
        assert np.allclose(agent.chain_vars[:-1], chain_before[:-1], atol=1e-15)
        assert np.allclose(agent.chain_vars[-1],
                           chain_before[-1] * (1 - leak), atol=1e-12)

    def test_k1_reduces_to_weight_decay(self):
        agent = make_agent(small_cfg(kind="sf", sc_k=1), OBS_DIM, seed=0)
        agent.w[:] = 0.0
        rng = np.random.default_rng(9)
        before = agent.flat.copy()
        agent.train_step(self.zero_grad_batch(agent, rng))
        cfg = agent.chain_cfg
        rate = cfg.etas()[0] * cfg.flows()[0]
        assert np.allclose(agent.flat, before * (1 - rate), atol=1e-12)

    def test_u2_pulled_toward_u1(self):
        agent = make_agent(small_cfg(kind="sf", sc_k=4), OBS_DIM, seed=0)
        agent.w[:] = 0.0
        rng = np.random.default_rng(10)
        # Distinct u1, equal deeper variables: u2's move is exactly the
        # eta2 * g12 * (u1 - u2) term.
        agent.chain_vars[1:] = agent.chain_vars[0] + 0.5
        u1 = agent.chain_vars[0].copy()
        u2 = agent.chain_vars[1].copy()
        agent.train_step(self.zero_grad_batch(agent, rng))
        cfg = agent.chain_cfg
        expected = u2 + cfg.etas()[1] * cfg.flows()[0] * (u1 - u2)
        assert np.allclose(agent.chain_vars[1], expected, atol=1e-12)

    def test_k0_identical_to_plain_sf(self):
        cfg_a = small_cfg(kind="sf", sc_k=0)
        agent_a = make_agent(cfg_a, OBS_DIM, seed=3)
        agent_b = make_agent(small_cfg(kind="sf", sc_k=0), OBS_DIM, seed=3)
        env_a = constant_env(seed=3, steps_per_task=400)
        env_b = constant_env(seed=3, steps_per_task=400)
        drive(agent_a, env_a, 500)
        drive(agent_b, env_b, 500)
        assert np.array_equal(agent_a.flat, agent_b.flat)

    def test_plastic_row_is_the_network(self):
        agent = make_agent(small_cfg(kind="sf", sc_k=3), OBS_DIM, seed=0)
        assert agent.flat.base is agent.chain_vars
        agent.chain_vars[0, 0] = 123.0
        assert agent.flat[0] == 123.0


class TestEwc:
    def test_zero_at_anchor(self):
        st = EwcState.fresh(25.0, 10, np.ones(4))
        st.fisher[:] = 1.0
        assert not ewc_penalty_grad(st, np.ones(4)).any()

    def test_substitution(self):
        st = EwcState.fresh(25.0, 10, np.zeros(3))
        st.fisher[:] = 1.0
        grad = ewc_penalty_grad(st, np.full(3, 0.1))
        assert np.allclose(grad, 2.5)

    def test_fisher_is_mean_squared_gradient(self):
        st = EwcState.fresh(25.0, 2, np.zeros(2))
        st.accumulate(np.array([1.0, 2.0]))
        st.accumulate(np.array([3.0, 0.0]))
        st.maybe_refresh(2, np.array([5.0, 5.0]))
        assert np.allclose(st.fisher, [(1 + 9) / 2, (4 + 0) / 2])
        assert np.allclose(st.anchor, 5.0)
        assert st.count == 0

    def test_lambda_zero_is_bit_identical_to_base(self):
        base = make_agent(small_cfg(kind="dqn"), OBS_DIM, seed=11)
        wrapped = make_agent(small_cfg(kind="dqn", mechanism="ewc",
                                       ewc_lambda=0.0, ewc_interval=50),
                             OBS_DIM, seed=11)
        env_a = constant_env(seed=11, steps_per_task=400)
        env_b = constant_env(seed=11, steps_per_task=400)
        drive(base, env_a, 400)
        drive(wrapped, env_b, 400)
        assert np.array_equal(base.net.flat, wrapped.net.flat)


class TestPlasticityInjection:
    def test_output_preserved_at_injection(self):
        agent = make_agent(small_cfg(kind="dqn", mechanism="pinject",
                                     inject_step=10 ** 9), OBS_DIM, seed=12)
        env = constant_env(seed=12, steps_per_task=400)
        drive(agent, env, 150)
        obs = np.random.default_rng(13).random((6, OBS_DIM))
        q_before = agent.q_values(obs)
        layer = agent._pinject_layer()
        inject_plasticity(agent.pinject, layer,
                          agent.net.weights[-1].shape[1], agent.rng_mech)
        q_after = agent.q_values(obs)
        assert np.array_equal(q_before, q_after)  # theta1' - theta2' cancels
        assert np.array_equal(agent.pinject.prime1(layer), agent.pinject.prime2)

    def test_three_term_identity_after_training(self):
        agent = make_agent(small_cfg(kind="dqn", mechanism="pinject",
                                     inject_step=100), OBS_DIM, seed=14)
        env = constant_env(seed=14, steps_per_task=400)
        drive(agent, env, 600)
        st = agent.pinject
        assert st.injected
        effective = agent._pinject_layer()
        # output - h_theta == h_theta1' - h_theta2' for the linear layer
        assert np.allclose(effective - st.frozen,
                           st.prime1(effective) - st.prime2, atol=1e-12)

    def test_double_injection_rejected(self):
        st = PInjectState(inject_step=0)
        layer = np.zeros(6)
        inject_plasticity(st, layer, 3, np.random.default_rng(0))
        with pytest.raises(RuntimeError):
            inject_plasticity(st, layer, 3, np.random.default_rng(0))

    def test_pre_injection_identical_to_base(self):
        base = make_agent(small_cfg(kind="dqn"), OBS_DIM, seed=15)
        wrapped = make_agent(small_cfg(kind="dqn", mechanism="pinject",
                                       inject_step=10_000), OBS_DIM, seed=15)
        env_a = constant_env(seed=15, steps_per_task=400)
        env_b = constant_env(seed=15, steps_per_task=400)
        drive(base, env_a, 400)
        drive(wrapped, env_b, 400)
        assert np.array_equal(base.net.flat, wrapped.net.flat)


class TestCbp:
    def make_net_and_state(self, rate=1e-4, maturity=5, decay=0.9):
        rng = np.random.default_rng(16)
        net = Mlp([4, 6, 6, 2], ["relu", "relu", "linear"])
        net.init_params(rng)
        st = CbpState.fresh(net, rate, maturity, decay)
        return net, st, rng

    def test_zero_activation_decays_utility(self):
        net, st, rng = self.make_net_and_state()
        st.layers[0].utility[:] = 1.0
        x = np.zeros((3, 4))  # relu output is zero everywhere
        _, cache = net.forward(x, want_cache=True)
        cbp_update_and_reset(st, net, cache, rng)
        # zero contribution: utility is exactly scaled by the decay
        assert np.allclose(st.layers[0].utility, 0.9)

    def test_immature_units_never_reset(self):
        net, st, rng = self.make_net_and_state(rate=1.0, maturity=100)
        x = np.random.default_rng(0).random((3, 4))
        for _ in range(10):
            _, cache = net.forward(x, want_cache=True)
            resets = cbp_update_and_reset(st, net, cache, rng)
            assert resets == []

    def test_mature_low_utility_unit_reset(self):
        net, st, rng = self.make_net_and_state(rate=0.5, maturity=2)
        x = np.random.default_rng(1).random((3, 4))
        for _ in range(8):
            _, cache = net.forward(x, want_cache=True)
            resets = cbp_update_and_reset(st, net, cache, rng)
            if resets:
                break
        assert resets
        li, unit = resets[-1]  # the last reset cannot be overwritten yet
        assert not net.weights[li + 1][:, unit].any()  # outgoing zeroed
        assert st.layers[li].age[unit] == 0
        assert st.layers[li].utility[unit] == 0.0

    def test_rate_zero_is_bit_identical_to_base(self):
        base = make_agent(small_cfg(kind="dqn"), OBS_DIM, seed=17)
        wrapped = make_agent(small_cfg(kind="dqn", mechanism="cbp",
                                       cbp_rate=0.0), OBS_DIM, seed=17)
        env_a = constant_env(seed=17, steps_per_task=400)
        env_b = constant_env(seed=17, steps_per_task=400)
        drive(base, env_a, 400)
        drive(wrapped, env_b, 400)
        assert np.array_equal(base.net.flat, wrapped.net.flat)

    def test_paper_defaults(self):
        cfg = AgentConfig(kind="dqn", mechanism="cbp")
        assert cfg.cbp_rate == 1e-4
        assert cfg.cbp_maturity == 1000


class TestDqn:
    def test_terminal_batch_targets_equal_rewards(self):
        agent = make_agent(small_cfg(kind="dqn"), OBS_DIM, seed=18)
        rng = np.random.default_rng(19)
        s = rng.random((4, OBS_DIM))
        r = rng.normal(size=4)
        done = np.ones(4, dtype=bool)
        y = td_target(r, np.full(4, 99.0), done, agent.cfg.gamma)
        assert np.array_equal(y, r)

    def test_tau_one_copies_online(self):
        agent = make_agent(small_cfg(kind="dqn", target_tau=1.0,
                                     target_sync=10**9), OBS_DIM, seed=20)
        env = constant_env(seed=20, steps_per_task=400)
        drive(agent, env, 80)  # past min fill, with train steps
        assert np.allclose(agent.net.flat, agent.target_net.flat)

    def test_fixed_seed_reproducible(self):
        runs = []
        for _ in range(2):
            agent = make_agent(small_cfg(kind="dqn"), OBS_DIM, seed=21)
            env = constant_env(seed=21, steps_per_task=400)
            drive(agent, env, 300)
            runs.append(agent.net.flat.copy())
        assert np.array_equal(runs[0], runs[1])

    def test_dqn_sc_chain_runs(self):
        agent = make_agent(small_cfg(kind="dqn", sc_k=5), OBS_DIM, seed=22)
        env = constant_env(seed=22, steps_per_task=400)
        drive(agent, env, 200)
        assert agent.chain_vars.shape[0] == 5
        spread = np.abs(agent.chain_vars[0] - agent.chain_vars[-1]).max()
        assert spread > 0  # the chain actually differentiated
