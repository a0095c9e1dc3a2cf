import numpy as np
import pytest
from hypothesis import given, strategies as st

from hybridctl import imitation as I
from hybridctl import plant as P
from hybridctl import td3
from hybridctl.pid import PidGains
from hybridctl.td3 import ReplayBuffer, Td3Config, Td3Nets, Transition


def make_nets(residual=True, **kw):
    cfg = Td3Config(residual=residual, actor_hidden=(6, 4), critic_hidden=(8, 6), **kw)
    return Td3Nets(4, 2, cfg, seed=0)


def buffer(n, tag, seed=0, hidden=-1):
    rng = np.random.default_rng(seed)
    b = ReplayBuffer(n, 4, tag=tag)
    for _ in range(n):
        b.add(Transition(rng.normal(1, 0.1, 4), 0.0 if tag == "expert" else rng.uniform(-0.1, 0.1),
                         rng.uniform(0.2, 0.8), -rng.random(), rng.normal(1, 0.1, 4), False,
                         rng.uniform(0.2, 0.8), hidden))
    return b


def test_bc_loss_zero_when_actor_matches_label():
    nets = make_nets(residual=False)
    b = buffer(16, "expert").batch()
    a = nets.policy(b.s)
    b.a_expert = a.copy()
    loss, grad = I.bc_loss(b, nets)
    assert loss == pytest.approx(0.0, abs=1e-20)
    assert np.allclose(grad, 0.0)


def test_bc_gradient_matches_finite_differences():
    nets = make_nets(residual=False)
    b = buffer(8, "expert").batch()
    _, grad = I.bc_loss(b, nets)
    eps = 1e-6
    rng = np.random.default_rng(0)
    for k in rng.choice(nets.actor.size, 15, replace=False):
        old = nets.actor.theta[k]
        nets.actor.theta[k] = old + eps
        fp = I.bc_objective(b, nets, nets.policy(b.s))[0]
        nets.actor.theta[k] = old - eps
        fm = I.bc_objective(b, nets, nets.policy(b.s))[0]
        nets.actor.theta[k] = old
        assert grad[k] == pytest.approx((fp - fm) / (2 * eps), rel=1e-4, abs=1e-10)


def test_residual_label_is_zero_and_only_expert_rows_count():
    nets = make_nets(residual=True)
    e, a = buffer(4, "expert").batch(), buffer(4, "agent", seed=1).batch()
    np.testing.assert_array_equal(I.bc_label(e, nets), 0.0)
    mixed = td3.Batch.concat([e, a])
    act = nets.policy(mixed.s)
    loss, d = I.bc_objective(mixed, nets, act)
    assert np.all(d[4:] == 0)
    assert loss == pytest.approx(0.5 * np.mean(act[:4] ** 2))


def test_col_loss_is_sum_of_parts_and_leaves_parameters():
    nets = make_nets()
    b = td3.Batch.concat([buffer(8, "expert").batch(), buffer(8, "agent", 1).batch()])
    theta = [n.theta.copy() for n in (nets.actor, nets.critic1, nets.critic2)]
    lb = I.col_loss(b, nets)
    assert lb.total == pytest.approx(lb.l_bc + lb.l_a + lb.l_q)
    target = td3.compute_target(b, nets)
    assert lb.l_q == pytest.approx(td3.critic_loss(b, nets, target)[0])
    assert lb.l_a == pytest.approx(td3.actor_objective(b, nets, nets.policy(b.s))[0])
    for before, n in zip(theta, (nets.actor, nets.critic1, nets.critic2)):
        np.testing.assert_array_equal(before, n.theta)
    with pytest.raises(ValueError):
        I.col_loss(b.select(np.zeros(len(b), bool)), nets)


def test_col_sdrprl_requires_specialized_samples():
    nets = make_nets()
    b = buffer(8, "expert", hidden=3).batch()
    I.col_sdrprl_loss(b, nets, {3})
    assert nets.cfg.superposed is False  # restored afterwards
    b.hidden[2] = 1
    with pytest.raises(ValueError, match="specialized"):
        I.col_sdrprl_loss(b, nets, {3})


@given(st.integers(1, 512), st.floats(0.0, 1.0))
def test_split_sizes_partition_the_batch(n, ratio):
    n_e, n_a = I.split_sizes(n, ratio)
    assert n_e + n_a == n and n_e >= 0 and n_a >= 0
    assert abs(n_e - ratio * n) <= 0.5 + 1e-9


def test_mix_batch_composition_and_errors():
    rng = np.random.default_rng(0)
    mb = I.mix_batch(buffer(40, "expert"), buffer(60, "agent", 1), 64, 0.25, rng)
    assert len(mb.expert_part) == 16 and len(mb.agent_part) == 48
    assert mb.batch.is_expert.sum() == 16
    with pytest.raises(ValueError, match="insufficient"):
        I.mix_batch(buffer(10, "expert"), buffer(60, "agent", 1), 64, 0.25, rng)
    with pytest.raises(ValueError):
        I.split_sizes(64, 1.5)


def test_pretrain_zero_steps_is_identity_and_syncs_targets():
    nets = make_nets()
    theta = nets.actor.theta.copy()
    assert I.pretrain(buffer(10, "expert"), nets, 0) == []
    np.testing.assert_array_equal(theta, nets.actor.theta)
    I.pretrain(buffer(70, "expert"), nets, 4, loss="col")
    np.testing.assert_array_equal(nets.target_actor.theta, nets.actor.theta)
    np.testing.assert_array_equal(nets.target_critic2.theta, nets.critic2.theta)
    with pytest.raises(ValueError):
        I.pretrain(ReplayBuffer(5, 4, "expert"), nets, 3)
    with pytest.raises(ValueError):
        I.pretrain(buffer(10, "expert"), nets, 3, loss="dagger")


def test_collect_expert_marks_agent_action_zero():
    cfg = P.siso_config(episode_hours=0.5)
    d = P.DisturbanceProfile(0.65, t_on=10, t_off=30)
    data = I.collect_expert(cfg, d, PidGains(), episodes=2, seed=0)
    b = data.buffer.batch()
    assert len(b) == 2 * cfg.n_steps
    assert np.all(b.a_agent == 0) and np.all(b.is_expert)
    # a_expert_next of each transition is the next step's expert action
    ep0 = data.episodes[0]
    np.testing.assert_allclose(b.a_expert_next[: cfg.n_steps - 1], ep0.a_expert[1:])
    U, Y = data.sequences()[0]
    assert U.shape == (cfg.n_steps - 1, 1) and Y.shape == (cfg.n_steps - 1, 1)


@pytest.fixture(scope="module")
def exp1_pretrained():
    from hybridctl import harness as H
    from hybridctl.config import exp1_config, variant

    cfg = exp1_config()
    expert = H.collect(cfg)
    held = I.collect_expert(cfg.plant, cfg.disturbance, cfg.pid, 3, 4242, gamma=cfg.td3.gamma)
    out = {}
    for name in ("CoL", "CoL+RPTD3"):
        nets = H.make_nets(cfg, variant(name), 1)
        I.pretrain(expert.buffer, nets, cfg.pretrain_steps, loss="col", seed=2)
        out[name] = nets
    return cfg, held, out


def returns_to_go(rewards, gamma):
    g, acc = np.zeros(len(rewards)), 0.0
    for t in range(len(rewards) - 1, -1, -1):
        acc = rewards[t] + gamma * acc
        g[t] = acc
    return g


@pytest.mark.parametrize("name", ["CoL", "CoL+RPTD3"])
def test_col_pretraining_clones_expert_on_held_out_states(exp1_pretrained, name):
    _, held, nets = exp1_pretrained
    nets = nets[name]
    b = held.buffer.batch()
    gap = np.mean(np.abs(nets.policy(b.s) - I.bc_label(b, nets)))
    assert gap < 0.05


def test_pretrained_critic_ranks_held_out_expert_returns(exp1_pretrained):
    from scipy.stats import spearmanr

    cfg, held, nets = exp1_pretrained
    nets = nets["CoL"]  # the actuator-owning critic scores Q(s, a^E) on expert rows
    b = held.buffer.batch()
    q = nets.q(nets.critic1, b.s, nets.critic_action(nets.stored_action(b), b.a_expert))
    g = np.concatenate([returns_to_go(lg.reward, cfg.td3.gamma) for lg in held.episodes])
    rho = spearmanr(q, g).statistic
    assert rho > 0
    assert rho == pytest.approx(0.064, abs=0.01)  # frozen at the preset seeds
