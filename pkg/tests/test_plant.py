import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hybridctl import plant as P


def quiet(**kw):
    return P.siso_config(noise_sd=0.0, **kw)


def test_reward_examples():
    assert P.reward([1.0], [1.0]) == 0.0
    assert P.reward([1.2, -0.1], [1.0, 0.0]) == pytest.approx(-0.3)
    with pytest.raises(P.PlantError):
        P.reward([1.0, 2.0], [1.0])


@given(st.lists(st.floats(-5, 5), min_size=1, max_size=6))
def test_reward_nonpositive_and_zero_only_at_setpoint(ys):
    y = np.array(ys)
    assert P.reward(y, y) == 0.0
    assert P.reward(y + 0.5, y) < 0


def test_observation_shape_and_zero_padding():
    cfg = quiet()
    s = P.reset(cfg, P.DisturbanceProfile(0.0), seed=0)
    obs = P.build_observation(s)
    assert obs.shape == (cfg.obs_size,) == (4,)
    # oldest slot is the zero pad, newest holds y0 and no expert action yet
    np.testing.assert_array_equal(obs, [0.0, 0.0, 1.0, 0.0])


def test_observation_carries_previous_expert_action():
    cfg = quiet()
    s = P.reset(cfg, P.DisturbanceProfile(0.0), seed=0)
    r1 = P.step(s, 0.3, 0.3)
    r2 = P.step(s, 0.25, 0.28)
    np.testing.assert_allclose(r2.observation, [r1.info["y"][0], 0.3, r2.info["y"][0], 0.28])


def test_equilibrium_holds_without_disturbance():
    cfg = quiet()
    s = P.reset(cfg, P.DisturbanceProfile(0.0), seed=1)
    u = 1.0 / 3.4
    for _ in range(50):
        res = P.step(s, u, u)
    assert res.reward == pytest.approx(0.0, abs=1e-12)


def test_disturbance_window_and_magnitude():
    cfg = quiet()
    d = P.DisturbanceProfile(0.5, t_on=3, t_off=6)
    s = P.reset(cfg, d, seed=0)
    active = []
    for _ in range(8):
        active.append(P.step(s, 1 / 3.4, 1 / 3.4).info["disturbance"])
    assert active == [False] * 3 + [True] * 3 + [False] * 2
    # first-order response to the halved drive
    s = P.reset(cfg, P.DisturbanceProfile(0.5, t_on=0, t_off=10), seed=0)
    y = P.step(s, 1 / 3.4, 0).info["y"][0]
    assert y == pytest.approx(1.0 + 0.25 * (0.5 - 1.0))


def test_random_window_respects_bounds():
    d = P.DisturbanceProfile(0.65, rng_window=((50, 250), (250, 450)))
    for seed in range(30):
        s = P.reset(quiet(), d, seed)
        assert 50 <= s.t_on < 250 <= s.t_off < 450


def test_shutdown_on_bound_violation():
    cfg = quiet()
    s = P.reset(cfg, P.DisturbanceProfile(0.0), seed=0)
    res = None
    for _ in range(100):
        res = P.step(s, 0.0, 0.0)
        if res.shutdown:
            break
    assert res.shutdown and P.done(s)
    assert s.y[0] < cfg.y_low[0]
    with pytest.raises(P.PlantError):
        P.step(s, 0.0, 0.0)
    # cut-off steps at the worst in-bounds reward
    assert P.shutdown_penalty(s) == pytest.approx(P.worst_reward(cfg) * (cfg.n_steps - s.t))


def test_worst_reward_bounds_every_in_bounds_state():
    cfg = P.miso_config()
    rng = np.random.default_rng(0)
    worst = P.worst_reward(cfg)
    for _ in range(200):
        y = rng.uniform(cfg.y_low, cfg.y_high)
        assert P.reward(y, cfg.setpoint) >= worst


def test_reject_bad_config_and_actions():
    with pytest.raises(P.PlantError):
        P.siso_config(tau=[-1.0]).validate()
    with pytest.raises(P.PlantError):
        P.siso_config(setpoint=[2.0]).validate()
    with pytest.raises(P.PlantError):
        P.reset(quiet(), P.DisturbanceProfile(0.5, target_var=3), 0)
    with pytest.raises(P.PlantError):
        P.reset(quiet(), P.DisturbanceProfile(1.5), 0)
    s = P.reset(quiet(), P.DisturbanceProfile(0.0), 0)
    with pytest.raises(P.PlantError):
        P.step(s, 1.5, 0.0)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_same_seed_same_trajectory(seed):
    cfg = P.siso_config()
    d = P.DisturbanceProfile(0.65, rng_window=((50, 250), (250, 450)))
    runs = []
    for _ in range(2):
        s = P.reset(cfg, d, seed)
        ys = [P.step(s, 0.4, 0.4).info["y"][0] for _ in range(20)]
        runs.append((s.t_on, s.t_off, ys))
    assert runs[0] == runs[1]


def test_miso_feed_sensor_reads_the_loss():
    cfg = P.miso_config(noise_sd=0.0)
    s = P.reset(cfg, P.DisturbanceProfile(0.65, t_on=0, t_off=cfg.n_steps), 0)
    for _ in range(60):
        P.step(s, 1 / 3.4, 0)
    assert s.y[1] == pytest.approx(-0.65, abs=1e-6)
    assert cfg.obs_size == 18


def test_observation_scale_matches_layout():
    cfg = P.siso_config()
    c, s = P.observation_scale(cfg)
    np.testing.assert_allclose(c, [1.0, 0.5, 1.0, 0.5])
    np.testing.assert_allclose(s, [0.7, 0.5, 0.7, 0.5])
