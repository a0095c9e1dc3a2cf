import sys
from dataclasses import replace
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from hybridctl import plant as P  # noqa: E402
from hybridctl.config import IohmmSettings, exp1_config, exp2_config  # noqa: E402


def tiny(cfg, **kw):
    """Shrink a preset to a seconds-scale budget."""
    base = dict(episodes=2, eval_every=1, eval_runs=2, trace_runs=1, expert_episodes=2,
                pretrain_steps=20, value_steps=20, iohmm=IohmmSettings(n_states=2, restarts=1, max_iters=5),
                td3=replace(cfg.td3, actor_hidden=(4, 3), critic_hidden=(8, 8), batch_size=16))
    base.update(kw)
    return replace(cfg, **base)


@pytest.fixture
def tiny_exp1():
    return tiny(exp1_config(), plant=P.siso_config(episode_hours=1.0),
                disturbance=P.DisturbanceProfile(0.65, rng_window=((10, 40), (50, 90))))


@pytest.fixture
def tiny_exp2():
    return tiny(exp2_config(), plant=P.miso_config(episode_hours=1.0),
                disturbance=P.DisturbanceProfile(0.65, rng_window=((10, 40), (99, 100))))


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(mod.RESULTS):
        terminalreporter.write_line(mod.RESULTS[n])
