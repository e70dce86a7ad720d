import copy
import pathlib

import pytest
import yaml

from forkrl.config import Settings
from forkrl.demos import Demonstration, DemoStep, write_demonstrations
from forkrl.heuristics import HeuristicExperts
from forkrl.planner import Episode, PlannerPhase

ROOT = pathlib.Path(__file__).resolve().parents[1]
CONFIG = ROOT / 'config.yaml'


def small_config() -> dict:
    """The default world with tiny networks and short training loops."""
    with CONFIG.open() as f:
        cfg = yaml.safe_load(f)
    cfg = copy.deepcopy(cfg)
    cfg['experts'] = {
        'hidden': [16, 16],
        'nav': {'conv_channels': [4, 4, 4], 'conv_kernels': [8, 4, 3], 'conv_strides': [4, 2, 1]},
        'pick': {'conv_channels': [4, 4, 4], 'conv_kernels': [4, 3, 3], 'conv_strides': [2, 2, 1]},
        'place': {'encoder': [16, 16]},
        'init_log_std': -0.5,
        'clamp_bias': -2.0,
    }
    cfg['bc'] = {'lr': 1e-3, 'epochs': 2, 'minibatch': 32, 'max_samples': 200}
    cfg['ppo'].update({'batch': 32, 'minibatch': 16, 'epochs': 2, 'n_env': 2,
                       'eval_interval': 1, 'eval_episodes': 1, 'total_steps': 64})
    cfg['eval'].update({'episodes': 2, 'bootstrap_resamples': 200})
    return cfg


@pytest.fixture
def small_cfg() -> dict:
    return small_config()


@pytest.fixture
def settings() -> Settings:
    return Settings.from_dict(small_config())


@pytest.fixture
def short_settings() -> Settings:
    """Episodes time out after 40 steps, for loops that only need a few transitions."""
    cfg = small_config()
    cfg['env']['t_max'] = 40
    return Settings.from_dict(cfg)


@pytest.fixture
def config_file(tmp_path, small_cfg) -> pathlib.Path:
    path = tmp_path / 'config.yaml'
    path.write_text(yaml.safe_dump(small_cfg))
    return path


def heuristic_steps(settings: Settings, seed: int, phase: PlannerPhase, n: int) -> list[DemoStep]:
    """Up to n rule-based control steps from a sub-task start."""
    ep = Episode(settings, seed, start_phase=phase)
    experts = HeuristicExperts(settings)
    steps = []
    while not ep.done and len(steps) < n:
        status, state = ep.status, ep.state
        action = experts.act(status, state)
        steps.append(DemoStep(state.t, status.phase.value, str(ep.expert), status.goal, action, state))
        ep.advance(action)
    return steps


def short_demos(settings: Settings, count: int = 2, per_phase: int = 12) -> list[Demonstration]:
    """Demonstrations stitched from short runs of every phase, so each expert has samples."""
    demos = []
    for i in range(count):
        steps = [s for phase in (PlannerPhase.DEPARTURE, PlannerPhase.SEARCH_PICK, PlannerPhase.PLACEMENT)
                 for s in heuristic_steps(settings, i, phase, per_phase)]
        demos.append(Demonstration(i, i, True, 0.01, 1.0, steps))
    return demos


@pytest.fixture
def demo_file(tmp_path, settings) -> pathlib.Path:
    return write_demonstrations(tmp_path / 'demos.jsonl', short_demos(settings),
                                {'config_hash': settings.digest, 'seed': 0, 'episodes': 2})
