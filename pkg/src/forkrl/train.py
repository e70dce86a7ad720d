"""
Two-phase training: behavioral cloning of the heuristic demonstrations, then
per-expert PPO refinement under planner control.

  mode        phase 1 (BC)   phase 2 (PPO)   execution at eval
  hbc         yes            no              planner
  flat-bc     yes (flat)     no              planner, flat net in every phase
  hrl         no             yes             planner
  hmer        yes            yes             planner
  seq-hybrid  yes            yes             fixed sequence
"""
import logging
import math
import pathlib

import numpy as np
import pandas as pd
from tqdm import tqdm

from .bc import bc_train
from .checkpoint import load_checkpoint, read_manifest, restore, save_checkpoint, write_manifest
from .config import Settings
from .demos import read_demonstrations
from .errors import MissingDemosError
from .evaluate import FLOAT_FORMAT, episode_seeds, run_seeds
from .experts import HIERARCHICAL, ExpertKind, PolicyNet
from .heuristics import HeuristicExperts
from .nn import Adam
from .planner import subtask_bounds
from .policies import ExpertPolicies
from .ppo import lr_schedule, ppo_update
from .rewards import RewardNormalizer
from .rollout import RolloutEnvs, collect_rollouts

log = logging.getLogger(__name__)

BC_MODES = ('hbc', 'flat-bc')
PPO_MODES = ('hmer', 'hrl', 'seq-hybrid')
MODES = BC_MODES + PPO_MODES

_SUBTASK_KINDS = {
    'full': HIERARCHICAL,
    'pick': (ExpertKind.PICKING,),
    'place': (ExpertKind.PLACING,),
}

DIAG_KEYS = ('loss', 'policy_loss', 'value_loss', 'entropy', 'clip_fraction', 'approx_kl')


def trained_kinds(mode: str, subtask: str = 'full') -> tuple[ExpertKind, ...]:
    if mode not in MODES:
        raise ValueError(f"unknown training mode {mode!r}; expected one of {MODES}")
    subtask_bounds(subtask)
    if mode == 'flat-bc':
        return (ExpertKind.FLAT,)
    return _SUBTASK_KINDS[subtask]


def exec_mode_for(mode: str) -> str:
    return 'fixed-sequence' if mode == 'seq-hybrid' else 'planner'


def fresh_nets(settings: Settings, kinds, seed: int) -> dict[ExpertKind, PolicyNet]:
    return {k: PolicyNet(k, settings.experts, settings.env, seed=seed + i) for i, k in enumerate(kinds)}


def load_init(manifest, settings: Settings, kinds) -> dict[ExpertKind, PolicyNet]:
    entries = read_manifest(manifest)
    nets = fresh_nets(settings, kinds, 0)
    for kind, net in nets.items():
        if str(kind) not in entries:
            log.warning("%s has no %s checkpoint; starting that expert from scratch", manifest, kind)
            continue
        params, _, _ = load_checkpoint(entries[str(kind)])
        restore(net.parameters(), params, entries[str(kind)])
    return nets


def save_nets(out_dir, nets: dict[ExpertKind, PolicyNet], settings: Settings, meta: dict,
              adams: dict[ExpertKind, Adam] | None = None, step: int = 0) -> pathlib.Path:
    out = pathlib.Path(out_dir)
    entries = {}
    for kind, net in nets.items():
        path = save_checkpoint(out / f'{kind}.npz', net.parameters(), (adams or {}).get(kind), step,
                               {'kind': str(kind), 'config_hash': settings.digest})
        entries[str(kind)] = path.name
    return write_manifest(out, entries, {'config_hash': settings.digest, 'step': step, **meta})


# ------------------------------- phase 1 ------------------------------------ #

def train_bc(settings: Settings, mode: str, demos, out_dir, seed: int = 42, subtask: str = 'full',
             progress: bool = False) -> tuple[dict[ExpertKind, PolicyNet], pd.DataFrame]:
    """BC for every expert the mode trains; writes checkpoints, manifest and the per-epoch NLL log."""
    if demos is None or not pathlib.Path(demos).exists():
        raise MissingDemosError(f"demonstration dataset not found: {demos}")
    dataset = read_demonstrations(demos, expected_hash=settings.digest)
    kinds = trained_kinds(mode, subtask)
    nets = fresh_nets(settings, kinds, seed)
    history = {}
    for kind, net in nets.items():
        _, history[f'{kind}_nll'] = bc_train(net, dataset, settings.bc, seed, progress)
    frame = pd.DataFrame({'epoch': np.arange(1, settings.bc.epochs + 1), **history})
    out = pathlib.Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    frame.to_csv(out / 'bc_metrics.csv', index=False, float_format=FLOAT_FORMAT)
    bc_method = 'flat-bc' if mode == 'flat-bc' else 'hbc'
    save_nets(out, nets, settings, {'method': bc_method, 'exec_mode': 'planner', 'subtask': subtask,
                                    'bc_epochs': settings.bc.epochs, 'ppo_steps': 0})
    log.info("BC (%s) done for %s", mode, ', '.join(map(str, nets)))
    return nets, frame


# ------------------------------- phase 2 ------------------------------------ #

def eval_snapshot(nets, settings: Settings, seeds, exec_mode: str, subtask: str) -> float:
    experts = ExpertPolicies(nets, settings, fallback=HeuristicExperts(settings))
    traces = run_seeds(experts, settings, seeds, exec_mode, subtask)
    return float(np.mean([tr.success for tr in traces]))


def train_ppo(settings: Settings, mode: str, out_dir, init=None, steps: int | None = None,
              seed: int = 42, subtask: str = 'full', progress: bool = False) -> pd.DataFrame:
    """
    PPO from the `init` manifest (hmer, seq-hybrid) or from random weights (hrl).
    Each expert is updated independently on its own buffer. Returns the metrics log.
    """
    if mode not in PPO_MODES:
        raise ValueError(f"PPO training supports {PPO_MODES}, got {mode!r}")
    h = settings.ppo
    kinds = trained_kinds(mode, subtask)
    total = int(steps if steps is not None else h.total_steps)
    if total <= 0:
        raise ValueError(f"steps must be positive, got {total}")
    if mode == 'hrl':
        nets = fresh_nets(settings, kinds, seed)
    elif init is None:
        raise MissingDemosError(f"{mode} starts from BC weights: pass --init <bc manifest>")
    else:
        nets = load_init(init, settings, kinds)

    out = pathlib.Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    exec_mode = exec_mode_for(mode)
    meta = {'method': mode, 'exec_mode': exec_mode, 'subtask': subtask, 'init': str(init) if init else None}
    start, stop = subtask_bounds(subtask)
    envs = RolloutEnvs(settings, h.n_env, seed, 'planner', start, stop,
                       fallback_factory=lambda: HeuristicExperts(settings))
    adams = {k: Adam(n.parameters(), lr=h.lr) for k, n in nets.items()}
    normalizer = RewardNormalizer(settings.rewards)
    rng = np.random.default_rng([seed, 2])
    eval_seeds = episode_seeds(seed + 1, h.eval_episodes)

    rows = [{'step': 0, 'iteration': 0, 'lr': h.lr,
             'success_rate': eval_snapshot(nets, settings, eval_seeds, exec_mode, subtask)}]
    iterations = math.ceil(total / (h.steps_per_env * h.n_env))
    done_steps = 0
    recent: list[bool] = []
    for it in tqdm(range(1, iterations + 1), desc=f'ppo {mode}', disable=not progress):
        lr = lr_schedule(min(done_steps, total), total, h.lr)
        rollout = collect_rollouts(nets, envs, h.steps_per_env, normalizer, rng)
        done_steps += rollout.steps
        recent = (recent + [tr.success for tr in rollout.finished])[-100:]
        row = {'step': done_steps, 'iteration': it, 'lr': lr,
               'train_success_rate': float(np.mean(recent)) if recent else np.nan}
        for kind, buf in rollout.buffers.items():
            row[f'{kind}_samples'] = len(buf)
            if len(buf) == 0:
                continue
            diag = ppo_update(nets[kind], adams[kind], buf.to_batch(h.gamma, h.gae_lambda), h, lr, rng)
            row.update({f'{kind}_{k}': diag[k] for k in DIAG_KEYS})
        if it % h.eval_interval == 0 or it == iterations:
            row['success_rate'] = eval_snapshot(nets, settings, eval_seeds, exec_mode, subtask)
            save_nets(out / 'snapshots' / f'step_{done_steps:09d}', nets, settings, meta, adams, done_steps)
            log.info("ppo %s iteration %d step %d: eval success %.3f", mode, it, done_steps, row['success_rate'])
        rows.append(row)

    save_nets(out, nets, settings, {**meta, 'ppo_steps': done_steps}, adams, done_steps)
    frame = pd.DataFrame(rows)
    frame.to_csv(out / 'metrics.csv', index=False, float_format=FLOAT_FORMAT)
    return frame


def train_hmer(settings: Settings, mode: str, out_dir, demos=None, init=None, steps: int | None = None,
               seed: int = 42, subtask: str = 'full', progress: bool = False) -> pathlib.Path:
    """Runs whichever phases `mode` needs and returns the final checkpoint manifest."""
    trained_kinds(mode, subtask)
    out = pathlib.Path(out_dir)
    if mode in BC_MODES:
        train_bc(settings, mode, demos, out, seed, subtask, progress)
        return out / 'manifest.json'
    if mode != 'hrl' and init is None:
        train_bc(settings, 'hbc', demos, out / 'bc', seed, subtask, progress)
        init = out / 'bc'
    train_ppo(settings, mode, out, init, steps, seed, subtask, progress)
    return out / 'manifest.json'
