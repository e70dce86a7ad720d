"""
Synchronous multi-environment rollouts under planner control.

N_env episodes advance in lockstep. At every tick the environments are grouped
by their active expert and each group is decided with one batched forward pass
of that expert's (frozen) network. Transitions go to the acting expert's buffer
with the phase reward normalized by that expert's running statistics. A phase
switch closes the expert's segment: GAE treats it as done with bootstrap 0.
"""
import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .config import Settings
from .experts import ExpertKind, NeuralPolicy, PolicyNet, features, has_clamp, stack_features
from .planner import Episode, EpisodeTrace, ExpertSet, PlannerPhase
from .ppo import PPOBatch, compute_gae
from .rewards import RewardNormalizer
from .sensors import observe

log = logging.getLogger(__name__)


@dataclass
class RolloutBuffer:
    kind: ExpertKind
    inputs: list[dict[str, np.ndarray]] = field(default_factory=list)
    raw: list[np.ndarray] = field(default_factory=list)
    clamp: list[bool] = field(default_factory=list)
    logp: list[float] = field(default_factory=list)
    value: list[float] = field(default_factory=list)
    reward: list[float] = field(default_factory=list)
    norm_reward: list[float] = field(default_factory=list)
    done: list[bool] = field(default_factory=list)
    boundary: list[bool] = field(default_factory=list)
    env: list[int] = field(default_factory=list)
    bootstrap: dict[int, float] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.logp)

    def add(self, env: int, inputs, raw, clamp, logp, value, reward, norm_reward, done, boundary) -> None:
        self.env.append(env)
        self.inputs.append(inputs)
        self.raw.append(raw)
        self.clamp.append(clamp)
        self.logp.append(logp)
        self.value.append(value)
        self.reward.append(reward)
        self.norm_reward.append(norm_reward)
        self.done.append(done)
        self.boundary.append(boundary)

    def advantages(self, gamma: float, lam: float) -> tuple[np.ndarray, np.ndarray]:
        """GAE over each environment's own transition sequence, in collection order."""
        env = np.asarray(self.env)
        adv = np.zeros(len(self))
        ret = np.zeros(len(self))
        rewards = np.asarray(self.norm_reward)
        values = np.asarray(self.value)
        dones = np.asarray(self.done, dtype=float)
        for e in np.unique(env):
            idx = np.nonzero(env == e)[0]
            a, r = compute_gae(rewards[idx], values[idx], dones[idx], self.bootstrap.get(int(e), 0.0), gamma, lam)
            adv[idx], ret[idx] = a, r
        return adv, ret

    def to_batch(self, gamma: float, lam: float) -> PPOBatch:
        adv, ret = self.advantages(gamma, lam)
        inputs = stack_features(self.inputs)
        clamp = np.asarray(self.clamp, dtype=float) if has_clamp(self.kind) else None
        return PPOBatch(inputs, np.stack(self.raw), clamp, np.asarray(self.logp), adv, ret)

    def clear(self) -> None:
        for name in ('inputs', 'raw', 'clamp', 'logp', 'value', 'reward', 'norm_reward', 'done', 'boundary', 'env'):
            getattr(self, name).clear()
        self.bootstrap.clear()


@dataclass
class Rollout:
    buffers: dict[ExpertKind, RolloutBuffer]
    finished: list[EpisodeTrace]
    steps: int


class RolloutEnvs:
    """N persistent episodes; a finished one is replaced by a fresh seed from `rng`."""

    def __init__(self, settings: Settings, n_env: int, seed: int, mode: str = 'planner',
                 start_phase: PlannerPhase = PlannerPhase.DEPARTURE, stop_phase: PlannerPhase | None = None,
                 fallback_factory: Callable[[], ExpertSet] | None = None):
        self.settings = settings
        self.mode = mode
        self.start_phase, self.stop_phase = start_phase, stop_phase
        self.rng = np.random.default_rng(seed)
        self.episodes = [self._fresh() for _ in range(n_env)]
        # one controller per env: the heuristics keep per-episode memory
        self.fallbacks = [fallback_factory() for _ in range(n_env)] if fallback_factory else None

    def _fresh(self) -> Episode:
        return Episode(self.settings, int(self.rng.integers(0, 2**31)), self.mode, self.start_phase, self.stop_phase)

    def __len__(self) -> int:
        return len(self.episodes)

    def renew(self, i: int) -> EpisodeTrace:
        trace = self.episodes[i].trace
        self.episodes[i] = self._fresh()
        return trace


def collect_rollouts(nets: dict[ExpertKind, PolicyNet], envs: RolloutEnvs, steps_per_env: int,
                     normalizer: RewardNormalizer, rng: np.random.Generator) -> Rollout:
    """
    Step every environment `steps_per_env` times. Phases whose expert has no
    network are driven by the environments' fallback controllers and not recorded.
    """
    settings = envs.settings
    env_cfg = settings.env
    policies = {k: NeuralPolicy(n) for k, n in nets.items()}
    buffers = {k: RolloutBuffer(k) for k in nets}
    finished: list[EpisodeTrace] = []

    for _ in range(steps_per_env):
        groups: dict[ExpertKind, list[int]] = {}
        for i, ep in enumerate(envs.episodes):
            groups.setdefault(ep.expert, []).append(i)
        for kind in sorted(groups, key=str):
            members = groups[kind]
            if kind in policies:
                obs = [observe(envs.episodes[i].state, env_cfg, envs.episodes[i].status.goal) for i in members]
                decisions = policies[kind].decide_batch(obs, rng)
                for i, o, d in zip(members, obs, decisions):
                    res = envs.episodes[i].advance(d.action)
                    done = res.boundary or envs.episodes[i].done
                    buffers[kind].add(i, features(kind, o, env_cfg), d.raw, d.clamp, d.logp, d.value,
                                      res.reward, normalizer(kind.value, res.reward), done, res.boundary)
            else:
                for i in members:
                    ep = envs.episodes[i]
                    if envs.fallbacks is None:
                        raise KeyError(f"no network for the {kind} expert and no fallback")
                    ep.advance(envs.fallbacks[i].act(ep.status, ep.state, None))
        for i, ep in enumerate(envs.episodes):
            if ep.done:
                finished.append(envs.renew(i))

    # truncated segments bootstrap from the critic at the current state
    for kind, buf in buffers.items():
        open_envs = [e for e in range(len(envs)) if envs.episodes[e].expert == kind and _last_open(buf, e)]
        if open_envs:
            obs = [observe(envs.episodes[e].state, env_cfg, envs.episodes[e].status.goal) for e in open_envs]
            values = nets[kind].forward(stack_features([features(kind, o, env_cfg) for o in obs])).value
            buf.bootstrap.update({e: float(v) for e, v in zip(open_envs, values)})

    steps = steps_per_env * len(envs)
    log.debug("rollout: %d steps, %s", steps, {str(k): len(b) for k, b in buffers.items()})
    return Rollout(buffers, finished, steps)


def _last_open(buf: RolloutBuffer, env: int) -> bool:
    for e, d in zip(reversed(buf.env), reversed(buf.done)):
        if e == env:
            return not d
    return False
