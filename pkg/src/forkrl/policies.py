"""Expert sets that the planner can drive: neural experts, optionally backed by the heuristics."""
import logging

import numpy as np

from .config import Settings
from .experts import ExpertKind, NeuralPolicy, PolicyNet
from .planner import ExpertSet, PlannerStatus, active_expert
from .sensors import observe
from .sim import Action, WorldState

log = logging.getLogger(__name__)


class ExpertPolicies:
    """
    Routes each planner phase to its neural expert. With `flat` set, the single
    flat network acts in every phase. Phases whose expert is missing are
    delegated to `fallback` (the heuristics in sub-task runs).
    """

    def __init__(self, nets: dict[ExpertKind, PolicyNet], settings: Settings,
                 fallback: ExpertSet | None = None, flat: bool = False):
        self.settings = settings
        self.policies = {ExpertKind(k): NeuralPolicy(n) for k, n in nets.items()}
        self.fallback = fallback
        self.flat = flat
        if flat and ExpertKind.FLAT not in self.policies:
            raise ValueError("flat execution needs a 'flat' network")

    def kind_for(self, status: PlannerStatus) -> ExpertKind | None:
        kind = active_expert(status.phase)
        if kind is None:
            return None
        return ExpertKind.FLAT if self.flat else kind

    def policy_for(self, status: PlannerStatus) -> NeuralPolicy | None:
        kind = self.kind_for(status)
        return self.policies.get(kind) if kind is not None else None

    def act(self, status: PlannerStatus, state: WorldState, rng: np.random.Generator | None = None) -> Action:
        kind = self.kind_for(status)
        if kind is None:
            return Action()
        policy = self.policies.get(kind)
        if policy is None:
            if self.fallback is None:
                raise KeyError(f"no {kind} expert loaded and no fallback configured")
            return self.fallback.act(status, state, rng)
        obs = observe(state, self.settings.env, status.goal)
        return policy.decide_batch([obs], rng, deterministic=rng is None)[0].action
