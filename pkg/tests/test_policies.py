import numpy as np
import pytest

from forkrl.experts import ExpertKind, NeuralPolicy, PolicyNet
from forkrl.planner import PlannerPhase, PlannerStatus
from forkrl.policies import ExpertPolicies
from forkrl.sensors import observe
from forkrl.sim import Action, reset


class Constant:
    def __init__(self, action):
        self.action = action
        self.calls = 0

    def act(self, status, state, rng):
        self.calls += 1
        return self.action


@pytest.fixture
def nets(settings):
    return {k: PolicyNet(k, settings.experts, settings.env, seed=i)
            for i, k in enumerate((ExpertKind.NAVIGATION, ExpertKind.PICKING, ExpertKind.PLACING))}


def test_routes_each_phase_to_its_expert(settings, nets):
    experts = ExpertPolicies(nets, settings)
    assert experts.kind_for(PlannerStatus(PlannerPhase.DEPARTURE)) == ExpertKind.NAVIGATION
    assert experts.kind_for(PlannerStatus(PlannerPhase.TRANSPORT)) == ExpertKind.NAVIGATION
    assert experts.kind_for(PlannerStatus(PlannerPhase.SEARCH_PICK)) == ExpertKind.PICKING
    assert experts.policy_for(PlannerStatus(PlannerPhase.PLACEMENT)).net is nets[ExpertKind.PLACING]
    assert experts.kind_for(PlannerStatus(PlannerPhase.DONE)) is None


def test_deterministic_action_is_the_policy_mean(settings, nets):
    state = reset(settings.env, 0)
    status = PlannerStatus(PlannerPhase.DEPARTURE, 0, state.transfer_zone.pose)
    action = ExpertPolicies(nets, settings).act(status, state)
    want = NeuralPolicy(nets[ExpertKind.NAVIGATION]).act(observe(state, settings.env, status.goal))
    assert action.as_list() == pytest.approx(want.as_list())
    assert action.h_dot == 0.0 and not action.clamp_trigger


def test_sampled_actions_depend_on_the_rng(settings, nets):
    state = reset(settings.env, 0)
    status = PlannerStatus(PlannerPhase.DEPARTURE, 0, state.transfer_zone.pose)
    experts = ExpertPolicies(nets, settings)
    a = experts.act(status, state, np.random.default_rng(0))
    b = experts.act(status, state, np.random.default_rng(0))
    c = experts.act(status, state, np.random.default_rng(1))
    assert a.as_list() == b.as_list()
    assert a.as_list() != c.as_list()


def test_absorbing_phase_holds_still(settings, nets):
    state = reset(settings.env, 0)
    assert ExpertPolicies(nets, settings).act(PlannerStatus(PlannerPhase.ABORT), state).as_list() == [0, 0, 0, 0]


def test_missing_expert_uses_the_fallback(settings, nets):
    fallback = Constant(Action(0.3, 0.0, 0.0, False))
    experts = ExpertPolicies({ExpertKind.PICKING: nets[ExpertKind.PICKING]}, settings, fallback=fallback)
    state = reset(settings.env, 0)
    assert experts.act(PlannerStatus(PlannerPhase.DEPARTURE), state).v_cmd == 0.3
    assert fallback.calls == 1
    with pytest.raises(KeyError):
        ExpertPolicies({}, settings).act(PlannerStatus(PlannerPhase.DEPARTURE), state)


def test_flat_network_acts_in_every_phase(settings):
    flat = PolicyNet(ExpertKind.FLAT, settings.experts, settings.env, seed=0)
    experts = ExpertPolicies({ExpertKind.FLAT: flat}, settings, flat=True)
    for phase in (PlannerPhase.DEPARTURE, PlannerPhase.SEARCH_PICK, PlannerPhase.PLACEMENT):
        assert experts.policy_for(PlannerStatus(phase)).net is flat
    with pytest.raises(ValueError):
        ExpertPolicies({}, settings, flat=True)
