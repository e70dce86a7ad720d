import itertools
import json
from dataclasses import fields

import pytest

from forkrl.errors import PlannerError
from forkrl.experts import ExpertKind
from forkrl.planner import (ABSORBING, Episode, PlannerPhase, PlannerStatus, SemanticState, active_expert,
                            fixed_sequence_transition, run_episode, subtask_bounds, termination_check, transition,
                            write_traces)
from forkrl.sim import Action, clamp_eligible

P = PlannerPhase


class Idle:
    def act(self, status, state, rng):
        return Action()


@pytest.mark.parametrize('phase, predicates, want', [
    (P.DEPARTURE, SemanticState(at_transfer_zone=True), P.SEARCH_PICK),
    (P.SEARCH_PICK, SemanticState(cargo_clamped=True), P.TRANSPORT),
    (P.TRANSPORT, SemanticState(at_goal_zone=True), P.PLACEMENT),
    (P.PLACEMENT, SemanticState(placed_ok=True), P.DONE),
    (P.TRANSPORT, SemanticState(timed_out=True), P.ABORT),
    (P.DEPARTURE, SemanticState(), P.DEPARTURE),
    (P.DEPARTURE, SemanticState(at_goal_zone=True), P.DEPARTURE),
])
def test_transition_table(phase, predicates, want):
    nxt, expert = transition(PlannerStatus(phase), predicates, 3)
    assert nxt.phase == want
    assert expert == active_expert(want)


@pytest.mark.parametrize('phase', [P.DEPARTURE, P.SEARCH_PICK, P.TRANSPORT, P.PLACEMENT])
def test_collision_aborts(phase):
    nxt, expert = transition(PlannerStatus(phase), SemanticState(collided=True, at_transfer_zone=True), 3)
    assert nxt.phase == P.ABORT and expert is None


def test_clamp_failure_retries_then_aborts():
    status = PlannerStatus(P.SEARCH_PICK)
    for attempt in range(1, 4):
        status, expert = transition(status, SemanticState(clamp_failed=True), 3)
        assert status.phase == P.SEARCH_PICK and status.retry_count == attempt
        assert expert == ExpertKind.PICKING
    status, _ = transition(status, SemanticState(clamp_failed=True), 3)
    assert status.phase == P.ABORT


def test_no_retries_allowed():
    status, _ = transition(PlannerStatus(P.SEARCH_PICK), SemanticState(clamp_failed=True), 0)
    assert status.phase == P.ABORT


@pytest.mark.parametrize('phase', sorted(ABSORBING))
def test_absorbing_phases_raise(phase):
    with pytest.raises(PlannerError):
        transition(PlannerStatus(phase), SemanticState(), 3)
    with pytest.raises(PlannerError):
        fixed_sequence_transition(PlannerStatus(phase), SemanticState(), 0, 10)


def test_termination_check():
    assert termination_check(PlannerStatus(P.DEPARTURE), SemanticState(at_transfer_zone=True), 3)
    assert not termination_check(PlannerStatus(P.DEPARTURE), SemanticState(), 3)
    assert termination_check(PlannerStatus(P.SEARCH_PICK), SemanticState(clamp_failed=True), 3)


def test_active_expert_mapping():
    assert active_expert(P.DEPARTURE) == active_expert(P.TRANSPORT) == ExpertKind.NAVIGATION
    assert active_expert(P.SEARCH_PICK) == ExpertKind.PICKING
    assert active_expert(P.PLACEMENT) == ExpertKind.PLACING
    assert active_expert(P.DONE) is None and active_expert(P.ABORT) is None


def test_fixed_sequence_advances_on_budget_without_recovery():
    status = PlannerStatus(P.DEPARTURE)
    assert fixed_sequence_transition(status, SemanticState(), 5, 10) == status
    assert fixed_sequence_transition(status, SemanticState(), 10, 10).phase == P.SEARCH_PICK
    # a failed grasp ends the pick phase instead of retrying
    pick = PlannerStatus(P.SEARCH_PICK)
    assert fixed_sequence_transition(pick, SemanticState(clamp_failed=True), 1, 10).phase == P.TRANSPORT
    assert fixed_sequence_transition(PlannerStatus(P.PLACEMENT), SemanticState(), 10, 10).phase == P.ABORT


def test_idle_episode_times_out(short_settings):
    trace = run_episode(Idle(), short_settings, seed=1)
    assert trace.outcome == 'timeout'
    assert trace.steps == short_settings.env.t_max
    assert trace.cycle_time == 0.0 and trace.place_error is None
    assert trace.final_phase == 'abort'


class Grabber:
    """Pulls the clamp every tick without moving."""

    def act(self, status, state, rng):
        return Action(clamp_trigger=True)


def test_spent_retries_are_reported_as_aborted(short_settings):
    ep = Episode(short_settings, 2, start_phase=P.SEARCH_PICK)
    assert clamp_eligible(ep.state, short_settings.env) is None
    trace = run_episode(Grabber(), short_settings, seed=2, start_phase=P.SEARCH_PICK)
    max_retries = short_settings.planner.max_retries
    assert trace.outcome == 'aborted'
    assert trace.final_phase == 'abort'
    assert trace.retries == max_retries
    assert trace.steps == max_retries + 1


def test_fixed_sequence_episode_walks_the_schedule(short_settings):
    trace = run_episode(Idle(), short_settings, 'fixed-sequence', seed=1)
    # 40 steps with a 10-step budget per phase: every phase is visited once
    assert [span.phase for span in trace.phases] == ['departure', 'search_pick', 'transport', 'placement']
    assert trace.outcome == 'timeout'


def test_episode_rejects_unknown_mode(settings):
    with pytest.raises(ValueError):
        Episode(settings, 0, mode='teleport')


def test_sub_task_start(settings):
    ep = Episode(settings, 0, start_phase=P.PLACEMENT)
    assert ep.status.phase == P.PLACEMENT
    assert ep.expert == ExpertKind.PLACING
    assert ep.state.forklift.carrying is not None


def test_on_step_sees_every_state(short_settings):
    seen = []
    run_episode(Idle(), short_settings, seed=2, on_step=lambda s: seen.append(s.t))
    assert seen == list(range(short_settings.env.t_max + 1))


def test_trace_file(tmp_path, short_settings):
    trace = run_episode(Idle(), short_settings, seed=3, record=True)
    path = write_traces(tmp_path / 'traces.jsonl', [trace])
    lines = [json.loads(line) for line in path.read_text().splitlines()]
    assert lines[0]['type'] == 'episode' and lines[0]['seed'] == 3
    assert sum(1 for rec in lines if rec['type'] == 'step') == short_settings.env.t_max


def test_subtask_bounds():
    assert subtask_bounds('full') == (P.DEPARTURE, None)
    assert subtask_bounds('pick') == (P.SEARCH_PICK, P.TRANSPORT)
    with pytest.raises(ValueError):
        subtask_bounds('lunch')


def _all_predicates():
    names = [f.name for f in fields(SemanticState)]
    for bits in itertools.product((False, True), repeat=len(names)):
        yield SemanticState(**dict(zip(names, bits)))


@pytest.mark.parametrize('retries', [0, 2, 3])
@pytest.mark.parametrize('phase', [P.DEPARTURE, P.SEARCH_PICK, P.TRANSPORT, P.PLACEMENT])
def test_exhaustive_transition_safety(phase, retries):
    order = {p: i for i, p in enumerate((P.DEPARTURE, P.SEARCH_PICK, P.TRANSPORT, P.PLACEMENT, P.DONE))}
    for s in _all_predicates():
        nxt, expert = transition(PlannerStatus(phase, retries), s, 3)
        if nxt.phase == P.ABORT:
            assert expert is None
            continue
        assert nxt.retry_count <= 3
        # at most one step forward along the task, never backwards
        assert order[nxt.phase] - order[phase] in (0, 1)
        if nxt.phase == P.TRANSPORT and phase == P.SEARCH_PICK:
            assert s.cargo_clamped
        if nxt.phase == P.DONE:
            assert s.placed_ok and phase == P.PLACEMENT
        assert expert == active_expert(nxt.phase)
