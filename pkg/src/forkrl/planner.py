"""
Semantic task planner: a finite state machine over boolean world predicates that
decides which expert drives the forklift, when a skill terminates and when a
failed grasp is retried.

    departure --at_transfer--> search_pick --clamped--> transport --at_goal--> placement --placed--> done
                                   |  ^
                        clamp_failed  | retry (<= max_retries, else abort)
                                   +--+
    any phase --collided | timed_out--> abort
"""
import json
import logging
import pathlib
from dataclasses import asdict, dataclass, field
try:
    from enum import StrEnum
except ImportError:  # Python < 3.11
    from enum import Enum

    class StrEnum(str, Enum):
        def __str__(self) -> str:
            return str.__str__(self)

        def __format__(self, format_spec: str) -> str:
            return str.__format__(str(self), format_spec)
from typing import Callable, Protocol

import numpy as np

from .config import Settings
from .errors import PlannerError
from .experts import ExpertKind
from .geometry import Pose2D
from .rewards import phase_reward
from .sim import Action, StepEvents, WorldState, pick_pose, reset, step

log = logging.getLogger(__name__)


class PlannerPhase(StrEnum):
    DEPARTURE = 'departure'
    SEARCH_PICK = 'search_pick'
    TRANSPORT = 'transport'
    PLACEMENT = 'placement'
    DONE = 'done'
    ABORT = 'abort'


ABSORBING = frozenset({PlannerPhase.DONE, PlannerPhase.ABORT})
SEQUENCE = (PlannerPhase.DEPARTURE, PlannerPhase.SEARCH_PICK, PlannerPhase.TRANSPORT, PlannerPhase.PLACEMENT)

_EXPERT_FOR = {
    PlannerPhase.DEPARTURE: ExpertKind.NAVIGATION,
    PlannerPhase.SEARCH_PICK: ExpertKind.PICKING,
    PlannerPhase.TRANSPORT: ExpertKind.NAVIGATION,
    PlannerPhase.PLACEMENT: ExpertKind.PLACING,
}


def active_expert(phase: PlannerPhase) -> ExpertKind | None:
    return _EXPERT_FOR.get(PlannerPhase(phase))


@dataclass(frozen=True)
class SemanticState:
    at_transfer_zone: bool = False
    cargo_clamped: bool = False
    at_goal_zone: bool = False
    placed_ok: bool = False
    collided: bool = False
    timed_out: bool = False
    clamp_failed: bool = False


@dataclass(frozen=True)
class PlannerStatus:
    phase: PlannerPhase = PlannerPhase.DEPARTURE
    retry_count: int = 0
    goal: Pose2D | None = None


def evaluate_predicates(state: WorldState, events: StepEvents) -> SemanticState:
    pose = state.forklift.pose
    placed_ok = state.placed and state.place_error is not None and state.place_error <= state.goal_slot.tol
    return SemanticState(
        at_transfer_zone=state.transfer_zone.contains(pose),
        cargo_clamped=state.forklift.clamped,
        at_goal_zone=state.goal_zone.contains(pose),
        placed_ok=placed_ok,
        collided=events.collided or state.collided,
        timed_out=events.timed_out or state.timed_out,
        clamp_failed=events.clamp_failed,
    )


def phase_goals(state: WorldState, settings: Settings) -> dict[PlannerPhase, Pose2D]:
    return {
        PlannerPhase.DEPARTURE: state.transfer_zone.pose,
        PlannerPhase.SEARCH_PICK: pick_pose(state.target_cargo().pose, settings.env),
        PlannerPhase.TRANSPORT: state.goal_zone.pose,
        PlannerPhase.PLACEMENT: state.goal_slot.pose,
    }


def transition(status: PlannerStatus, s: SemanticState, max_retries: int,
               goals: dict[PlannerPhase, Pose2D] | None = None) -> tuple[PlannerStatus, ExpertKind | None]:
    phase = status.phase
    if phase in ABSORBING:
        raise PlannerError(f"transition called on absorbing phase {phase}")
    goals = goals or {}
    nxt = phase
    retries = status.retry_count
    if s.collided or s.timed_out:
        nxt = PlannerPhase.ABORT
    elif phase == PlannerPhase.DEPARTURE and s.at_transfer_zone:
        nxt = PlannerPhase.SEARCH_PICK
    elif phase == PlannerPhase.SEARCH_PICK and s.cargo_clamped:
        nxt = PlannerPhase.TRANSPORT
    elif phase == PlannerPhase.SEARCH_PICK and s.clamp_failed:
        if retries + 1 > max_retries:
            nxt = PlannerPhase.ABORT
        else:
            retries += 1
    elif phase == PlannerPhase.TRANSPORT and s.at_goal_zone:
        nxt = PlannerPhase.PLACEMENT
    elif phase == PlannerPhase.PLACEMENT and s.placed_ok:
        nxt = PlannerPhase.DONE

    if nxt == phase and retries == status.retry_count:
        return status, active_expert(phase)
    goal = goals.get(nxt, status.goal if nxt == phase else None)
    return PlannerStatus(nxt, retries, goal), active_expert(nxt)


def termination_check(status: PlannerStatus, s: SemanticState, max_retries: int) -> bool:
    nxt, _ = transition(status, s, max_retries)
    return (nxt.phase, nxt.retry_count) != (status.phase, status.retry_count)


def fixed_sequence_transition(status: PlannerStatus, s: SemanticState, steps_in_phase: int, budget: int,
                              goals: dict[PlannerPhase, Pose2D] | None = None) -> PlannerStatus:
    """Open-loop schedule: each phase ends on its own predicate or its step budget, no recovery."""
    phase = status.phase
    if phase in ABSORBING:
        raise PlannerError(f"transition called on absorbing phase {phase}")
    goals = goals or {}
    if s.collided or s.timed_out:
        return PlannerStatus(PlannerPhase.ABORT, status.retry_count, None)
    if s.placed_ok:
        return PlannerStatus(PlannerPhase.DONE, status.retry_count, None)
    finished = {
        PlannerPhase.DEPARTURE: s.at_transfer_zone,
        PlannerPhase.SEARCH_PICK: s.cargo_clamped or s.clamp_failed,
        PlannerPhase.TRANSPORT: s.at_goal_zone,
        PlannerPhase.PLACEMENT: False,
    }[phase]
    if not finished and steps_in_phase < budget:
        return status
    i = SEQUENCE.index(phase)
    if i + 1 == len(SEQUENCE):
        return PlannerStatus(PlannerPhase.ABORT, status.retry_count, None)
    nxt = SEQUENCE[i + 1]
    return PlannerStatus(nxt, status.retry_count, goals.get(nxt))


# ------------------------------- episode runner ----------------------------- #

class ExpertSet(Protocol):
    """Anything that maps (planner status, world) to a control action."""

    def act(self, status: PlannerStatus, state: WorldState, rng: np.random.Generator) -> Action: ...


@dataclass
class PhaseSpan:
    phase: str
    start: int
    end: int


@dataclass
class EpisodeTrace:
    seed: int
    mode: str
    outcome: str = 'timeout'  # success | collision | timeout | aborted (retries spent, rejected release, schedule end)
    steps: int = 0
    cycle_time: float = 0.0
    place_error: float | None = None
    retries: int = 0
    final_phase: str = PlannerPhase.DEPARTURE.value
    phases: list[PhaseSpan] = field(default_factory=list)
    records: list[dict] = field(default_factory=list)

    @property
    def success(self) -> bool:
        return self.outcome == 'success'

    def summary(self) -> dict:
        d = asdict(self)
        d.pop('records')
        return d


def _outcome(status: PlannerStatus, state: WorldState) -> str:
    if status.phase == PlannerPhase.DONE:
        return 'success'
    if state.collided:
        return 'collision'
    if state.timed_out:
        return 'timeout'
    return 'aborted'


@dataclass
class StepResult:
    phase: PlannerPhase
    expert: ExpertKind | None
    prev: WorldState
    events: StepEvents
    reward: float
    boundary: bool  # the active skill terminated on this step


class Episode:
    """
    One seeded episode under planner or fixed-sequence control, advanced one
    action at a time. mode is 'planner' (semantic FSM with retries) or
    'fixed-sequence' (open-loop phase schedule, T_max/4 steps per phase).
    Reaching stop_phase ends the episode as a success (sub-task episodes).
    """

    def __init__(self, settings: Settings, seed: int, mode: str = 'planner',
                 start_phase: PlannerPhase = PlannerPhase.DEPARTURE,
                 stop_phase: PlannerPhase | None = None):
        if mode not in ('planner', 'fixed-sequence'):
            raise ValueError(f"unknown execution mode {mode!r}")
        self.settings = settings
        self.mode = mode
        self.stop_phase = stop_phase
        self.state = reset(settings.env, seed, start_phase)
        start = PlannerPhase(start_phase)
        self.status = PlannerStatus(start, 0, phase_goals(self.state, settings)[start])
        self.budget = max(1, settings.env.t_max // 4)
        self.trace = EpisodeTrace(seed=seed, mode=mode, final_phase=start.value)
        self._span_start = 0
        self._steps_in_phase = 0

    @property
    def done(self) -> bool:
        return self.status.phase in ABSORBING

    @property
    def expert(self) -> ExpertKind | None:
        return active_expert(self.status.phase)

    def advance(self, action: Action) -> StepResult:
        settings, env = self.settings, self.settings.env
        status = self.status
        prev = self.state
        self.state, events = step(prev, action, env)
        reward = phase_reward(status.phase, prev, self.state, events, status.goal, settings.rewards, env)
        s_h = evaluate_predicates(self.state, events)
        goals = phase_goals(self.state, settings)
        self._steps_in_phase += 1
        if self.mode == 'planner':
            nxt, _ = transition(status, s_h, settings.planner.max_retries, goals)
        else:
            nxt = fixed_sequence_transition(status, s_h, self._steps_in_phase, self.budget, goals)
        if nxt.phase not in ABSORBING and self.state.terminal:
            nxt = PlannerStatus(PlannerPhase.ABORT, nxt.retry_count, None)
        if self.stop_phase is not None and nxt.phase == self.stop_phase:
            nxt = PlannerStatus(PlannerPhase.DONE, nxt.retry_count, None)
        if nxt.phase != status.phase:
            self.trace.phases.append(PhaseSpan(status.phase.value, self._span_start, self.state.t))
            self._span_start, self._steps_in_phase = self.state.t, 0
            log.debug("seed=%d t=%d %s -> %s", self.trace.seed, self.state.t, status.phase, nxt.phase)
        boundary = (nxt.phase, nxt.retry_count) != (status.phase, status.retry_count)
        self.status = nxt
        if self.done:
            self._finish()
        return StepResult(status.phase, active_expert(status.phase), prev, events, reward, boundary)

    def _finish(self) -> None:
        tr, state = self.trace, self.state
        tr.outcome = _outcome(self.status, state)
        tr.final_phase = self.status.phase.value
        tr.steps = state.t
        tr.retries = self.status.retry_count
        if tr.success:
            tr.cycle_time = state.t * self.settings.env.dt
            tr.place_error = state.place_error


def run_episode(policies: ExpertSet, settings: Settings, mode: str = 'planner', seed: int = 0,
                start_phase: PlannerPhase = PlannerPhase.DEPARTURE, stop_phase: PlannerPhase | None = None,
                deterministic: bool = True, record: bool = False,
                on_step: Callable[[WorldState], None] | None = None) -> EpisodeTrace:
    ep = Episode(settings, seed, mode, start_phase, stop_phase)
    rng = None if deterministic else np.random.default_rng([seed, 1])
    if on_step is not None:
        on_step(ep.state)
    while not ep.done:
        action = policies.act(ep.status, ep.state, rng)
        res = ep.advance(action)
        if on_step is not None:
            on_step(ep.state)
        if record:
            ep.trace.records.append({
                'step': ep.state.t, 'phase': res.phase.value, 'expert': str(res.expert),
                'action': action.as_list(), 'reward': res.reward, 'events': asdict(res.events),
            })
    return ep.trace


def write_traces(path, traces: list[EpisodeTrace]) -> pathlib.Path:
    """One summary line per episode, followed by its step records when recorded."""
    path = pathlib.Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open('w') as f:
        for tr in traces:
            f.write(json.dumps({'type': 'episode', **tr.summary()}) + '\n')
            for rec in tr.records:
                f.write(json.dumps({'type': 'step', 'seed': tr.seed, **rec}) + '\n')
    return path


SUBTASKS = {
    'full': (PlannerPhase.DEPARTURE, None),
    'pick': (PlannerPhase.SEARCH_PICK, PlannerPhase.TRANSPORT),
    'place': (PlannerPhase.PLACEMENT, None),
}


def subtask_bounds(subtask: str) -> tuple[PlannerPhase, PlannerPhase | None]:
    """(start phase, stop phase) of a full-task or sub-task episode."""
    if subtask not in SUBTASKS:
        raise ValueError(f"unknown subtask {subtask!r}; expected one of {sorted(SUBTASKS)}")
    return SUBTASKS[subtask]
