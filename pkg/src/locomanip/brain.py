"""Planner skeleton: movement-conditioned memory bank, adaptive task loop,
agent dispatch, and failure-triggered replanning behind a pluggable decision
provider (scripted oracle or external decision service)."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from typing import Protocol, Union

from .errors import ProviderError, StateError
from .geometry import CameraPose

AGENTS = ("navigation", "reach_solver", "grasp", "post_grasp_primitive",
          "viewpoint", "external")


@dataclass(frozen=True)
class BrainParams:
    """Scenario "brain" section: budgets plus the quantized viewpoint action
    space (2-DoF neck, 4-DoF base)."""

    max_retries: int = 2
    step_budget: int = 60
    neck_step: float = 0.2
    base_yaw_step: float = 0.4
    base_trans_step: float = 0.2
    height_step: float = 0.05
    log_tail: int = 20
    nav_skip_dist: float = 1.2
    standoff: float = 0.80
    occluder_standoff: float = 0.65
    place_lateral: float = 0.35

    @classmethod
    def from_dict(cls, d: dict) -> "BrainParams":
        return cls(**d)


@dataclass(frozen=True)
class ViewpointAdjust:
    """Active-perception move: neck deltas plus optional base adjustments."""

    neck_dpitch: float = 0.0
    neck_dyaw: float = 0.0
    base_dyaw: float = 0.0
    base_dx: float = 0.0
    base_dy: float = 0.0
    base_dheight: float = 0.0

    @property
    def moves_base(self) -> bool:
        return any(abs(v) > 0 for v in
                   (self.base_dyaw, self.base_dx, self.base_dy, self.base_dheight))


@dataclass(frozen=True)
class InvokeAgent:
    agent: str
    parameters: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.agent not in AGENTS:
            raise ValueError(f"unknown agent {self.agent!r}")


@dataclass(frozen=True)
class Done:
    pass


@dataclass(frozen=True)
class Abort:
    reason: str = ""


BrainDecision = Union[ViewpointAdjust, InvokeAgent, Done, Abort]

_DECISION_TAGS = {ViewpointAdjust: "viewpoint", InvokeAgent: "invoke",
                  Done: "done", Abort: "abort"}


def decision_to_dict(decision: BrainDecision) -> dict:
    tag = _DECISION_TAGS.get(type(decision))
    if tag is None:
        raise TypeError(f"not a BrainDecision: {decision!r}")
    out: dict = {"type": tag}
    if isinstance(decision, ViewpointAdjust):
        out.update(neck_dpitch=decision.neck_dpitch, neck_dyaw=decision.neck_dyaw,
                   base_dyaw=decision.base_dyaw, base_dx=decision.base_dx,
                   base_dy=decision.base_dy, base_dheight=decision.base_dheight)
    elif isinstance(decision, InvokeAgent):
        out.update(agent=decision.agent, parameters=decision.parameters)
    elif isinstance(decision, Abort):
        out.update(reason=decision.reason)
    return out


def decision_from_dict(d: dict) -> BrainDecision:
    tag = d.get("type")
    if tag == "viewpoint":
        return ViewpointAdjust(
            neck_dpitch=float(d.get("neck_dpitch", 0.0)),
            neck_dyaw=float(d.get("neck_dyaw", 0.0)),
            base_dyaw=float(d.get("base_dyaw", 0.0)),
            base_dx=float(d.get("base_dx", 0.0)),
            base_dy=float(d.get("base_dy", 0.0)),
            base_dheight=float(d.get("base_dheight", 0.0)))
    if tag == "invoke":
        return InvokeAgent(d["agent"], dict(d.get("parameters", {})))
    if tag == "done":
        return Done()
    if tag == "abort":
        return Abort(str(d.get("reason", "")))
    raise ProviderError(f"unknown decision type {tag!r}")


def decision_to_json(decision: BrainDecision) -> str:
    return json.dumps(decision_to_dict(decision), sort_keys=True,
                      separators=(",", ":"))


def decision_from_json(text: str) -> BrainDecision:
    try:
        return decision_from_dict(json.loads(text))
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise ProviderError(f"malformed decision: {exc}") from exc


@dataclass
class SubTask:
    id: str
    description: str
    agent: str
    parameters: dict = field(default_factory=dict)
    status: str = "pending"  # pending | active | done | failed
    retries: int = 0

    def to_dict(self) -> dict:
        return {"id": self.id, "description": self.description,
                "agent": self.agent, "status": self.status,
                "retries": self.retries}


@dataclass(frozen=True)
class Feedback:
    """Outcome routed back to the planner after an agent invocation."""

    subtask_id: str
    outcome: str  # success | failure
    detail: str = ""
    measured: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(
            {"subtask_id": self.subtask_id, "outcome": self.outcome,
             "detail": self.detail, "measured": self.measured},
            sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_json(cls, text: str) -> "Feedback":
        d = json.loads(text)
        return cls(d["subtask_id"], d["outcome"], d.get("detail", ""),
                   dict(d.get("measured", {})))


@dataclass
class ObservationEntry:
    observation_id: str
    camera_pose: CameraPose
    tick: int
    snapshot: object  # scene snapshot reference, e.g. a DepthImage


class MemoryBank:
    """Image archive retained only since the last base movement, plus an
    append-only text log of every (command, feedback) pair."""

    def __init__(self):
        self.images: list[ObservationEntry] = []
        self.text_log: list[dict] = []
        self.last_base_move_tick: int = -1
        self._last_archive_tick: int = -1

    def archive_observation(self, obs, cam: CameraPose, tick: int) -> "MemoryBank":
        if tick <= self._last_archive_tick:
            raise StateError(f"archive tick {tick} not increasing")
        self._last_archive_tick = tick
        self.images.append(ObservationEntry(f"obs-{tick:05d}", cam, tick, obs))
        return self

    def notify_base_moved(self, tick: int) -> "MemoryBank":
        """Drop every image captured at or before the movement tick."""
        self.last_base_move_tick = max(self.last_base_move_tick, tick)
        self.images = [e for e in self.images if e.tick > tick]
        return self

    def log(self, command: str, feedback: str = "") -> None:
        self.text_log.append({"command": command, "feedback": feedback})

    def log_tail(self, n: int) -> list[dict]:
        return self.text_log[-n:]


class DecisionProvider(Protocol):
    # Whether agent feedback should drive the local sub-task state machine
    # (oracle) or merely be logged for the service to read (external).
    tracks_subtasks: bool

    def decompose(self, goal: str) -> list[SubTask]: ...

    def decide(self, state: "PlannerState", bank: MemoryBank) -> BrainDecision: ...

    def on_failure(self, state: "PlannerState", fb: Feedback) -> list[SubTask]:
        """Extra sub-tasks to prepend before retrying a failed sub-task."""
        ...


@dataclass
class PlannerState:
    goal: str
    subtasks: list[SubTask]
    status: str = "active"  # active | done | aborted
    decisions_taken: int = 0
    abort_reason: str = ""
    grasp_context: dict = field(default_factory=dict)
    _next_id: int = 0

    @classmethod
    def from_goal(cls, goal: str, provider: DecisionProvider) -> "PlannerState":
        tasks = decompose(goal, provider)
        return cls(goal=goal, subtasks=tasks, _next_id=len(tasks))

    def fresh_id(self) -> str:
        """Ids for recovery sub-tasks; 'x' prefix cannot collide with the
        provider's decomposition ids."""
        self._next_id += 1
        return f"x{self._next_id}"

    def active_subtask(self) -> SubTask | None:
        for st in self.subtasks:
            if st.status == "active":
                return st
        for st in self.subtasks:
            if st.status == "pending":
                st.status = "active"
                return st
        return None

    def find(self, subtask_id: str) -> SubTask:
        for st in self.subtasks:
            if st.id == subtask_id:
                return st
        raise StateError(f"unknown sub-task id {subtask_id!r}")

    def all_done(self) -> bool:
        return all(st.status == "done" for st in self.subtasks)


def decompose(goal: str, provider: DecisionProvider) -> list[SubTask]:
    """Expand the long-horizon goal into an ordered sub-task list."""
    if not goal or not goal.strip():
        raise ProviderError("empty goal")
    tasks = provider.decompose(goal)
    if not tasks:
        raise ProviderError("provider returned no sub-tasks")
    return tasks


def step(state: PlannerState, bank: MemoryBank, provider: DecisionProvider,
         params: BrainParams | None = None) -> BrainDecision:
    """One planner tick: terminal checks, budget, then the provider's
    viewpoint-or-invoke choice."""
    p = params or BrainParams()
    if state.status == "done":
        return Done()
    if state.status == "aborted":
        return Abort(state.abort_reason)
    if state.all_done():
        state.status = "done"
        return Done()
    if state.decisions_taken >= p.step_budget:
        state.status = "aborted"
        state.abort_reason = "step budget exhausted"
        return Abort(state.abort_reason)
    decision = provider.decide(state, bank)
    state.decisions_taken += 1
    if isinstance(decision, Done):
        state.status = "done"
    elif isinstance(decision, Abort):
        state.status = "aborted"
        state.abort_reason = decision.reason
    return decision


def handle_feedback(state: PlannerState, fb: Feedback,
                    provider: DecisionProvider,
                    params: BrainParams | None = None) -> PlannerState:
    """Advance on success; on failure re-activate with a retry budget,
    optionally prepending provider-suggested recovery sub-tasks."""
    p = params or BrainParams()
    st = state.find(fb.subtask_id)
    if fb.outcome == "success":
        st.status = "done"
        return state
    st.retries += 1
    if st.retries > p.max_retries:
        st.status = "failed"
        state.status = "aborted"
        state.abort_reason = f"sub-task {st.id} exceeded max retries"
        return state
    st.status = "pending"
    extra = provider.on_failure(state, fb)
    if extra:
        at = state.subtasks.index(st)
        state.subtasks[at:at] = extra
    return state


def replay_log(goal: str, provider: DecisionProvider, text_log: list[dict],
               params: BrainParams | None = None) -> PlannerState:
    """Reconstruct planner state from a memory-bank text log by replaying
    each logged decision's feedback through the normal update rule."""
    state = PlannerState.from_goal(goal, provider)
    for entry in text_log:
        decision = decision_from_json(entry["command"])
        if isinstance(decision, Done):
            # Terminal entries come from the runtime's own checks for a
            # sub-task-tracking provider; they are not provider decisions.
            state.status = "done"
        elif isinstance(decision, Abort):
            state.status = "aborted"
            state.abort_reason = decision.reason
        else:
            state.decisions_taken += 1
            # Mirror the live run: deciding activates the first pending task.
            state.active_subtask()
            if isinstance(decision, InvokeAgent) and entry.get("feedback"):
                handle_feedback(state, Feedback.from_json(entry["feedback"]),
                                provider, params)
        if state.all_done() and state.status == "active":
            state.status = "done"
    return state
