"""Capability-aware, interference-free dispatch onto two arms."""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping, Sequence

from .errors import UnassignableError
from .partgraph import PRESENT, PartGraph, remove_node
from .sequencer import ActionPrimitive, check_preconditions

IDLE, MOVING, ACTING = "idle", "moving", "acting"
_ARM_TRANSITIONS = {(IDLE, MOVING), (MOVING, ACTING), (ACTING, IDLE), (MOVING, IDLE)}

# +x, -x, +y, -y, then the diagonals
DEFAULT_OFFSET_PATTERN = (
    (1.0, 0.0), (-1.0, 0.0), (0.0, 1.0), (0.0, -1.0),
    (1.0, 1.0), (-1.0, -1.0), (1.0, -1.0), (-1.0, 1.0),
)


@dataclass
class ArmProfile:
    name: str
    capabilities: frozenset
    home_pose: tuple[float, float, float]
    speed: float = 0.1
    state: str = IDLE
    current_position: tuple[float, float, float] | None = None
    last_target: tuple[float, float, float] | None = None

    def __post_init__(self):
        if not self.speed > 0:
            raise ValueError(f"arm {self.name}: speed must be positive")
        self.capabilities = frozenset(self.capabilities)
        self.home_pose = tuple(self.home_pose)
        if self.current_position is None:
            self.current_position = self.home_pose
        if self.last_target is None:
            self.last_target = self.home_pose

    def transition(self, new_state: str) -> None:
        if (self.state, new_state) not in _ARM_TRANSITIONS:
            raise ValueError(f"arm {self.name}: illegal transition {self.state} -> {new_state}")
        self.state = new_state

    def can(self, capability: str) -> bool:
        return capability in self.capabilities


@dataclass
class DispatchSet:
    assignments: list[tuple[str, ActionPrimitive]] = field(default_factory=list)

    def __len__(self):
        return len(self.assignments)

    def __iter__(self):
        return iter(self.assignments)

    def arms(self) -> list[str]:
        return [a for a, _ in self.assignments]

    def actions(self) -> list[ActionPrimitive]:
        return [act for _, act in self.assignments]


@dataclass(frozen=True)
class RetryPolicy:
    max_retries: int = 5
    pose_offset_mm: float = 0.5
    offset_pattern: tuple = DEFAULT_OFFSET_PATTERN

    def __post_init__(self):
        if self.max_retries < 0:
            raise ValueError("max_retries must be >= 0")
        if not self.pose_offset_mm > 0:
            raise ValueError("pose_offset_mm must be positive")
        if not self.offset_pattern:
            raise ValueError("offset_pattern must not be empty")

    def offset(self, attempt: int) -> tuple[float, float, float]:
        """Offset (m) for the ``attempt``-th retry, counting from 0."""
        dx, dy = self.offset_pattern[attempt % len(self.offset_pattern)]
        norm = math.hypot(dx, dy) or 1.0
        step = self.pose_offset_mm / 1000.0
        return (dx / norm * step, dy / norm * step, 0.0)


def capability_filter(
    ready_actions: Sequence[ActionPrimitive], arms: Sequence[ArmProfile]
) -> dict[str, list[ActionPrimitive]]:
    out: dict[str, list[ActionPrimitive]] = {arm.name: [] for arm in arms}
    for action in ready_actions:
        owners = [arm.name for arm in arms if arm.can(action.capability_required)]
        if not owners:
            raise UnassignableError(
                f"{action.id}: no arm provides capability {action.capability_required!r}"
            )
        for name in owners:
            out[name].append(action)
    return out


def interfering(a: ActionPrimitive, b: ActionPrimitive, graph: PartGraph) -> bool:
    """Overlapping workspace spheres, or a direct graph edge between the targets."""
    if math.dist(a.region_center, b.region_center) < a.region_radius + b.region_radius:
        return True
    return graph.has_edge(a.target_node, b.target_node) or graph.has_edge(b.target_node, a.target_node)


def make_hold(action: ActionPrimitive, graph: PartGraph) -> ActionPrimitive:
    """The stabilising step paired with ``action`` (hold-operate)."""
    host = graph.nodes[action.hold_target]
    return ActionPrimitive(
        id=f"{host.id}:hold",
        action_kind="hold",
        target_node=host.id,
        target_position=host.position_world,
        capability_required="hold",
        region_center=host.position_world,
        region_radius=action.region_radius,
        nominal_speed=action.nominal_speed,
        final=False,
    )


def attach_holds(action: ActionPrimitive, graph: PartGraph, hold_categories) -> ActionPrimitive:
    """Mark ``action`` as needing a hold if its host requires stabilisation."""
    if not hold_categories or action.action_kind != "unscrew":
        return action
    for succ in sorted(graph.succs.get(action.target_node, ())):
        if graph.nodes[succ].category in hold_categories:
            return replace(action, hold_target=succ)
    return action


def select_dispatch(
    candidates: Mapping[str, Sequence[ActionPrimitive]],
    arms: Sequence[ArmProfile],
    graph: PartGraph,
    in_flight: Iterable[ActionPrimitive] = (),
) -> DispatchSet:
    """Greedy parallel dispatch.

    Arms are visited in the given order; each idle arm takes its highest
    ranked candidate that passes its preconditions and does not interfere
    with anything already chosen or still running. An action that needs a
    hold is only taken together with a free arm able to hold its host.
    """
    chosen = DispatchSet()
    busy = list(in_flight)
    taken_arms: set[str] = set()
    taken_targets = {a.target_node for a in busy if a.action_kind != "hold"}

    def clear(action):
        return not any(interfering(action, other, graph) for other in busy)

    for arm in arms:
        if arm.state != IDLE or arm.name in taken_arms:
            continue
        for action in candidates.get(arm.name, ()):
            if not arm.can(action.capability_required):
                continue
            if action.target_node in taken_targets or not check_preconditions(action, graph):
                continue
            if not clear(action):
                continue
            if action.hold_target is not None:
                hold = make_hold(action, graph)
                holder = next(
                    (h for h in arms
                     if h is not arm and h.state == IDLE and h.name not in taken_arms and h.can("hold")),
                    None,
                )
                if holder is None or not clear(hold):
                    continue
                chosen.assignments.append((arm.name, action))
                chosen.assignments.append((holder.name, hold))
                busy.extend((action, hold))
                taken_arms.update((arm.name, holder.name))
                taken_targets.add(action.target_node)
                break
            chosen.assignments.append((arm.name, action))
            busy.append(action)
            taken_arms.add(arm.name)
            taken_targets.add(action.target_node)
            break
    return chosen


def handle_failure(action: ActionPrimitive, policy: RetryPolicy) -> ActionPrimitive | None:
    """Requeue with the next pose offset, or None once retries are exhausted."""
    if action.retries_used >= policy.max_retries:
        return None
    return action.with_retry(policy.offset(action.retries_used))


def on_complete(graph: PartGraph, action: ActionPrimitive) -> tuple[PartGraph, set[str]]:
    """Remove the finished action's node (if final) and report newly ready nodes."""
    if not action.final or action.target_node not in graph.nodes:
        return graph, set()
    succs = list(graph.succs[action.target_node])
    remove_node(graph, action.target_node)
    ready = {
        s for s in succs
        if not graph.preds[s] and graph.nodes[s].state == PRESENT
    }
    return graph, ready
