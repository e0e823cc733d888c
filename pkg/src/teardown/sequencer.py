"""Precedence-feasible ordering and action instantiation."""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

from .errors import CycleError, UnsupportedCategoryError
from .partgraph import IN_PROGRESS, PRESENT, PartGraph, PartNode

ACTION_KINDS = ("unscrew", "lift", "remove", "drop", "hold")

DEFAULT_REGION_RADIUS = 0.08
DEFAULT_RETRY_LIMIT = 5


@dataclass(frozen=True)
class ActionTemplate:
    action_kind: str
    applicable_category: str
    approach_offset: float = 0.0
    nominal_speed: float = 0.1
    tool_params: dict = field(default_factory=dict, hash=False, compare=False)
    capability_required: str | None = None
    region_radius: float = DEFAULT_REGION_RADIUS

    def __post_init__(self):
        if self.action_kind not in ACTION_KINDS:
            raise ValueError(f"unknown action kind {self.action_kind!r}")
        if not self.nominal_speed > 0:
            raise ValueError("nominal_speed must be positive")
        if not self.region_radius > 0:
            raise ValueError("region_radius must be positive")
        if self.capability_required is None:
            object.__setattr__(self, "capability_required", self.action_kind)


@dataclass(frozen=True)
class ActionPrimitive:
    id: str
    action_kind: str
    target_node: str
    target_position: tuple[float, float, float]
    capability_required: str
    region_center: tuple[float, float, float]
    region_radius: float = DEFAULT_REGION_RADIUS
    retries_used: int = 0
    nominal_speed: float = 0.1
    approach_offset: float = 0.0
    tool_params: dict = field(default_factory=dict, hash=False, compare=False)
    # second step of a lift/remove -> drop chain; executed by the arm holding the part
    continuation: bool = False
    # last step of the node's chain: completing it removes the node
    final: bool = True
    # node another arm must stabilise while this action runs (hold-operate)
    hold_target: str | None = None

    def __post_init__(self):
        if not self.region_radius > 0:
            raise ValueError("region radius must be positive")
        if self.retries_used < 0:
            raise ValueError("retries_used must be non-negative")

    def with_retry(self, offset) -> ActionPrimitive:
        pos = tuple(p + o for p, o in zip(self.target_position, offset))
        return replace(self, target_position=pos, region_center=pos, retries_used=self.retries_used + 1)


class ClassPriority:
    """Ordered groups of categories, highest priority first."""

    def __init__(self, groups: Sequence[Sequence[str]]):
        self.groups = [list(g) for g in groups]
        self.rank: dict[str, int] = {}
        for i, group in enumerate(self.groups):
            for cat in group:
                if cat in self.rank:
                    raise ValueError(f"category {cat!r} listed twice in priority")
                self.rank[cat] = i

    def check_covers(self, categories) -> None:
        missing = set(categories) - set(self.rank)
        extra = set(self.rank) - set(categories)
        if missing or extra:
            raise ValueError(f"priority mismatch: missing={sorted(missing)} unknown={sorted(extra)}")

    def __getitem__(self, category: str) -> int:
        return self.rank.get(category, len(self.groups))


def ready_key(node: PartNode, priority: ClassPriority, last_position):
    return (priority[node.category], math.dist(node.position_world, last_position), node.id)


def compare_ready(a: PartNode, b: PartNode, priority: ClassPriority, last_position) -> int:
    """-1 if ``a`` should go first, 1 if ``b``, 0 only when a and b are the same node."""
    ka, kb = ready_key(a, priority, last_position), ready_key(b, priority, last_position)
    return (ka > kb) - (ka < kb)


def topo_order(graph: PartGraph, priority: ClassPriority, last_position) -> list[str]:
    """Kahn's algorithm choosing, at each step, the best ready node.

    "Best" is the :func:`compare_ready` minimum measured from the position of
    the previously chosen node, so nearby targets of equal class get chained.
    """
    indeg = {nid: len(p) for nid, p in graph.preds.items()}
    frontier = [nid for nid, d in indeg.items() if d == 0]
    nodes = graph.nodes
    order: list[str] = []
    ref = tuple(last_position)
    while frontier:
        best = min(frontier, key=lambda nid: ready_key(nodes[nid], priority, ref))
        frontier.remove(best)
        order.append(best)
        ref = nodes[best].position_world
        for s in graph.succs[best]:
            indeg[s] -= 1
            if indeg[s] == 0:
                frontier.append(s)
    if len(order) != len(nodes):
        raise CycleError("graph contains a cycle")
    return order


def instantiate(node: PartNode, templates: Sequence[ActionTemplate]) -> list[ActionPrimitive]:
    """Action primitives for ``node``, in template declaration order.

    Drop steps target the template's ``drop_pose`` (a bin) instead of the
    part, and are flagged as continuations of the preceding grasp.
    """
    matching = [t for t in templates if t.applicable_category == node.category]
    if not matching:
        raise UnsupportedCategoryError(f"no action template for category {node.category!r}")
    out = []
    for t in matching:
        if t.action_kind == "drop":
            target = tuple(t.tool_params.get("drop_pose", node.position_world))
        else:
            target = tuple(node.position_world)
        out.append(
            ActionPrimitive(
                id=f"{node.id}:{t.action_kind}",
                action_kind=t.action_kind,
                target_node=node.id,
                target_position=target,
                capability_required=t.capability_required,
                region_center=target,
                region_radius=t.region_radius,
                nominal_speed=t.nominal_speed,
                approach_offset=t.approach_offset,
                tool_params=t.tool_params,
                continuation=t.action_kind == "drop" and len(out) > 0,
                final=t is matching[-1],
            )
        )
    return out


def check_preconditions(action: ActionPrimitive, graph: PartGraph) -> bool:
    """Whether ``action`` may be issued against the current graph.

    A continuation drop acts on a part already held by the gripper, so it
    requires the target to be in progress; every other action needs the
    target present, unblocked and not already being worked on.
    """
    node = graph.nodes.get(action.target_node)
    if node is None:
        return False
    if action.continuation:
        return node.state == IN_PROGRESS
    return node.state == PRESENT and not graph.preds[action.target_node]
