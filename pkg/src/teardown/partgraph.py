"""Live precedence graph over detected parts."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

from .errors import NodeNotFoundError, RuleCycleError

LAYERS = ("L1", "L2", "L3")
EDGE_KINDS = ("precedence", "access")

PRESENT = "present"
IN_PROGRESS = "in_progress"
REMOVED = "removed"

_ALLOWED = {
    (PRESENT, IN_PROGRESS),
    (IN_PROGRESS, REMOVED),
    (IN_PROGRESS, PRESENT),
}


@dataclass
class PartNode:
    id: str
    category: str
    position_world: tuple[float, float, float]
    layer: str = "L1"
    state: str = PRESENT

    def transition(self, new_state: str) -> None:
        if (self.state, new_state) not in _ALLOWED:
            raise ValueError(f"{self.id}: illegal transition {self.state} -> {new_state}")
        self.state = new_state


@dataclass(frozen=True, order=True)
class PrecedenceEdge:
    src: str
    dst: str
    kind: str = "precedence"

    def __post_init__(self):
        if self.src == self.dst:
            raise ValueError(f"self-loop on {self.src}")
        if self.kind not in EDGE_KINDS:
            raise ValueError(f"unknown edge kind {self.kind!r}")


@dataclass(frozen=True)
class CategoryRule:
    from_category: str
    to_category: str
    kind: str = "precedence"
    scope: str = "same_layer"

    def __post_init__(self):
        if self.kind not in EDGE_KINDS:
            raise ValueError(f"unknown edge kind {self.kind!r}")
        if self.scope not in ("same_layer", "cross_layer"):
            raise ValueError(f"unknown rule scope {self.scope!r}")

    def matches(self, a: PartNode, b: PartNode) -> bool:
        if a.category != self.from_category or b.category != self.to_category or a.id == b.id:
            return False
        same = a.layer == b.layer
        return same if self.scope == "same_layer" else not same


@dataclass(frozen=True)
class GraphChange:
    kind: str  # "insert" | "remove"
    node_id: str


class PartGraph:
    """Directed acyclic graph of parts; edge u -> v means u blocks v.

    Mutated in place by the engine loop; use :meth:`copy` for snapshots.
    """

    def __init__(self, nodes: Iterable[PartNode] = (), edges: Iterable[PrecedenceEdge] = ()):
        self.nodes: dict[str, PartNode] = {}
        self.preds: dict[str, set[str]] = {}
        self.succs: dict[str, set[str]] = {}
        self.kinds: dict[tuple[str, str], str] = {}
        for n in nodes:
            self._add_node(n)
        for e in edges:
            self._add_edge(e)

    def _add_node(self, node: PartNode) -> None:
        if node.id in self.nodes:
            raise ValueError(f"duplicate node id {node.id!r}")
        self.nodes[node.id] = node
        self.preds[node.id] = set()
        self.succs[node.id] = set()

    def _add_edge(self, e: PrecedenceEdge) -> None:
        if e.src not in self.nodes or e.dst not in self.nodes:
            raise NodeNotFoundError(f"edge {e.src}->{e.dst} references a missing node")
        if (e.src, e.dst) in self.kinds:
            return
        self.kinds[(e.src, e.dst)] = e.kind
        self.succs[e.src].add(e.dst)
        self.preds[e.dst].add(e.src)

    @property
    def edges(self) -> set[PrecedenceEdge]:
        return {PrecedenceEdge(s, d, k) for (s, d), k in self.kinds.items()}

    def has_edge(self, a: str, b: str) -> bool:
        return (a, b) in self.kinds

    def in_degree(self, node_id: str) -> int:
        return len(self.preds[node_id])

    def __contains__(self, node_id) -> bool:
        return node_id in self.nodes

    def __len__(self) -> int:
        return len(self.nodes)

    def copy(self) -> PartGraph:
        g = PartGraph()
        g.nodes = {k: PartNode(n.id, n.category, n.position_world, n.layer, n.state)
                   for k, n in self.nodes.items()}
        g.preds = {k: set(v) for k, v in self.preds.items()}
        g.succs = {k: set(v) for k, v in self.succs.items()}
        g.kinds = dict(self.kinds)
        return g


def _rule_edges(nodes: Sequence[PartNode], rules: Sequence[CategoryRule], fresh: set[str] | None = None):
    by_cat: dict[str, list[PartNode]] = {}
    for n in nodes:
        by_cat.setdefault(n.category, []).append(n)
    out = {}
    for rule in rules:
        for a in by_cat.get(rule.from_category, ()):
            for b in by_cat.get(rule.to_category, ()):
                if fresh is not None and a.id not in fresh and b.id not in fresh:
                    continue
                if rule.matches(a, b) and (a.id, b.id) not in out:
                    out[(a.id, b.id)] = rule.kind
    return [PrecedenceEdge(s, d, k) for (s, d), k in sorted(out.items())]


def apply_rules(nodes: Iterable[PartNode], rules: Sequence[CategoryRule]) -> list[PrecedenceEdge]:
    """Edges implied by category-level rules, sorted by (src, dst).

    Raises RuleCycleError if the resulting graph has a directed cycle.
    """
    nodes = list(nodes)
    edges = _rule_edges(nodes, rules)
    if not is_acyclic(PartGraph(nodes, edges)):
        raise RuleCycleError("category rules produce a cycle")
    return edges


def ready_set(graph: PartGraph) -> set[str]:
    return {
        nid for nid, n in graph.nodes.items()
        if n.state == PRESENT and not graph.preds[nid]
    }


def remove_node(graph: PartGraph, node_id: str) -> PartGraph:
    if node_id not in graph.nodes:
        raise NodeNotFoundError(node_id)
    for p in graph.preds.pop(node_id):
        graph.succs[p].discard(node_id)
        del graph.kinds[(p, node_id)]
    for s in graph.succs.pop(node_id):
        graph.preds[s].discard(node_id)
        del graph.kinds[(node_id, s)]
    del graph.nodes[node_id]
    return graph


def insert_nodes(graph: PartGraph, new_nodes: Iterable[PartNode], rules: Sequence[CategoryRule]) -> PartGraph:
    """Add nodes and every rule edge touching them; rolls back on a cycle."""
    new_nodes = list(new_nodes)
    if not new_nodes:
        return graph
    for n in new_nodes:
        if n.id in graph.nodes:
            raise ValueError(f"node id {n.id!r} already in graph")
    fresh = {n.id for n in new_nodes}
    for n in new_nodes:
        graph._add_node(n)
    edges = _rule_edges(list(graph.nodes.values()), rules, fresh)
    for e in edges:
        graph._add_edge(e)
    if not is_acyclic(graph):
        for nid in fresh:
            remove_node(graph, nid)
        raise RuleCycleError("inserting nodes would create a cycle")
    return graph


def sync_with_observations(
    graph: PartGraph,
    observed,
    rules: Sequence[CategoryRule],
    layer: str = "L1",
    keep: Iterable[str] = (),
) -> tuple[PartGraph, list[GraphChange]]:
    """Reconcile the graph with the current set of tracked parts.

    Nodes with no live track are removed unless they are in progress (held
    by an arm) or listed in ``keep``; tracks without a node are inserted on
    ``layer``.
    """
    observed = list(observed)
    seen = {t.id for t in observed}
    keep = set(keep)
    changes: list[GraphChange] = []
    for nid in sorted(graph.nodes):
        node = graph.nodes[nid]
        if nid not in seen and nid not in keep and node.state != IN_PROGRESS:
            remove_node(graph, nid)
            changes.append(GraphChange("remove", nid))
    fresh = [
        PartNode(t.id, t.category, tuple(t.smoothed_position), layer)
        for t in sorted(observed, key=lambda t: t.id)
        if t.id not in graph.nodes
    ]
    insert_nodes(graph, fresh, rules)
    changes.extend(GraphChange("insert", n.id) for n in fresh)
    return graph, changes


def is_acyclic(graph: PartGraph) -> bool:
    indeg = {nid: len(p) for nid, p in graph.preds.items()}
    stack = [nid for nid, d in indeg.items() if d == 0]
    seen = 0
    while stack:
        nid = stack.pop()
        seen += 1
        for s in graph.succs[nid]:
            indeg[s] -= 1
            if indeg[s] == 0:
                stack.append(s)
    return seen == len(graph.nodes)


def dump_graph(graph: PartGraph) -> str:
    """One ``from -> to [kind]`` line per edge, sorted."""
    lines = [f"{s} -> {d} [{k}]" for (s, d), k in sorted(graph.kinds.items())]
    return "\n".join(lines) + ("\n" if lines else "")


def parse_graph_dump(text: str) -> list[PrecedenceEdge]:
    edges = []
    for line in text.splitlines():
        line = line.strip()
        if not line:
            continue
        lhs, _, rest = line.partition(" -> ")
        dst, _, kind = rest.partition(" [")
        edges.append(PrecedenceEdge(lhs, dst, kind.rstrip("]")))
    return edges


def layer_order(layers: Iterable[str]) -> list[str]:
    return sorted(set(layers), key=lambda x: (LAYERS.index(x) if x in LAYERS else len(LAYERS), x))


__all__ = [
    "PartNode", "PrecedenceEdge", "CategoryRule", "GraphChange", "PartGraph",
    "apply_rules", "ready_set", "remove_node", "insert_nodes",
    "sync_with_observations", "is_acyclic", "dump_graph", "parse_graph_dump",
]
