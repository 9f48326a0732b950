"""Non-stochastic state classes of the underlying time Petri net.

A state class pairs a marking with the DBM firing domain of its enabled
transitions (EXP timers range over ``[0, inf)``).  The graph is used to decide
whether a class can still reach the target, so that analysis and simulation
effort is not spent on branches with reward zero.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field

from .stpn import Marking, MarkingPredicate, Stpn
from .zone import DbmZone, add_variable, eliminate, intersect_all, reorder, swap_reference


class NodeCapError(RuntimeError):
    code = "NODE_CAP"


@dataclass(frozen=True)
class StateClass:
    marking: Marking
    zone: DbmZone

    def key(self) -> tuple:
        return (self.marking, self.zone.key())


def _support(stpn: Stpn, t: int) -> tuple[float, float]:
    d = stpn.transitions[t].dist
    return d.eft, d.lft


def initial_sc(stpn: Stpn) -> StateClass:
    m = stpn.initial_marking
    en = stpn.enabled_indices(m)
    zone = DbmZone.box({stpn.transitions[t].name: _support(stpn, t) for t in en}) if en \
        else DbmZone.unconstrained(())
    return StateClass(m, zone)


def successor_sc(stpn: Stpn, sc: StateClass, t: int | str) -> StateClass | None:
    """Class reached when ``t`` fires first; ``None`` if it cannot."""
    if isinstance(t, str):
        t = stpn.transition_index(t)
    name = stpn.transitions[t].name
    if name not in sc.zone.variables:
        raise ValueError(f"{name} is not enabled in this class")
    cond = intersect_all(sc.zone, [(name, v, 0.0) for v in sc.zone.variables if v != name])
    if cond is None:
        return None
    # survivors relative to the firing time; the old reference is dropped
    z = eliminate(swap_reference(cond, name, "__ref"), "__ref")
    out = stpn.fire_marking(sc.marking, t)
    keep = {stpn.transitions[u].name for u in out.persistent}
    for v in z.variables:
        if v not in keep:
            z = eliminate(z, v)
    for u in out.newly_enabled:
        z = add_variable(z, stpn.transitions[u].name, *_support(stpn, u))
    order = [stpn.transitions[u].name for u in sorted(out.persistent + out.newly_enabled)]
    return StateClass(out.marking, reorder(z, order))


@dataclass
class ScGraph:
    stpn: Stpn
    target: MarkingPredicate
    nodes: list[StateClass] = field(default_factory=list)
    edges: list[tuple[int, str, int]] = field(default_factory=list)
    distance: list[float] = field(default_factory=list)
    kind: str = "scg"
    _index: dict = field(default_factory=dict)

    def lookup(self, sc: StateClass) -> int | None:
        key = sc.marking if self.kind == "marking" else sc.key()
        return self._index.get(key)

    def can_reach_target(self, sc: StateClass) -> bool:
        i = self.lookup(sc)
        if i is None:
            raise KeyError("state class is not a node of this graph")
        return math.isfinite(self.distance[i])

    def root_distance(self) -> float:
        return self.distance[0]

    def to_json(self) -> dict:
        def enc(v):
            return None if math.isinf(v) else float(v)
        return {
            "kind": self.kind,
            "target": str(self.target),
            "nodes": [{
                "id": i,
                "marking": self.stpn.marking_dict(n.marking),
                "variables": list(n.zone.variables),
                "bounds": [[enc(v) for v in row] for row in n.zone.bounds],
                "distance": enc(self.distance[i]),
            } for i, n in enumerate(self.nodes)],
            "edges": [{"from": a, "to": b, "label": t} for a, t, b in self.edges],
        }


def build_graph(stpn: Stpn, target: MarkingPredicate, node_cap: int = 10 ** 5,
                kind: str = "scg") -> ScGraph:
    """Breadth-first enumeration with deduplication, then reverse BFS
    distances to the nearest target class.

    ``kind="marking"`` enumerates the untimed marking graph instead, an
    over-approximation that stays small when zones proliferate.
    """
    if node_cap <= 0:
        raise ValueError("node cap must be positive")
    g = ScGraph(stpn, target, kind=kind)

    def add(sc: StateClass) -> tuple[int, bool]:
        key = sc.marking if kind == "marking" else sc.key()
        if key in g._index:
            return g._index[key], False
        if len(g.nodes) >= node_cap:
            raise NodeCapError(f"state-class graph exceeds {node_cap} nodes; "
                               "retry with marking-graph pruning")
        g._index[key] = len(g.nodes)
        g.nodes.append(sc)
        return len(g.nodes) - 1, True

    root = initial_sc(stpn)
    add(root)
    queue = deque([0])
    while queue:
        i = queue.popleft()
        sc = g.nodes[i]
        for t in stpn.enabled_indices(sc.marking):
            if kind == "marking":
                m = stpn.fire_marking(sc.marking, t).marking
                nxt = StateClass(m, DbmZone.unconstrained(()))
            else:
                nxt = successor_sc(stpn, sc, t)
                if nxt is None:
                    continue
            j, new = add(nxt)
            g.edges.append((i, stpn.transitions[t].name, j))
            if new:
                queue.append(j)
    n = len(g.nodes)
    rev: list[list[int]] = [[] for _ in range(n)]
    for a, _, b in g.edges:
        rev[b].append(a)
    dist = [math.inf] * n
    queue = deque()
    for i, sc in enumerate(g.nodes):
        if stpn.satisfies(sc.marking, target):
            dist[i] = 0
            queue.append(i)
    while queue:
        b = queue.popleft()
        for a in rev[b]:
            if dist[a] == math.inf:
                dist[a] = dist[b] + 1
                queue.append(a)
    g.distance = dist
    return g


def can_reach_target(graph: ScGraph, sc: StateClass) -> bool:
    return graph.can_reach_target(sc)
