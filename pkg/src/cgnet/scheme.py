"""Composition schemes: DAGs of subsystems over a set of particles."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ArgumentError


@dataclass(frozen=True)
class SchemeNode:
    id: int
    part: frozenset
    level: int


@dataclass
class CompositionScheme:
    """Nodes, child->parent edges and the root id.

    Node ids are arbitrary hashables; ``build_scheme`` uses consecutive ints with
    leaves first, so every child has a smaller id than its parents.
    """

    nodes: list[SchemeNode]
    edges: list[tuple]
    root: object
    _children: dict = field(default=None, init=False, repr=False)

    def __post_init__(self):
        self._children = {n.id: [] for n in self.nodes}
        for c, p in self.edges:
            self._children.setdefault(p, []).append(c)

    def node(self, node_id) -> SchemeNode:
        for n in self.nodes:
            if n.id == node_id:
                return n
        raise KeyError(node_id)

    def children(self, node_id) -> list:
        return list(self._children.get(node_id, []))

    def levels(self) -> list[list[SchemeNode]]:
        top = max(n.level for n in self.nodes)
        return [[n for n in self.nodes if n.level == k] for k in range(top + 1)]

    def leaves(self) -> list[SchemeNode]:
        return [n for n in self.nodes if not self._children.get(n.id)]


def _find_cycle(ids, edges) -> list | None:
    succ = {i: [] for i in ids}
    for c, p in edges:
        if c in succ:
            succ[c].append(p)
    color = {i: 0 for i in ids}
    stack_path: list = []

    def visit(u):
        color[u] = 1
        stack_path.append(u)
        for v in succ.get(u, []):
            if v not in color:
                continue
            if color[v] == 1:
                return stack_path[stack_path.index(v):] + [v]
            if color[v] == 0:
                cyc = visit(v)
                if cyc:
                    return cyc
        stack_path.pop()
        color[u] = 2
        return None

    for i in ids:
        if color[i] == 0:
            cyc = visit(i)
            if cyc:
                return cyc
    return None


def validate_scheme(d: CompositionScheme) -> list[str]:
    """All violated invariants as human-readable strings; empty means valid.

    Checked: acyclicity, singleton leaves, a unique root covering every
    elementary part, parts of descendants contained in parts of ancestors,
    and each internal part equal to the union of its children's parts.
    """
    violations = []
    ids = [n.id for n in d.nodes]
    parts = {n.id: frozenset(n.part) for n in d.nodes}
    if len(set(ids)) != len(ids):
        violations.append("duplicate node ids")
    for c, p in d.edges:
        for x in (c, p):
            if x not in parts:
                violations.append(f"unknown node: edge ({c} -> {p}) references {x}")
    edges = [(c, p) for c, p in d.edges if c in parts and p in parts]

    cycle = _find_cycle(ids, edges)
    if cycle:
        violations.append(f"cycle: {' -> '.join(map(str, cycle))}")

    children = {i: [] for i in ids}
    has_parent = set()
    for c, p in edges:
        children[p].append(c)
        has_parent.add(c)

    universe = frozenset().union(*[parts[i] for i in ids if not children[i]]) if ids else frozenset()
    for i in ids:
        if not children[i] and len(parts[i]) != 1:
            violations.append(f"leaf singleton: leaf {i} has part {sorted(parts[i])}")

    roots = [i for i in ids if i not in has_parent]
    if len(roots) != 1:
        violations.append(f"unique root: found roots {roots}")
    if d.root not in parts:
        violations.append(f"unique root: declared root {d.root} is not a node")
    else:
        if d.root in has_parent:
            violations.append(f"unique root: declared root {d.root} has a parent")
        if parts[d.root] != universe:
            violations.append(f"root part: root {d.root} part {sorted(parts[d.root])} "
                              f"!= all parts {sorted(universe)}")

    if not cycle:
        # descendants' parts must be subsets of ancestors' parts
        for c, p in edges:
            if not parts[c] <= parts[p]:
                violations.append(f"descendant subset: part of {c} {sorted(parts[c])} "
                                  f"not within part of {p} {sorted(parts[p])}")
        for i in ids:
            if children[i]:
                union = frozenset().union(*[parts[c] for c in children[i]])
                if union != parts[i]:
                    violations.append(f"union of children: node {i} part {sorted(parts[i])} "
                                      f"!= union {sorted(union)}")
    return violations


def build_scheme(positions, cutoff: float, depth: int) -> CompositionScheme:
    """Neighbourhood scheme: level k node of atom i merges the level k-1 nodes of
    every atom within ``cutoff`` of atom i (i included); the root merges the top
    level.  Node ids: leaves ``0..n-1``, then ``k*n + i`` for level k, root last.
    """
    pos = np.asarray(positions, dtype=float)
    if pos.ndim != 2 or pos.shape[1] != 3:
        raise ArgumentError("positions must be an (n, 3) array")
    if depth < 1:
        raise ArgumentError("depth must be >= 1")
    if not cutoff > 0:
        raise ArgumentError("cutoff must be positive")
    n = len(pos)
    if n == 0:
        raise ArgumentError("system has no atoms")
    dist = np.linalg.norm(pos[:, None, :] - pos[None, :, :], axis=-1)
    near = dist <= cutoff
    nodes = [SchemeNode(i, frozenset([i]), 0) for i in range(n)]
    edges = []
    prev_parts = [frozenset([i]) for i in range(n)]
    for k in range(1, depth + 1):
        parts = []
        for i in range(n):
            nbrs = np.flatnonzero(near[i])
            part = frozenset().union(*[prev_parts[j] for j in nbrs])
            parts.append(part)
            nodes.append(SchemeNode(k * n + i, part, k))
            edges.extend(((k - 1) * n + j, k * n + i) for j in nbrs)
        prev_parts = parts
    root = (depth + 1) * n
    nodes.append(SchemeNode(root, frozenset(range(n)), depth + 1))
    edges.extend((depth * n + i, root) for i in range(n))
    return CompositionScheme(nodes, edges, root)


def figure_scheme() -> CompositionScheme:
    """The four-leaf example scheme: pairs, then triples, then the root."""
    e1, e2, e3, e4 = 0, 1, 2, 3
    nodes = [SchemeNode(i, frozenset([i]), 0) for i in range(4)]
    p1, p2, p3 = 4, 5, 6
    nodes += [SchemeNode(p1, frozenset([e3, e4]), 1), SchemeNode(p2, frozenset([e1, e4]), 1),
              SchemeNode(p3, frozenset([e2, e3]), 1)]
    t1, t2, t3 = 7, 8, 9
    nodes += [SchemeNode(t1, frozenset([e2, e3, e4]), 2), SchemeNode(t2, frozenset([e1, e2, e3]), 2),
              SchemeNode(t3, frozenset([e1, e2, e4]), 2)]
    root = 10
    nodes.append(SchemeNode(root, frozenset(range(4)), 3))
    edges = [(e3, p1), (e4, p1), (e1, p2), (e4, p2), (e2, p3), (e3, p3),
             (e2, t1), (p1, t1), (e2, t3), (p2, t3), (e1, t2), (p3, t2),
             (t1, root), (t2, root), (t3, root)]
    return CompositionScheme(nodes, edges, root)
