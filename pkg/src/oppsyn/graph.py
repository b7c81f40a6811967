"""Transition graph of the switched system: modes (n, i), unit level steps.

Vertices pair a 1-based level index n with a switch count i.  Step-up edges
go (n-1, i) -> (n, i+1), step-down edges (n+1, i) -> (n, i+1).  Unipolar
graphs keep only levels at or above the central (zero) level.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

ModeId = tuple[int, int]
Edge = tuple[ModeId, ModeId]


class EmptyGraph(ValueError):
    """No terminal mode is reachable from the source."""


class PathExplosion(RuntimeError):
    """Path enumeration exceeded the configured cap."""


@dataclass(frozen=True)
class TransitionGraph:
    n_levels: int
    d: int
    unipolar: bool
    source: ModeId
    vertices: frozenset[ModeId]
    up_edges: frozenset[Edge]
    down_edges: frozenset[Edge]

    @property
    def edges(self) -> frozenset[Edge]:
        return self.up_edges | self.down_edges

    @property
    def terminals(self) -> frozenset[ModeId]:
        return frozenset(v for v in self.vertices if v[1] == self.d)

    @property
    def center(self) -> int:
        return (self.n_levels + 1) // 2

    def sorted_vertices(self) -> list[ModeId]:
        return sorted(self.vertices, key=lambda v: (v[1], v[0]))

    def sorted_edges(self) -> list[tuple[str, Edge]]:
        tagged = [("+", e) for e in self.up_edges] + [("-", e) for e in self.down_edges]
        return sorted(tagged, key=lambda t: (t[1][1][1], t[1][1][0], t[0]))

    def out_edges(self, v: ModeId) -> list[Edge]:
        return sorted(e for e in self.edges if e[0] == v)

    def in_edges(self, v: ModeId) -> list[Edge]:
        return sorted(e for e in self.edges if e[1] == v)


def build_graph(n_levels: int, d: int, unipolar: bool) -> TransitionGraph:
    """Constructive search from the central mode, pruned to terminal-coreachable vertices."""
    if n_levels < 3 or n_levels % 2 == 0:
        raise ValueError("need an odd number of levels >= 3")
    if d < 1:
        raise ValueError("pulse number must be >= 1")
    center = (n_levels + 1) // 2
    lo = center if unipolar else 1
    source = (center, 0)

    reachable: set[ModeId] = {source}
    frontier = [source]
    edges: set[tuple[str, Edge]] = set()
    while frontier:
        nxt = []
        for (n, i) in frontier:
            if i == d:
                continue
            for sign, n2 in (("+", n + 1), ("-", n - 1)):
                if lo <= n2 <= n_levels:
                    e = ((n, i), (n2, i + 1))
                    edges.add((sign, e))
                    if e[1] not in reachable:
                        reachable.add(e[1])
                        nxt.append(e[1])
        frontier = nxt

    # prune vertices that cannot reach any terminal
    coreachable: set[ModeId] = {v for v in reachable if v[1] == d}
    if not coreachable:
        raise EmptyGraph(f"no terminal reachable for N={n_levels}, d={d}, unipolar={unipolar}")
    changed = True
    while changed:
        changed = False
        for _, (src, dst) in edges:
            if dst in coreachable and src not in coreachable:
                coreachable.add(src)
                changed = True
    vertices = reachable & coreachable
    if source not in vertices:
        raise EmptyGraph(f"source pruned for N={n_levels}, d={d}, unipolar={unipolar}")
    up = frozenset(e for s, e in edges if s == "+" and e[0] in vertices and e[1] in vertices)
    down = frozenset(e for s, e in edges if s == "-" and e[0] in vertices and e[1] in vertices)
    return TransitionGraph(
        n_levels=n_levels, d=d, unipolar=unipolar, source=source,
        vertices=frozenset(vertices), up_edges=up, down_edges=down,
    )


def enumerate_paths(g: TransitionGraph, cap: int = 10**6) -> list[tuple[Edge, ...]]:
    """All source-to-terminal arc sequences, depth-first, lexicographic order."""
    adjacency: dict[ModeId, list[Edge]] = {}
    for e in sorted(g.edges):
        adjacency.setdefault(e[0], []).append(e)
    paths: list[tuple[Edge, ...]] = []
    stack: list[Edge] = []

    def walk(v: ModeId):
        if v[1] == g.d:
            if len(paths) >= cap:
                raise PathExplosion(f"more than {cap} paths")
            paths.append(tuple(stack))
            return
        for e in adjacency.get(v, ()):
            stack.append(e)
            walk(e[1])
            stack.pop()

    walk(g.source)
    return paths


def path_levels(path: tuple[Edge, ...]) -> tuple[int, ...]:
    """Level-index sequence n^0..n^d traced by a path."""
    return (path[0][0][0],) + tuple(e[1][0] for e in path)


def path_from_levels(levels: tuple[int, ...], g: TransitionGraph) -> tuple[Edge, ...]:
    """Inverse of path_levels; raises if an arc is missing from the graph."""
    path = []
    for i in range(len(levels) - 1):
        e = ((levels[i], i), (levels[i + 1], i + 1))
        if e not in g.edges:
            raise ValueError(f"arc {e} not in graph")
        path.append(e)
    return tuple(path)


def terminal_count(g: TransitionGraph) -> tuple[int, int]:
    """(enumerated terminal count, closed-form count) - enumeration is ground truth."""
    formula = min((g.n_levels - 1) // 2 + (g.d + 1) % 2, g.d + 1)
    return len(g.terminals), formula


def vertex_count_formula(g: TransitionGraph) -> int:
    c = g.center
    return (math.ceil(g.d / 2) + 1) + 2 * sum(
        math.ceil((g.d - i) / 2) + 1 for i in range(1, c + 1)
    )


def edge_count_formula(g: TransitionGraph) -> int:
    c = g.center
    return 2 * g.d - (c - 1) * c


def graph_counts(g: TransitionGraph) -> dict:
    """Enumerated counts next to the closed-form values, mismatches flagged."""
    terminals, terminals_formula = terminal_count(g)
    counts = {
        "vertices": len(g.vertices),
        "edges": len(g.edges),
        "terminals": terminals,
        "vertices_formula": vertex_count_formula(g),
        "edges_formula": edge_count_formula(g),
        "terminals_formula": terminals_formula,
    }
    counts["formula_mismatch"] = sorted(
        k for k in ("vertices", "edges", "terminals")
        if counts[k] != counts[f"{k}_formula"]
    )
    return counts


def to_dot(g: TransitionGraph) -> str:
    """Graphviz rendering with step-ups and step-downs distinguished by color."""
    lines = [f'digraph transitions {{  // N={g.n_levels} d={g.d} unipolar={g.unipolar}']
    lines.append("  rankdir=LR;")
    for (n, i) in g.sorted_vertices():
        shape = "doublecircle" if i == g.d else "circle"
        lines.append(f'  "{n},{i}" [shape={shape}];')
    for sign, (src, dst) in g.sorted_edges():
        color = "blue" if sign == "+" else "red"
        lines.append(f'  "{src[0]},{src[1]}" -> "{dst[0]},{dst[1]}" [color={color}];')
    lines.append("}")
    return "\n".join(lines) + "\n"


def to_adjacency_json(g: TransitionGraph) -> str:
    adj = {
        f"{n},{i}": [f"{m},{j}" for (_, (m, j)) in
                     sorted((e for e in g.edges if e[0] == (n, i)), key=lambda e: e[1])]
        for (n, i) in g.sorted_vertices()
    }
    doc = {
        "n_levels": g.n_levels,
        "d": g.d,
        "unipolar": g.unipolar,
        "source": list(g.source),
        "adjacency": adj,
        "counts": graph_counts(g),
    }
    return json.dumps(doc, indent=2, sort_keys=True)
