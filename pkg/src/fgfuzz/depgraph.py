"""Dependency graph, security vectors and weighted risk scores."""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache
from graphlib import TopologicalSorter
from typing import Iterable, Optional, Sequence, Union

from . import kernels
from .errors import UnknownIdentifier
from .model import PROPERTIES, Property, ProtocolModel

Number = Union[int, Fraction]

DERIVE = "Derive"
LABELS = {p: p.value for p in PROPERTIES}


class Mode(enum.Enum):
    Frontier = "frontier"
    Additive = "additive"


@dataclass(frozen=True)
class Edge:
    src: str  # protector or KDF input
    dst: str  # protected identifier or KDF output
    label: str  # C, I, Au, Ac or Derive


@dataclass(frozen=True)
class SecurityVector:
    c: int
    i: int
    au: int
    ac: int

    def as_list(self) -> list[int]:
        return [self.c, self.i, self.au, self.ac]

    def __getitem__(self, prop: Property) -> int:
        return getattr(self, {"C": "c", "I": "i", "Au": "au", "Ac": "ac"}[prop.value])


@dataclass(frozen=True)
class WeightVector:
    c: Number
    i: Number
    au: Number
    ac: Number

    def __post_init__(self):
        vals = self.as_list()
        if any(v < 0 for v in vals) or not any(v > 0 for v in vals):
            raise ValueError("weights must be non-negative with at least one positive component")

    def as_list(self) -> list[Number]:
        return [self.c, self.i, self.au, self.ac]

    @classmethod
    def parse(cls, text: str) -> "WeightVector":
        parts = [Fraction(p.strip()) for p in text.split(",")]
        if len(parts) != 4:
            raise ValueError("weights need four comma-separated components")
        return cls(*parts)


DEFAULT_WEIGHTS = WeightVector(1, 1, Fraction(1, 2), Fraction(1, 2))


@dataclass(frozen=True)
class DependencyGraph:
    nodes: tuple[str, ...]
    edges: tuple[Edge, ...]
    # identifier -> owner command, kept for reporting which commands a
    # subgraph spans
    owners: tuple[tuple[str, str], ...] = ()

    def protectors(self, node: str, prop: Property) -> frozenset[str]:
        return self._protectors().get((node, prop.value), frozenset())

    def _protectors(self) -> dict:
        cache = self.__dict__.get("_prot_cache")
        if cache is None:
            cache = {}
            for e in self.edges:
                cache.setdefault((e.dst, e.label), set()).add(e.src)
            cache = {k: frozenset(v) for k, v in cache.items()}
            object.__setattr__(self, "_prot_cache", cache)
        return cache

    def in_edges(self, node: str, label: Optional[str] = None) -> list[Edge]:
        return [e for e in self.edges if e.dst == node and (label is None or e.label == label)]

    def owner(self, node: str) -> Optional[str]:
        return dict(self.owners).get(node)

    def __contains__(self, node: str) -> bool:
        return node in self.nodes

    # -- export --------------------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "nodes": list(self.nodes),
            "edges": [{"from": e.src, "to": e.dst, "label": e.label} for e in self.edges],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def to_dot(self, name: str = "dependencies") -> str:
        lines = [f"digraph {name} {{", "  rankdir=LR;"]
        for n in self.nodes:
            lines.append(f'  "{n}";')
        style = {"C": "blue", "I": "red", "Au": "darkgreen", "Ac": "orange", DERIVE: "gray"}
        for e in self.edges:
            dash = ", style=dashed" if e.label == DERIVE else ""
            lines.append(f'  "{e.src}" -> "{e.dst}" [label="{e.label}", color={style[e.label]}{dash}];')
        lines.append("}")
        return "\n".join(lines) + "\n"


def build_graph(model: ProtocolModel) -> DependencyGraph:
    edges = []
    for p in model.protections:
        for prop in PROPERTIES:
            for src in sorted(p.protectors(prop)):
                edges.append(Edge(src, p.identifier, prop.value))
    for k in model.kdfs:
        for src in sorted(k.inputs):
            edges.append(Edge(src, k.output, DERIVE))
    nodes = tuple(i.name for i in model.identifiers)
    owners = tuple((i.name, i.owner_command) for i in model.identifiers)
    return DependencyGraph(nodes, tuple(edges), owners)


def _check(graph: DependencyGraph, identifier: str) -> None:
    if identifier not in graph.nodes:
        raise UnknownIdentifier(identifier)


# ----------------------------------------------------------- frontier mode


def frontier_leaves(graph: DependencyGraph, identifier: str, prop: Property) -> frozenset[str]:
    """Level-0 identifiers reached by expanding ``identifier``'s protectors."""
    leaves: set[str] = set()
    seen: set[str] = set()
    stack = list(graph.protectors(identifier, prop))
    while stack:
        n = stack.pop()
        if n in seen:
            continue
        seen.add(n)
        ps = graph.protectors(n, prop)
        if ps:
            stack.extend(ps)
        else:
            leaves.add(n)
    return frozenset(leaves)


def _frontier_level(graph: DependencyGraph, identifier: str, prop: Property) -> int:
    direct = graph.protectors(identifier, prop)
    if not direct:
        return 0
    # ancestors along p-edges; leaves are the level-0 ones
    ancestors: set[str] = set()
    stack = list(direct)
    while stack:
        n = stack.pop()
        if n not in ancestors:
            ancestors.add(n)
            stack.extend(graph.protectors(n, prop))
    leaves = sorted(a for a in ancestors if not graph.protectors(a, prop))
    internal_set = (ancestors - set(leaves)) | {identifier}
    order = [n for n in TopologicalSorter({n: graph.protectors(n, prop) & internal_set for n in internal_set}).static_order()]
    index = {n: k for k, n in enumerate(leaves)}
    for k, n in enumerate(order):
        index[n] = len(leaves) + k
    reqs = []
    for n in order:
        mask = 0
        for p in graph.protectors(n, prop):
            mask |= 1 << index[p]
        reqs.append(mask)
    size = kernels.min_cover(len(leaves), reqs, index[identifier])
    return size


def security_vector(graph: DependencyGraph, identifier: str, mode: Mode = Mode.Frontier) -> SecurityVector:
    _check(graph, identifier)
    mode = Mode(mode)
    if mode is Mode.Additive:
        return SecurityVector(*_additive(graph, identifier))
    return SecurityVector(*[_frontier_level(graph, identifier, p) for p in PROPERTIES])


# ----------------------------------------------------------- additive mode


def _additive(graph: DependencyGraph, identifier: str) -> tuple[int, int, int, int]:
    """Printed recursion: start at [1,1,1,1]; for every protector add its own
    vector masked by the properties through which it protects."""

    @lru_cache(maxsize=None)
    def level(node: str) -> tuple[int, ...]:
        total = [1, 1, 1, 1]
        relation: dict[str, list[int]] = {}
        for k, prop in enumerate(PROPERTIES):
            for src in graph.protectors(node, prop):
                relation.setdefault(src, [0, 0, 0, 0])[k] = 1
        for src in sorted(relation):
            r = relation[src]
            sub = level(src)
            total = [t + s * m for t, s, m in zip(total, sub, r)]
        return tuple(total)

    return level(identifier)  # type: ignore[return-value]


# ----------------------------------------------------------- scoring


def weighted_score(v: SecurityVector, w: WeightVector = DEFAULT_WEIGHTS) -> Number:
    total = sum(Fraction(a) * Fraction(b) for a, b in zip(v.as_list(), w.as_list()))
    return int(total) if total.denominator == 1 else total


def all_vectors(graph: DependencyGraph, mode: Mode = Mode.Frontier) -> dict[str, SecurityVector]:
    return {n: security_vector(graph, n, mode) for n in graph.nodes}


def rank_identifiers(graph: DependencyGraph, w: WeightVector = DEFAULT_WEIGHTS, mode: Mode = Mode.Frontier) -> list[tuple[str, Number]]:
    scores = [(n, weighted_score(security_vector(graph, n, mode), w)) for n in graph.nodes]
    return sorted(scores, key=lambda t: (Fraction(t[1]), t[0]))


def dependency_subgraph(graph: DependencyGraph, identifier: str) -> DependencyGraph:
    _check(graph, identifier)
    keep = {identifier}
    stack = [identifier]
    while stack:
        n = stack.pop()
        for e in graph.edges:
            if e.dst == n and e.src not in keep:
                keep.add(e.src)
                stack.append(e.src)
    nodes = tuple(n for n in graph.nodes if n in keep)
    edges = tuple(e for e in graph.edges if e.src in keep and e.dst in keep)
    owners = tuple(o for o in graph.owners if o[0] in keep)
    return DependencyGraph(nodes, edges, owners)


def levels_by_depth(graph: DependencyGraph, identifier: str, prop: Property) -> list[list[str]]:
    """Protectors of ``identifier`` for ``prop`` grouped by depth (1 = direct)."""
    out: list[list[str]] = []
    frontier = sorted(graph.protectors(identifier, prop))
    seen = set(frontier)
    while frontier:
        out.append(frontier)
        nxt = set()
        for n in frontier:
            nxt |= graph.protectors(n, prop)
        frontier = sorted(nxt - seen)
        seen |= nxt
    return out


# ----------------------------------------------------------- brute-force oracle


def brute_force_level(graph: DependencyGraph, identifier: str, prop: Property) -> int:
    """Exhaustive reference: smallest set of directly compromised identifiers
    that makes ``identifier`` fall for ``prop``.

    Only identifiers with no ``prop`` protection can be compromised
    directly; a protected identifier falls once all its protectors have.
    Exponential in the node count, intended for small models in tests.
    """
    from itertools import combinations

    if not graph.protectors(identifier, prop):
        return 0
    nodes = list(graph.nodes)
    attackable = [n for n in nodes if not graph.protectors(n, prop)]
    for size in range(len(attackable) + 1):
        for chosen in combinations(attackable, size):
            fallen = set(chosen)
            changed = True
            while changed:
                changed = False
                for n in nodes:
                    ps = graph.protectors(n, prop)
                    if n not in fallen and ps and ps <= fallen:
                        fallen.add(n)
                        changed = True
            if identifier in fallen:
                return size
    return -1


def vectors_to_json(vectors: dict[str, SecurityVector], ranking: Sequence[tuple[str, Number]]) -> dict:
    return {
        "vectors": {n: v.as_list() for n, v in vectors.items()},
        "ranking": [{"identifier": n, "score": str(s)} for n, s in ranking],
    }


def commands_of(graph: DependencyGraph, names: Iterable[str]) -> set[str]:
    owners = dict(graph.owners)
    return {owners[n] for n in names if n in owners}
