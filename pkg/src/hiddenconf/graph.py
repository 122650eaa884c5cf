"""DAGs, d-separation, and the two-observation unrolling of mechanism-augmented graphs.

The unrolled graph puts two observations ``V_i`` and ``V_j`` of every base
variable ``V`` side by side and attaches a shared mechanism node ``Theta_V``
to both copies. Dependence between the copies can then only flow through
mechanism nodes, which is what makes cross-observation independencies
testable.
"""

from __future__ import annotations

import itertools
from collections import deque
from dataclasses import dataclass, field
from graphlib import CycleError, TopologicalSorter
from typing import Iterable

from .errors import UsageError


class GraphError(UsageError):
    """Raised for malformed graphs (cycles, unknown endpoints, duplicates)."""


class QueryError(UsageError):
    """Raised for invalid d-separation queries."""


@dataclass(frozen=True)
class Dag:
    variables: tuple[str, ...]
    edges: frozenset[tuple[str, str]]
    latent: frozenset[str] = frozenset()

    def __post_init__(self):
        names = set(self.variables)
        if len(names) != len(self.variables):
            raise GraphError(f"duplicate variable names in {self.variables}")
        for a, b in self.edges:
            if a not in names or b not in names:
                raise GraphError(f"edge {a}->{b} names an undeclared variable")
            if a == b:
                raise GraphError(f"self-edge on {a}")
            if (b, a) in self.edges:
                raise GraphError(f"edge {a}-{b} declared in both directions")
        unknown = set(self.latent) - names
        if unknown:
            raise GraphError(f"latent flags for undeclared variables {sorted(unknown)}")
        try:
            order = tuple(self._sorter().static_order())
        except CycleError as exc:
            raise GraphError(f"directed cycle: {' -> '.join(exc.args[1])}") from None
        object.__setattr__(self, "_order", order)

    @classmethod
    def from_edges(cls, variables: Iterable[str], edges: Iterable[tuple[str, str]],
                   latent: Iterable[str] = ()) -> "Dag":
        edges = list(edges)
        if len(set(edges)) != len(edges):
            raise GraphError("duplicate edges")
        return cls(tuple(variables), frozenset(edges), frozenset(latent))

    def _sorter(self) -> TopologicalSorter:
        ts = TopologicalSorter({v: () for v in self.variables})
        for a, b in self.edges:
            ts.add(b, a)
        return ts

    def topological_order(self) -> tuple[str, ...]:
        return self._order

    def parents(self, v: str) -> set[str]:
        return {a for a, b in self.edges if b == v}

    def children(self, v: str) -> set[str]:
        return {b for a, b in self.edges if a == v}

    def has_edge(self, a: str, b: str) -> bool:
        return (a, b) in self.edges

    def ancestors(self, nodes: Iterable[str]) -> set[str]:
        """Nodes with a directed path into ``nodes``, including ``nodes`` themselves."""
        parents = _adjacency(self.edges, reverse=True)
        seen = set(nodes)
        stack = list(seen)
        while stack:
            v = stack.pop()
            for p in parents.get(v, ()):
                if p not in seen:
                    seen.add(p)
                    stack.append(p)
        return seen

    def is_ancestor(self, a: str, b: str) -> bool:
        """True iff there is a directed path of length >= 1 from ``a`` to ``b``."""
        return a != b and a in self.ancestors([b])


def _adjacency(edges, reverse=False) -> dict[str, list[str]]:
    adj: dict[str, list[str]] = {}
    for a, b in edges:
        if reverse:
            a, b = b, a
        adj.setdefault(a, []).append(b)
    return adj


@dataclass(frozen=True)
class DSepQuery:
    a_set: frozenset[str]
    b_set: frozenset[str]
    cond_set: frozenset[str] = frozenset()

    def __init__(self, a_set, b_set, cond_set=()):
        object.__setattr__(self, "a_set", frozenset(_as_set(a_set)))
        object.__setattr__(self, "b_set", frozenset(_as_set(b_set)))
        object.__setattr__(self, "cond_set", frozenset(_as_set(cond_set)))
        if not self.a_set or not self.b_set:
            raise QueryError("a_set and b_set must be nonempty")
        if (self.a_set & self.b_set) or (self.a_set & self.cond_set) or (self.b_set & self.cond_set):
            raise QueryError("a_set, b_set and cond_set must be pairwise disjoint")


def _as_set(x) -> set[str]:
    if isinstance(x, str):
        return {x}
    return set(x)


def d_separated(g: "Dag | UnrolledGraph", a_set, b_set=None, cond_set=()) -> bool:
    """Decide ``a_set _||_ b_set | cond_set`` in ``g`` by reachability (Bayes ball).

    Accepts either a :class:`DSepQuery` as the second argument or the three
    sets directly.
    """
    if isinstance(g, UnrolledGraph):
        g = g.dag
    q = a_set if isinstance(a_set, DSepQuery) else DSepQuery(a_set, b_set, cond_set)
    known = set(g.variables)
    unknown = (q.a_set | q.b_set | q.cond_set) - known
    if unknown:
        raise QueryError(f"unknown nodes {sorted(unknown)}")

    parents = _adjacency(g.edges, reverse=True)
    children = _adjacency(g.edges)
    z = q.cond_set
    z_anc = g.ancestors(z)

    # direction "up": reached from a child; "down": reached from a parent
    visited: set[tuple[str, str]] = set()
    queue = deque((v, "up") for v in q.a_set)
    while queue:
        v, d = queue.popleft()
        if (v, d) in visited:
            continue
        visited.add((v, d))
        if v not in z and v in q.b_set:
            return False
        if d == "up" and v not in z:
            queue.extend((p, "up") for p in parents.get(v, ()))
            queue.extend((c, "down") for c in children.get(v, ()))
        elif d == "down":
            if v not in z:
                queue.extend((c, "down") for c in children.get(v, ()))
            if v in z_anc:
                queue.extend((p, "up") for p in parents.get(v, ()))
    return True


# ---------------------------------------------------------------------------
# unrolling


COPIES = ("i", "j")


def copy_name(v: str, copy: str) -> str:
    return f"{v}_{copy}"


def mechanism_name(v: str) -> str:
    return f"Theta_{v}"


@dataclass(frozen=True)
class UnrolledGraph:
    base: Dag
    dag: Dag
    mechanisms: frozenset[str]
    degenerate: frozenset[str] = field(default_factory=frozenset)

    @property
    def variables(self):
        return self.dag.variables

    @property
    def edges(self):
        return self.dag.edges


def _mech_key(name: str) -> str:
    # accepts "T", "Theta_T" and the unicode-free spellings used on the CLI
    return name[len("Theta_"):] if name.startswith("Theta_") else name


def unroll(base: Dag, degenerate: Iterable[str] = (),
           mech_dependencies: Iterable[tuple[str, str]] = ()) -> UnrolledGraph:
    """Two-copy unrolling of ``base`` with one mechanism node per base variable.

    ``degenerate`` names mechanisms held constant across environments; they are
    dropped from the graph. Each pair in ``mech_dependencies`` gets a fresh
    latent common parent, standing in for a bidirected edge between the two
    mechanism nodes.
    """
    degenerate_vars = {_mech_key(m) for m in degenerate}
    unknown = degenerate_vars - set(base.variables)
    if unknown:
        raise GraphError(f"degenerate mechanisms for unknown variables {sorted(unknown)}")

    variables: list[str] = []
    edges: list[tuple[str, str]] = []
    latent: set[str] = set()
    for c in COPIES:
        for v in base.variables:
            variables.append(copy_name(v, c))
            if v in base.latent:
                latent.add(copy_name(v, c))
        for a, b in sorted(base.edges):
            edges.append((copy_name(a, c), copy_name(b, c)))

    mechanisms = []
    for v in base.variables:
        if v in degenerate_vars:
            continue
        m = mechanism_name(v)
        mechanisms.append(m)
        variables.append(m)
        latent.add(m)
        edges.extend((m, copy_name(v, c)) for c in COPIES)

    for a, b in mech_dependencies:
        ka, kb = _mech_key(a), _mech_key(b)
        for k in (ka, kb):
            if k in degenerate_vars:
                raise GraphError(f"dependency names degenerate mechanism {mechanism_name(k)}")
            if k not in base.variables:
                raise GraphError(f"dependency names unknown mechanism {mechanism_name(k)}")
        if ka == kb:
            raise GraphError("a mechanism cannot depend on itself")
        ka, kb = sorted((ka, kb))
        hub = f"Dep_{ka}_{kb}"
        if hub in variables:
            continue
        variables.append(hub)
        latent.add(hub)
        edges.extend([(hub, mechanism_name(ka)), (hub, mechanism_name(kb))])

    dag = Dag.from_edges(variables, edges, latent)
    return UnrolledGraph(base, dag, frozenset(mechanisms), frozenset(mechanism_name(v) for v in degenerate_vars))


# ---------------------------------------------------------------------------
# enumeration of the graph families behind the two detection criteria

FORWARD, BACKWARD, ABSENT = "forward", "backward", "absent"
STATES = (FORWARD, BACKWARD, ABSENT)
ARROWS = {FORWARD: "->", BACKWARD: "<-", ABSENT: ""}

THEOREM1_SLOTS = (("X", "T"), ("X", "Y"), ("T", "Y"), ("U", "T"), ("U", "Y"), ("U", "X"))
THEOREM2_SLOTS = (("T", "Y"), ("U", "T"), ("U", "Y"))

# pair order in which the degeneracy columns are printed
MECHANISMS = ("T", "Y", "X", "U")
DEGENERACY_COLUMNS = tuple(
    combo for r in range(1, 5) for combo in itertools.combinations(MECHANISMS, r)
)


@dataclass(frozen=True)
class EdgePattern:
    slots: tuple[tuple[str, str], ...]
    states: tuple[str, ...]

    def edges(self) -> list[tuple[str, str]]:
        out = []
        for (a, b), s in zip(self.slots, self.states):
            if s == FORWARD:
                out.append((a, b))
            elif s == BACKWARD:
                out.append((b, a))
        return out

    def arrows(self) -> tuple[str, ...]:
        return tuple(ARROWS[s] for s in self.states)


def _pattern_dag(variables, pattern: EdgePattern) -> Dag | None:
    try:
        return Dag.from_edges(variables, pattern.edges(), latent=("U",))
    except GraphError:
        return None


def _enumerate(variables, slots, allowed) -> list[tuple[EdgePattern, Dag]]:
    out = []
    for states in itertools.product(*(allowed.get(s, STATES) for s in slots)):
        pattern = EdgePattern(slots, states)
        dag = _pattern_dag(variables, pattern)
        if dag is not None:
            out.append((pattern, dag))
    return out


def theorem1_patterns() -> list[tuple[EdgePattern, Dag]]:
    allowed = {("X", "T"): (FORWARD,), ("X", "Y"): (FORWARD,), ("T", "Y"): (FORWARD, ABSENT)}
    rows = _enumerate(("T", "Y", "X", "U"), THEOREM1_SLOTS, allowed)
    return [(p, d) for p, d in rows if not d.is_ancestor("Y", "T")]


def theorem2_patterns() -> list[tuple[EdgePattern, Dag]]:
    return _enumerate(("T", "Y", "U"), THEOREM2_SLOTS, {})


def enumerate_theorem1_family() -> list[Dag]:
    """The 40 DAGs over (T, Y, X, U) with X a known common cause and Y not an ancestor of T."""
    return [d for _, d in theorem1_patterns()]


def enumerate_theorem2_family() -> list[Dag]:
    """The 25 acyclic edge combinations over (T, Y, U)."""
    return [d for _, d in theorem2_patterns()]


def is_confounder(dag: Dag) -> bool:
    return dag.has_edge("U", "T") and dag.has_edge("U", "Y")


def covariate_query() -> DSepQuery:
    return DSepQuery({"T_j"}, {"Y_i"}, {"T_i", "X_i", "X_j"})


# ---------------------------------------------------------------------------
# verification tables


@dataclass(frozen=True)
class Theorem1Row:
    id: int
    arrows: tuple[str, ...]
    dsep: bool
    confounder: bool


@dataclass(frozen=True)
class Theorem2Row:
    id: int
    arrows: tuple[str, ...]
    dsep_given_ti: bool
    dsep_given_yj: bool
    confounder: bool
    y_ancestor_of_t: bool


@dataclass(frozen=True)
class DegenerateRow:
    id: int
    arrows: tuple[str, ...]
    confounder: bool
    dsep: tuple[bool, ...]  # one entry per DEGENERACY_COLUMNS


def verify_theorem1_table() -> list[Theorem1Row]:
    rows = []
    for n, (pattern, dag) in enumerate(theorem1_patterns(), start=1):
        verdict = d_separated(unroll(dag), covariate_query())
        rows.append(Theorem1Row(n, pattern.arrows(), verdict, is_confounder(dag)))
    return rows


def verify_theorem2_table() -> list[Theorem2Row]:
    rows = []
    for n, (pattern, dag) in enumerate(theorem2_patterns(), start=1):
        g = unroll(dag)
        rows.append(Theorem2Row(
            n,
            pattern.arrows(),
            d_separated(g, {"T_j"}, {"Y_i"}, {"T_i"}),
            d_separated(g, {"T_j"}, {"Y_i"}, {"Y_j"}),
            is_confounder(dag),
            dag.is_ancestor("Y", "T"),
        ))
    return rows


def verify_degenerate_table() -> list[DegenerateRow]:
    rows = []
    for n, (pattern, dag) in enumerate(theorem1_patterns(), start=1):
        verdicts = tuple(
            d_separated(unroll(dag, degenerate=cols), covariate_query()) for cols in DEGENERACY_COLUMNS
        )
        rows.append(DegenerateRow(n, pattern.arrows(), is_confounder(dag), verdicts))
    return rows


def selection_bias_graph(confounded: bool) -> Dag:
    edges = [("T", "Y"), ("T", "C"), ("Y", "C")]
    if confounded:
        edges += [("U", "T"), ("U", "Y")]
    return Dag.from_edges(("T", "Y", "C", "U"), edges, latent=("U",))


def check_selection_bias_example(confounded: bool = False,
                                 extra_degenerate: Iterable[str] = ()) -> tuple[bool, bool]:
    """Criterion verdicts when a selection collider C of T and Y is conditioned on.

    Returns ``(dsep with Theta_C random, dsep with Theta_C degenerate)`` for
    ``T_j _||_ Y_i | T_i, C_i, C_j``. ``extra_degenerate`` fixes further
    mechanisms in both graphs.
    """
    dag = selection_bias_graph(confounded)
    q = DSepQuery({"T_j"}, {"Y_i"}, {"T_i", "C_i", "C_j"})
    extra = set(extra_degenerate)
    return (
        d_separated(unroll(dag, degenerate=extra), q),
        d_separated(unroll(dag, degenerate=extra | {"C"}), q),
    )
