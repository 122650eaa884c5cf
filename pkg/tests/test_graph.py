import itertools

import networkx as nx
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hiddenconf import tables
from hiddenconf.graph import (
    DSepQuery,
    Dag,
    GraphError,
    QueryError,
    check_selection_bias_example,
    covariate_query,
    d_separated,
    enumerate_theorem1_family,
    enumerate_theorem2_family,
    is_confounder,
    theorem1_patterns,
    unroll,
    verify_degenerate_table,
    verify_theorem1_table,
    verify_theorem2_table,
)

ROW1_EDGES = [("X", "T"), ("X", "Y"), ("T", "Y"), ("U", "T"), ("U", "Y"), ("U", "X")]


def row1():
    return Dag.from_edges("TYXU", ROW1_EDGES, latent="U")


# --- Dag construction -------------------------------------------------------

def test_cycle_rejected():
    with pytest.raises(GraphError, match="cycle"):
        Dag.from_edges("ABC", [("A", "B"), ("B", "C"), ("C", "A")])


def test_self_edge_and_duplicates_rejected():
    with pytest.raises(GraphError):
        Dag.from_edges("AB", [("A", "A")])
    with pytest.raises(GraphError):
        Dag.from_edges("AB", [("A", "B"), ("A", "B")])
    with pytest.raises(GraphError):
        Dag.from_edges("AB", [("A", "C")])


def test_ancestry():
    g = Dag.from_edges("ABCD", [("A", "B"), ("B", "C")])
    assert g.is_ancestor("A", "C")
    assert not g.is_ancestor("C", "A")
    assert not g.is_ancestor("D", "A")
    assert g.ancestors(["C"]) == {"A", "B", "C"}


# --- d-separation -----------------------------------------------------------

def test_edgeless_pair_is_separated():
    g = Dag.from_edges("AB", [])
    assert d_separated(g, {"A"}, {"B"}, set())


def test_collider_rules():
    g = Dag.from_edges("ABCD", [("A", "C"), ("B", "C"), ("C", "D")])
    assert d_separated(g, {"A"}, {"B"})
    assert not d_separated(g, {"A"}, {"B"}, {"C"})
    assert not d_separated(g, {"A"}, {"B"}, {"D"})  # descendant of the collider


def test_chain_and_fork_rules():
    chain = Dag.from_edges("ABC", [("A", "B"), ("B", "C")])
    assert not d_separated(chain, {"A"}, {"C"})
    assert d_separated(chain, {"A"}, {"C"}, {"B"})
    fork = Dag.from_edges("ABC", [("B", "A"), ("B", "C")])
    assert d_separated(fork, {"A"}, {"C"}, {"B"})


def test_query_errors():
    g = Dag.from_edges("AB", [("A", "B")])
    with pytest.raises(QueryError):
        d_separated(g, {"A"}, {"A"})
    with pytest.raises(QueryError):
        d_separated(g, {"A"}, {"Z"})
    with pytest.raises(QueryError):
        DSepQuery({"A"}, {"B"}, {"A"})


def test_table1_row_examples():
    q = covariate_query()
    assert not d_separated(unroll(row1()), q)
    row4 = Dag.from_edges("TYXU", [("X", "T"), ("X", "Y"), ("T", "Y"), ("U", "T"), ("U", "X")], latent="U")
    assert d_separated(unroll(row4), q)


def _random_dag(draw_bits, n):
    names = [f"V{k}" for k in range(n)]
    pairs = list(itertools.combinations(range(n), 2))
    edges = [(names[a], names[b]) for (a, b), bit in zip(pairs, draw_bits) if bit]
    return Dag.from_edges(names, edges)


def _nx_dsep(g, a, b, z):
    G = nx.DiGraph()
    G.add_nodes_from(g.variables)
    G.add_edges_from(g.edges)
    fn = getattr(nx, "is_d_separator", None) or nx.d_separated
    return fn(G, set(a), set(b), set(z))


@settings(max_examples=300, deadline=None)
@given(st.integers(3, 7).flatmap(lambda n: st.tuples(
    st.just(n),
    st.lists(st.booleans(), min_size=n * (n - 1) // 2, max_size=n * (n - 1) // 2),
    st.permutations(range(n)),
    st.lists(st.booleans(), min_size=n, max_size=n),
)))
def test_dsep_matches_networkx(case):
    n, bits, perm, in_z = case
    g = _random_dag(bits, n)
    names = g.variables
    a, b = names[perm[0]], names[perm[1]]
    z = {names[i] for i in perm[2:] if in_z[i]}
    got = d_separated(g, {a}, {b}, z)
    assert got == _nx_dsep(g, {a}, {b}, z)
    assert got == d_separated(g, {b}, {a}, z)  # symmetry


@settings(max_examples=100, deadline=None)
@given(st.lists(st.booleans(), min_size=45, max_size=45))
def test_acyclic_for_random_forward_edges(bits):
    g = _random_dag(bits, 10)
    order = {v: k for k, v in enumerate(g.topological_order())}
    assert all(order[a] < order[b] for a, b in g.edges)


def _joint(g, rng):
    """Exhaustive joint of binary variables with random CPTs, as a dict of arrays."""
    names = list(g.topological_order())
    n = len(names)
    states = np.array(list(itertools.product([0, 1], repeat=n)))
    prob = np.ones(len(states))
    for k, v in enumerate(names):
        pa = sorted(g.parents(v), key=names.index)
        cpt = rng.uniform(0.05, 0.95, 2 ** len(pa))
        idx = np.zeros(len(states), dtype=int)
        for p in pa:
            idx = idx * 2 + states[:, names.index(p)]
        p1 = cpt[idx]
        prob *= np.where(states[:, k] == 1, p1, 1 - p1)
    return names, states, prob


def _ci_holds(names, states, prob, a, b, z, tol=1e-10):
    ia, ib = names.index(a), names.index(b)
    iz = [names.index(v) for v in z]
    for zval in itertools.product([0, 1], repeat=len(iz)):
        mask = np.all(states[:, iz] == zval, axis=1) if iz else np.ones(len(states), bool)
        pz = prob[mask].sum()
        for va, vb in itertools.product([0, 1], repeat=2):
            pab = prob[mask & (states[:, ia] == va) & (states[:, ib] == vb)].sum()
            pa_ = prob[mask & (states[:, ia] == va)].sum()
            pb_ = prob[mask & (states[:, ib] == vb)].sum()
            if abs(pab * pz - pa_ * pb_) > tol:
                return False
    return True


def test_dsep_implies_ci_on_enumerated_binary_joints():
    # Markov direction: every d-separation holds in the exact joint;
    # non-separations are dependent with probability one under random CPTs
    rng = np.random.default_rng(11)
    checked = 0
    for _ in range(150):
        n = int(rng.integers(3, 7))
        g = _random_dag(rng.random(n * (n - 1) // 2) < 0.5, n)
        names, states, prob = _joint(g, rng)
        perm = rng.permutation(n)
        a, b = names[perm[0]], names[perm[1]]
        z = [names[i] for i in perm[2:] if rng.random() < 0.5]
        sep = d_separated(g, {a}, {b}, set(z))
        assert _ci_holds(names, states, prob, a, b, z) == sep, (g.edges, a, b, z)
        checked += 1
    assert checked >= 100


# --- unrolling --------------------------------------------------------------

def test_unroll_counts_and_structure():
    u = unroll(row1())
    assert len(u.variables) == 12
    for m in ("Theta_T", "Theta_Y", "Theta_X", "Theta_U"):
        assert u.dag.children(m) == {m[-1] + "_i", m[-1] + "_j"}
        assert u.dag.parents(m) == set()
    for a, b in row1().edges:
        assert u.dag.has_edge(f"{a}_i", f"{b}_i") and u.dag.has_edge(f"{a}_j", f"{b}_j")


def test_degenerate_removes_mechanisms():
    u = unroll(row1(), degenerate={"Theta_T", "U"})
    assert "Theta_T" not in u.variables and "Theta_U" not in u.variables
    assert u.degenerate == {"Theta_T", "Theta_U"}


def test_all_degenerate_disconnects_copies():
    u = unroll(row1(), degenerate="TYXU")
    for a in "TYXU":
        for b in "TYXU":
            assert d_separated(u, {f"{a}_i"}, {f"{b}_j"}, set())


def test_row1_with_all_but_y_degenerate_separates():
    assert d_separated(unroll(row1(), degenerate={"Theta_T", "Theta_X", "Theta_U"}), covariate_query())


def test_dependent_mechanisms_break_criterion():
    # X is a valid adjustment set and U does not touch T
    base = Dag.from_edges("TYXU", [("X", "T"), ("X", "Y"), ("T", "Y"), ("U", "Y")], latent="U")
    q = covariate_query()
    assert d_separated(unroll(base), q)
    assert not d_separated(unroll(base, mech_dependencies=[("Theta_T", "Theta_Y")]), q)
    assert not d_separated(unroll(base, mech_dependencies=[("Theta_T", "Theta_U")]), q)
    g = unroll(base, mech_dependencies=[("Theta_T", "Theta_Y")])
    assert "Dep_T_Y" in g.dag.latent


def test_dependency_on_degenerate_mechanism_rejected():
    with pytest.raises(GraphError, match="degenerate"):
        unroll(row1(), degenerate={"Theta_T"}, mech_dependencies=[("Theta_T", "Theta_Y")])


# --- enumeration and tables ---------------------------------------------------

def test_theorem1_family():
    fam = enumerate_theorem1_family()
    assert len(fam) == 40
    assert fam[0].edges == row1().edges
    assert all(not g.is_ancestor("Y", "T") for g in fam)
    assert len({g.edges for g in fam}) == 40


def test_theorem2_family():
    fam = enumerate_theorem2_family()
    assert len(fam) == 25
    assert fam[-1].edges == frozenset()
    assert fam[17].is_ancestor("Y", "T")
    assert fam[17].edges == {("U", "T"), ("Y", "U")}


def test_theorem1_verdict_equals_no_confounder():
    rows = verify_theorem1_table()
    assert [r.id for r in rows if not r.dsep] == [1, 2, 3, 21, 22, 23]
    assert all(r.dsep == (not r.confounder) for r in rows)


def test_theorem2_rows():
    rows = verify_theorem2_table()
    both_dep = [r.id for r in rows if not r.dsep_given_ti and not r.dsep_given_yj]
    assert both_dep == [1, 9, 17]
    assert all((r.id in both_dep) == r.confounder for r in rows)
    r10 = rows[9]
    assert (r10.dsep_given_ti, r10.dsep_given_yj) == (False, True)
    assert (rows[24].dsep_given_ti, rows[24].dsep_given_yj) == (True, True)


def test_degenerate_table_examples():
    rows = verify_degenerate_table()
    cols = tables.HEADERS["table3"][8:]
    r1 = dict(zip(cols, rows[0].dsep))
    assert r1["Deg. T"] is False
    # the printed table marks row 1 as still dependent with T and U fixed
    assert r1["Deg. T,U"] is False
    assert r1["Deg. T,X,U"] is True
    assert all(rows[3].dsep)


@pytest.mark.parametrize("name", ["table1", "table2", "table3"])
def test_tables_match_golden(name):
    assert tables.compare(name, tables.table_rows(name)) == []


def test_golden_mismatch_is_reported(tmp_path):
    header, rows = tables.read_csv(tables.golden_text("table1"))
    rows[4][7] = "dep" if rows[4][7] == "dsep" else "dsep"
    bad = tmp_path / "table1.csv"
    bad.write_text(tables.to_csv("table1", rows))
    problems = tables.compare("table1", tables.table_rows("table1"), bad)
    assert problems == ["table1 row 5: mismatch in T_j _||_ Y_i | T_i,X_i,X_j"]


def test_table_csv_is_stable():
    assert tables.to_csv("table3") == tables.to_csv("table3")


def test_confounder_flag():
    assert is_confounder(row1())
    pats = theorem1_patterns()
    assert sum(is_confounder(g) for _, g in pats) == 6


# --- selection collider -------------------------------------------------------

def test_selection_collider_false_positive():
    free, _ = check_selection_bias_example(confounded=False)
    assert free is False
    free_c, _ = check_selection_bias_example(confounded=True)
    assert free_c is False


def test_selection_collider_fixed_mechanism():
    # With only Theta_C fixed, T_j -> C_j <- Y_j <- Theta_Y -> Y_i stays open
    assert check_selection_bias_example(confounded=False) == (False, False)
    # fixing the outcome mechanism as well restores discrimination
    assert check_selection_bias_example(confounded=False, extra_degenerate=["Y"]) == (False, True)
    assert check_selection_bias_example(confounded=True, extra_degenerate=["Y"]) == (False, False)
