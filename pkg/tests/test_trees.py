import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hbmem.errors import InvalidArgumentError
from hbmem.trees import (
    LEAF,
    RootedTree,
    chain,
    enumerate_markings,
    enumerate_trees,
    from_parents,
    graft_at,
    marking_count,
    parse_tree,
    rake,
    subtree_at,
    symmetry_coefficient,
    trees_up_to,
    vertex_paths,
)
from oracles import ahu_code, brute_force_counts, labeled_trees, stabilizer_order


@st.composite
def parent_arrays(draw, max_m=8):
    m = draw(st.integers(1, max_m))
    return (-1,) + tuple(draw(st.integers(0, i - 1)) for i in range(1, m))


def relabel(parents, perm):
    # perm maps old vertex -> new vertex
    out = [0] * len(parents)
    for i, p in enumerate(parents):
        out[perm[i]] = -1 if p == -1 else perm[p]
    return tuple(out)


class TestEnumeration:
    def test_counts_match_brute_force(self):
        got = [len(enumerate_trees(m)) for m in range(1, 8)]
        assert got == brute_force_counts(7)

    def test_counts_up_to_ten(self):
        assert [len(enumerate_trees(m)) for m in range(1, 11)] == [1, 1, 2, 4, 9, 20, 48, 115, 286, 719]

    def test_shapes_are_distinct(self):
        for m in range(1, 9):
            trees = enumerate_trees(m)
            assert len(set(trees)) == len(trees)
            assert all(t.vertex_count == m for t in trees)

    def test_canonical_order_is_sorted(self):
        trees = enumerate_trees(6)
        assert trees == sorted(trees)

    def test_size_bounds(self):
        with pytest.raises(InvalidArgumentError):
            enumerate_trees(0)
        with pytest.raises(InvalidArgumentError):
            enumerate_trees(11)

    def test_trees_up_to_groups_by_size(self):
        sizes = [t.vertex_count for t in trees_up_to(4)]
        assert sizes == sorted(sizes) and len(sizes) == 1 + 1 + 2 + 4


class TestSymmetry:
    def test_matches_stabilizer_brute_force(self):
        seen = {}
        for m in range(1, 6):
            for parents in labeled_trees(m):
                seen.setdefault(ahu_code(parents), parents)
        for parents in seen.values():
            assert symmetry_coefficient(from_parents(parents)) == stabilizer_order(parents)

    @pytest.mark.parametrize("m", range(1, 9))
    def test_cayley_labeled_count(self, m):
        # Labeled rooted trees on m vertices: m^(m-1) = sum over shapes of m!/sigma.
        total = sum(math.factorial(m) // symmetry_coefficient(t) for t in enumerate_trees(m))
        assert total == m ** (m - 1)

    @pytest.mark.parametrize("m", range(1, 8))
    def test_chain_and_rake(self, m):
        assert symmetry_coefficient(chain(m)) == 1
        assert symmetry_coefficient(rake(m)) == math.factorial(m - 1)


class TestConstruction:
    @given(parent_arrays(), st.randoms())
    @settings(max_examples=60, deadline=None)
    def test_relabeling_invariance(self, parents, rnd):
        m = len(parents)
        perm = list(range(m))
        rnd.shuffle(perm)
        assert from_parents(parents) == from_parents(relabel(parents, perm))

    @given(parent_arrays())
    @settings(max_examples=60, deadline=None)
    def test_bracket_round_trip(self, parents):
        t = from_parents(parents)
        assert parse_tree(t.bracket()) == t
        assert t.vertex_count == len(parents)

    def test_of_sorts_children(self):
        a = RootedTree.of(LEAF, chain(2))
        b = RootedTree.of(chain(2), LEAF)
        assert a == b and hash(a) == hash(b) and a.bracket() == b.bracket()

    @pytest.mark.parametrize("text", ["", "[", "[[]", "[]]", "x", "[][]"])
    def test_malformed_strings(self, text):
        with pytest.raises(InvalidArgumentError):
            parse_tree(text)

    def test_bad_parent_arrays(self):
        with pytest.raises(InvalidArgumentError):
            from_parents([-1, -1])
        with pytest.raises(InvalidArgumentError):
            from_parents([1, 0])

    def test_chain_and_rake_shapes(self):
        assert chain(3).bracket() == "[[[]]]"
        assert rake(3).bracket() == "[[],[]]"
        assert rake(4).max_degree() == 3 and chain(4).max_degree() == 1


class TestPaths:
    @pytest.mark.parametrize("t", trees_up_to(5))
    def test_vertex_paths(self, t):
        paths = vertex_paths(t)
        assert len(paths) == t.vertex_count and paths[0] == ()
        assert sum(subtree_at(t, p).vertex_count for p in paths) == sum(len(p) + 1 for p in paths)

    @pytest.mark.parametrize("t", trees_up_to(4))
    def test_graft_adds_vertices(self, t):
        for p in vertex_paths(t):
            g = graft_at(t, p, chain(2))
            assert g.vertex_count == t.vertex_count + 2

    def test_graft_at_root_and_leaf(self):
        assert graft_at(LEAF, (), LEAF) == chain(2)
        assert graft_at(chain(2), (0,), LEAF) == chain(3)
        assert graft_at(chain(2), (), LEAF) == rake(3)


class TestMarkings:
    @pytest.mark.parametrize("t", trees_up_to(7))
    def test_count_matches_enumeration(self, t):
        assert len(enumerate_markings(t)) == marking_count(t)

    @pytest.mark.parametrize("t", trees_up_to(6))
    def test_structure(self, t):
        marks = enumerate_markings(t)
        assert marks[0].size == 0 and marks[0].remainder == t
        keys = set()
        for mk in marks:
            assert mk.remainder.vertex_count + sum(s.vertex_count for s in mk.subtrees) == t.vertex_count
            paths = [p for p, _ in mk.cut_subtrees]
            assert () not in paths
            for p in paths:
                assert subtree_at(t, p) == dict(mk.cut_subtrees)[p]
                # No marked vertex lies below another.
                assert not any(q != p and p[: len(q)] == q for q in paths)
            keys.add(tuple(paths))
        assert len(keys) == len(marks)

    def test_small_examples(self):
        # Cherry: cut neither, either or both leaves.
        assert marking_count(rake(3)) == 4
        assert marking_count(chain(3)) == 3
        assert marking_count(LEAF) == 1
