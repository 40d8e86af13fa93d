"""Canonical unlabeled rooted trees, symmetry coefficients and markings.

A tree is stored as the sorted tuple of its root's subtrees. Sorting uses
the key ``(vertex_count, child keys)`` so every isomorphism class has exactly
one representative and trees of equal size order deterministically.

A marking (admissible cut) selects non-root vertices no two of which lie on a
common root path; cutting the edges above them splits the tree into the
remainder containing the root and the cut subtrees. Vertices are addressed by
the child-index path from the root in the canonical representative.
"""

from __future__ import annotations

import itertools
import math
from collections import Counter
from dataclasses import dataclass
from functools import lru_cache
from typing import Iterable, Sequence

from .errors import InvalidArgumentError

MAX_TREE_SIZE = 10

Path = tuple[int, ...]


class RootedTree:
    """Canonical unlabeled rooted tree.

    Build trees with :meth:`RootedTree.of`, which sorts the children. The
    single vertex is ``RootedTree.of()``.

    Attributes:
        children: Root subtrees in canonical order.
        vertex_count: Number of vertices ``|t|``.
        canonical_key: Nested tuple ``(vertex_count, child keys)``.
    """

    __slots__ = ("children", "vertex_count", "canonical_key", "_hash")

    def __init__(self, children: tuple[RootedTree, ...]):
        # Use RootedTree.of(); this constructor trusts the given order.
        self.children = children
        self.vertex_count = 1 + sum(c.vertex_count for c in children)
        self.canonical_key = (self.vertex_count, tuple(c.canonical_key for c in children))
        self._hash = hash(self.canonical_key)

    @classmethod
    def of(cls, *children: RootedTree) -> RootedTree:
        """Return the canonical tree whose root has the given subtrees."""
        return cls(tuple(sorted(children, key=lambda c: c.canonical_key)))

    @property
    def degree(self) -> int:
        """Number of root children."""
        return len(self.children)

    def __eq__(self, other: object) -> bool:
        return isinstance(other, RootedTree) and self.canonical_key == other.canonical_key

    def __lt__(self, other: RootedTree) -> bool:
        return self.canonical_key < other.canonical_key

    def __hash__(self) -> int:
        return self._hash

    def __len__(self) -> int:
        return self.vertex_count

    def bracket(self) -> str:
        """Bracket notation, e.g. ``[]`` for a vertex and ``[[],[]]`` for the cherry."""
        return "[" + ",".join(c.bracket() for c in self.children) + "]"

    def __repr__(self) -> str:
        return f"RootedTree({self.bracket()})"

    def __str__(self) -> str:
        return self.bracket()

    def max_degree(self) -> int:
        """Largest number of children at any vertex."""
        return max([self.degree] + [c.max_degree() for c in self.children])


LEAF = RootedTree(())


def parse_tree(text: str) -> RootedTree:
    """Parse bracket notation such as ``[[[]],[]]`` into a canonical tree.

    Raises:
        InvalidArgumentError: If the brackets are malformed.
    """
    s = text.replace(" ", "")
    pos = 0

    def parse() -> RootedTree:
        nonlocal pos
        if pos >= len(s) or s[pos] != "[":
            raise InvalidArgumentError(f"malformed tree string {text!r}")
        pos += 1
        kids = []
        while pos < len(s) and s[pos] != "]":
            kids.append(parse())
            if pos < len(s) and s[pos] == ",":
                pos += 1
        if pos >= len(s):
            raise InvalidArgumentError(f"malformed tree string {text!r}")
        pos += 1
        return RootedTree.of(*kids)

    tree = parse()
    if pos != len(s):
        raise InvalidArgumentError(f"malformed tree string {text!r}")
    return tree


def from_parents(parents: Sequence[int]) -> RootedTree:
    """Canonicalize a labeled tree given by a parent array.

    Args:
        parents: ``parents[i]`` is the parent of vertex ``i``; exactly one
            entry is ``-1`` and marks the root.

    Raises:
        InvalidArgumentError: If the array is not a rooted tree.
    """
    roots = [i for i, p in enumerate(parents) if p == -1]
    if len(roots) != 1:
        raise InvalidArgumentError("parent array must have exactly one root")
    kids: dict[int, list[int]] = {i: [] for i in range(len(parents))}
    for i, p in enumerate(parents):
        if p != -1:
            kids[p].append(i)
    seen = 0

    def build(v: int) -> RootedTree:
        nonlocal seen
        seen += 1
        return RootedTree.of(*(build(c) for c in kids[v]))

    tree = build(roots[0])
    if seen != len(parents):
        raise InvalidArgumentError("parent array contains a cycle")
    return tree


def _check_size(m: int, max_m: int = MAX_TREE_SIZE) -> None:
    if not isinstance(m, int) or m < 1 or m > max_m:
        raise InvalidArgumentError(f"tree size must be in 1..{max_m}, got {m!r}")


@lru_cache(maxsize=None)
def _trees_of_size(m: int) -> tuple[RootedTree, ...]:
    if m == 1:
        return (LEAF,)
    # Root children form a multiset of trees with total size m - 1. Children
    # are drawn in non-decreasing position of the global list to avoid repeats.
    pool = [t for k in range(1, m) for t in _trees_of_size(k)]
    pool.sort(key=lambda t: t.canonical_key)
    out: list[RootedTree] = []

    def extend(start: int, remaining: int, chosen: list[RootedTree]) -> None:
        if remaining == 0:
            out.append(RootedTree.of(*chosen))
            return
        for i in range(start, len(pool)):
            t = pool[i]
            if t.vertex_count <= remaining:
                chosen.append(t)
                extend(i, remaining - t.vertex_count, chosen)
                chosen.pop()

    extend(0, m - 1, [])
    return tuple(sorted(out, key=lambda t: t.canonical_key))


def enumerate_trees(m: int, max_m: int = MAX_TREE_SIZE) -> list[RootedTree]:
    """All canonical rooted trees with ``m`` vertices in canonical-key order.

    Raises:
        InvalidArgumentError: If ``m`` is outside ``1..max_m``.
    """
    _check_size(m, max_m)
    return list(_trees_of_size(m))


def trees_up_to(k: int, max_m: int = MAX_TREE_SIZE) -> list[RootedTree]:
    """All trees with ``1..k`` vertices, grouped by size."""
    return [t for m in range(1, k + 1) for t in enumerate_trees(m, max_m)]


@lru_cache(maxsize=None)
def symmetry_coefficient(t: RootedTree) -> int:
    """Order of the automorphism group of ``t``."""
    out = 1
    for child, mult in Counter(t.children).items():
        out *= symmetry_coefficient(child) ** mult * math.factorial(mult)
    return out


def chain(m: int) -> RootedTree:
    """Path with ``m`` vertices rooted at an end."""
    if not isinstance(m, int) or m < 1:
        raise InvalidArgumentError(f"chain length must be >= 1, got {m!r}")
    t = LEAF
    for _ in range(m - 1):
        t = RootedTree.of(t)
    return t


def rake(m: int) -> RootedTree:
    """Root with ``m - 1`` leaf children."""
    if not isinstance(m, int) or m < 1:
        raise InvalidArgumentError(f"rake size must be >= 1, got {m!r}")
    return RootedTree.of(*([LEAF] * (m - 1)))


def vertex_paths(t: RootedTree) -> list[Path]:
    """Child-index paths of all vertices in preorder, root first."""
    out: list[Path] = [()]
    for i, c in enumerate(t.children):
        out.extend((i,) + p for p in vertex_paths(c))
    return out


def subtree_at(t: RootedTree, path: Path) -> RootedTree:
    """Subtree rooted at the vertex addressed by ``path``."""
    for i in path:
        t = t.children[i]
    return t


def graft_at(t: RootedTree, path: Path, s: RootedTree) -> RootedTree:
    """Attach ``s`` as a new child of the vertex at ``path`` and canonicalize."""
    if not path:
        return RootedTree.of(*t.children, s)
    i = path[0]
    kids = list(t.children)
    kids[i] = graft_at(kids[i], path[1:], s)
    return RootedTree.of(*kids)


@dataclass(frozen=True)
class Marking:
    """An admissible cut of a tree.

    Attributes:
        cut_subtrees: ``(path, subtree)`` for each marked vertex, in preorder.
        remainder: The part still attached to the root.
        size: Number of marked vertices.
    """

    cut_subtrees: tuple[tuple[Path, RootedTree], ...]
    remainder: RootedTree

    @property
    def size(self) -> int:
        return len(self.cut_subtrees)

    @property
    def subtrees(self) -> tuple[RootedTree, ...]:
        return tuple(s for _, s in self.cut_subtrees)


def _markings_below(t: RootedTree, path: Path) -> list[tuple[tuple, RootedTree]]:
    # Markings of t whose root stays unmarked: (cuts, remainder) pairs.
    per_child = []
    for i, c in enumerate(t.children):
        cp = path + (i,)
        opts = _markings_below(c, cp) + [(((cp, c),), None)]
        per_child.append(opts)
    out = []
    for combo in itertools.product(*per_child):
        cuts = tuple(cut for part in combo for cut in part[0])
        rem = RootedTree.of(*(r for _, r in combo if r is not None))
        out.append((cuts, rem))
    return out


@lru_cache(maxsize=None)
def _markings(t: RootedTree) -> tuple[Marking, ...]:
    return tuple(Marking(cuts, rem) for cuts, rem in _markings_below(t, ()))


def enumerate_markings(t: RootedTree) -> list[Marking]:
    """Every marking of ``t``, including the empty one (listed first)."""
    return list(_markings(t))


def marking_count(t: RootedTree) -> int:
    """Closed-form number of markings: product over root children of ``opts``."""

    def opts(c: RootedTree) -> int:
        return 1 + math.prod(opts(g) for g in c.children)

    return math.prod(opts(c) for c in t.children)


def iter_trees(sizes: Iterable[int]) -> Iterable[RootedTree]:
    """Concatenate :func:`enumerate_trees` over several sizes."""
    for m in sizes:
        yield from enumerate_trees(m)
