"""Binarized discourse trees and their splitting-decision sequences.

A binary tree over token boundaries is fully described by its internal nodes
``(i, k, j)`` (span ``(i, j)`` split at ``k``) plus the set of EDU ends.  The
decision sequence lists the same information in depth-first pre-order.  In
the end-to-end form every leaf ``(i, j)`` also gets a terminal decision
``(i, j) -> j`` at its pre-order position.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Iterable, NamedTuple, Optional, Sequence

from .document import RelationLabel


class TreeError(ValueError):
    """Inconsistent tree or decision sequence."""


class Node(NamedTuple):
    i: int
    k: int
    j: int
    label: Optional[RelationLabel] = None


class SplitDecision(NamedTuple):
    i: int
    j: int
    k: int
    label: Optional[RelationLabel] = None

    @property
    def terminal(self) -> bool:
        return self.k == self.j

    def __str__(self):
        s = f"({self.i},{self.j})->{self.k}"
        return s if self.label is None else f"{s}:{self.label}"


def _preorder_key(span):
    # for nested spans, sorting by (start, -end) is exactly node-left-right order
    return (span[0], -span[-1])


@dataclass(frozen=True)
class DiscourseTree:
    """Binary tree over ``[0, n]``.

    ``edus`` holds the ascending EDU end boundaries (last one is ``n``);
    ``nodes`` the internal nodes in pre-order.
    """

    n: int
    edus: tuple
    nodes: tuple

    @classmethod
    def from_nodes(cls, n: int, edus: Iterable[int], nodes: Iterable) -> "DiscourseTree":
        nodes = tuple(sorted((Node(*nd) for nd in nodes),
                             key=lambda nd: (nd.i, -nd.j)))
        tree = cls(int(n), tuple(sorted(int(e) for e in edus)), nodes)
        tree.validate()
        return tree

    @classmethod
    def single(cls, n: int) -> "DiscourseTree":
        return cls(int(n), (int(n),), ())

    @property
    def num_edus(self) -> int:
        return len(self.edus)

    def leaves(self) -> list:
        starts = (0,) + self.edus[:-1]
        return list(zip(starts, self.edus))

    def spans(self) -> list:
        """Every node span (internal and leaf) in pre-order."""
        return sorted([(nd.i, nd.j) for nd in self.nodes] + self.leaves(),
                      key=_preorder_key)

    def with_labels(self, labels: Sequence) -> "DiscourseTree":
        if len(labels) != len(self.nodes):
            raise TreeError("label count does not match internal node count")
        return DiscourseTree(self.n, self.edus,
                             tuple(nd._replace(label=l) for nd, l in zip(self.nodes, labels)))

    def unlabeled(self) -> "DiscourseTree":
        return self.with_labels([None] * len(self.nodes))

    def validate(self) -> None:
        n = self.n
        if not self.edus or self.edus[-1] != n or any(
                b <= a for a, b in zip((0,) + self.edus, self.edus)):
            raise TreeError(f"EDU ends {self.edus} do not tile [0, {n}]")
        if len(self.nodes) != len(self.edus) - 1:
            raise TreeError(f"{len(self.nodes)} internal nodes for {len(self.edus)} EDUs")
        edu_set = set(self.edus) | {0}
        leaves = set(self.leaves())
        internal = {}
        for nd in self.nodes:
            if not nd.i < nd.k < nd.j:
                raise TreeError(f"node {nd[:3]} violates i < k < j")
            if nd.k not in edu_set:
                raise TreeError(f"node {nd[:3]} splits inside an EDU")
            if (nd.i, nd.j) in internal:
                raise TreeError(f"duplicate span {(nd.i, nd.j)}")
            internal[(nd.i, nd.j)] = nd
        if self.nodes:
            if (self.nodes[0].i, self.nodes[0].j) != (0, n):
                raise TreeError("root span is not (0, n)")
        # every child of an internal node must itself be a node or a leaf,
        # and every node except the root must be some node's child
        children = set()
        for nd in self.nodes:
            for child in ((nd.i, nd.k), (nd.k, nd.j)):
                if child not in internal and child not in leaves:
                    raise TreeError(f"child span {child} of {nd[:3]} is neither node nor EDU")
                children.add(child)
        orphans = (set(internal) | leaves) - children - {(0, n)}
        if orphans:
            raise TreeError(f"spans {sorted(orphans)} are not attached to the tree")


# -- binarization ---------------------------------------------------------------

@dataclass(frozen=True)
class RSTNode:
    """Possibly n-ary RST constituent.

    A leaf has no children and covers ``(start, end)``.  ``nuclearity`` gives
    one ``N``/``S`` letter per child.
    """

    start: int
    end: int
    children: tuple = ()
    relation: Optional[str] = None
    nuclearity: str = ""

    @classmethod
    def leaf(cls, start: int, end: int) -> "RSTNode":
        return cls(start, end)

    @classmethod
    def relation_node(cls, relation: str, nuclearity: str, children) -> "RSTNode":
        children = tuple(children)
        return cls(children[0].start, children[-1].end, children, relation, nuclearity)


def binarize(tree: RSTNode) -> DiscourseTree:
    """Right-branching binarization of multi-child constituents.

    Introduced nodes keep the original relation; their nuclearity is the
    left child's role against the remaining group (``NN`` for multinuclear
    relations).
    """
    nodes, edus = [], []

    def group_role(roles):
        return "N" if "N" in roles else "S"

    def rec(node: RSTNode):
        if not node.children:
            if node.end <= node.start:
                raise TreeError(f"empty leaf span {(node.start, node.end)}")
            edus.append(node.end)
            return
        kids = node.children
        if len(kids) < 2:
            raise TreeError("internal node with fewer than two children")
        if len(node.nuclearity) != len(kids):
            raise TreeError("nuclearity string length differs from child count")
        if kids[0].start != node.start or kids[-1].end != node.end or any(
                a.end != b.start for a, b in zip(kids, kids[1:])):
            raise TreeError(f"children of {(node.start, node.end)} are not contiguous")
        for a in range(len(kids) - 1):
            nuc = node.nuclearity[a] + group_role(node.nuclearity[a + 1:])
            nodes.append((kids[a].start, kids[a].end, node.end,
                          RelationLabel(node.relation, nuc)))
        for kid in kids:
            rec(kid)

    rec(tree)
    if tree.start != 0:
        raise TreeError("tree must start at boundary 0")
    return DiscourseTree.from_nodes(tree.end, edus, nodes)


# -- tree <-> decisions -----------------------------------------------------------

def tree_to_splits_edu(tree: DiscourseTree) -> list:
    return [SplitDecision(nd.i, nd.j, nd.k, nd.label) for nd in tree.nodes]


def tree_to_splits_e2e(tree: DiscourseTree) -> list:
    seq = tree_to_splits_edu(tree) + [SplitDecision(i, j, j) for i, j in tree.leaves()]
    seq.sort(key=lambda d: (d.i, -d.j))
    return seq


def splits_to_tree(seq: Sequence[SplitDecision], n: int,
                   edus: Optional[Iterable[int]] = None) -> DiscourseTree:
    """Rebuild the tree from a pre-order decision sequence.

    Without ``edus`` the sequence must be in end-to-end form (every leaf has a
    terminal decision).  With ``edus`` it must be in EDU form (no terminals).
    """
    seq = [SplitDecision(*d) for d in seq]
    e2e = edus is None
    edu_set = None if e2e else set(int(e) for e in edus) | {0}
    if not e2e and n not in edu_set:
        raise TreeError(f"EDU ends must include n={n}")

    def is_leaf(i, j):
        return not any(i < b < j for b in edu_set)

    stack = [(0, n)] if (e2e or not is_leaf(0, n)) else []
    nodes, leaf_ends = [], []
    if not e2e:
        leaf_ends = sorted(edu_set - {0})
    seen = set()
    for pos, d in enumerate(seq):
        if not stack:
            raise TreeError(f"decision {pos} {d} has no pending span")
        span = stack.pop()
        if (d.i, d.j) != span:
            raise TreeError(f"decision {pos} is for span {(d.i, d.j)}, expected {span}")
        if span in seen:
            raise TreeError(f"duplicate span {span}")
        seen.add(span)
        if not d.i < d.k <= d.j:
            raise TreeError(f"decision {pos} split {d.k} outside ({d.i}, {d.j}]")
        if d.k == d.j:
            if not e2e:
                raise TreeError(f"terminal decision {d} in EDU-form sequence")
            if d.label is not None:
                raise TreeError(f"terminal decision {d} carries a label")
            leaf_ends.append(d.j)
            continue
        if not e2e and d.k not in edu_set:
            raise TreeError(f"decision {pos} splits inside an EDU at {d.k}")
        nodes.append(Node(d.i, d.k, d.j, d.label))
        for child in ((d.k, d.j), (d.i, d.k)):
            if e2e or not is_leaf(*child):
                stack.append(child)
    if stack:
        raise TreeError(f"child span {stack[-1]} never produced a decision")
    try:
        return DiscourseTree.from_nodes(n, leaf_ends, nodes)
    except TreeError as exc:
        raise TreeError(f"inconsistent sequence: {exc}") from None


def constituents(tree: DiscourseTree) -> set:
    return {((nd.i, nd.k, nd.j), nd.label) for nd in tree.nodes}


# -- serialization -----------------------------------------------------------------

def splits_to_records(seq: Sequence[SplitDecision]) -> list:
    out = []
    for d in seq:
        rec = {"span": [d.i, d.j], "k": d.k}
        if d.label is not None:
            rec["label"] = str(d.label)
        out.append(rec)
    return out


def splits_from_records(records) -> list:
    seq = []
    for rec in records:
        i, j = rec["span"]
        label = rec.get("label")
        seq.append(SplitDecision(int(i), int(j), int(rec["k"]),
                                 None if label is None else RelationLabel.parse(label)))
    return seq


def to_bracket(tree: DiscourseTree) -> str:
    """Nested bracket form, e.g. ``(Elaboration-NS (0 4) (4 9))``."""
    by_span = {(nd.i, nd.j): nd for nd in tree.nodes}

    def rec(i, j):
        nd = by_span.get((i, j))
        if nd is None:
            return f"({i} {j})"
        label = "_" if nd.label is None else str(nd.label)
        return f"({label} {rec(i, nd.k)} {rec(nd.k, j)})"

    return rec(0, tree.n)


_TOKEN = re.compile(r"\(|\)|[^\s()]+")


def parse_bracket(text: str) -> DiscourseTree:
    toks = _TOKEN.findall(text)
    pos = 0
    nodes, edus = [], []

    def expect(tok):
        nonlocal pos
        if pos >= len(toks) or toks[pos] != tok:
            got = toks[pos] if pos < len(toks) else "end of input"
            raise TreeError(f"expected {tok!r} at token {pos}, got {got!r}")
        pos += 1

    def rec():
        nonlocal pos
        expect("(")
        head = toks[pos] if pos < len(toks) else ")"
        if head.lstrip("-").isdigit():
            i, j = int(toks[pos]), int(toks[pos + 1])
            pos += 2
            expect(")")
            edus.append(j)
            return i, j
        pos += 1
        label = None if head == "_" else RelationLabel.parse(head)
        li, lk = rec()
        rk, rj = rec()
        if lk != rk:
            raise TreeError(f"children ({li},{lk}) and ({rk},{rj}) are not adjacent")
        expect(")")
        nodes.append((li, lk, rj, label))
        return li, rj

    i, n = rec()
    if pos != len(toks):
        raise TreeError("trailing text after tree")
    if i != 0:
        raise TreeError("tree must start at boundary 0")
    return DiscourseTree.from_nodes(n, edus, nodes)


def random_tree(edus: Sequence[int], rng, labels=None) -> DiscourseTree:
    """Uniform random binary tree over the given EDU ends."""
    from .document import ALL_LABELS, random_binary_nodes

    edus = list(edus)
    return DiscourseTree.from_nodes(edus[-1], edus,
                                    random_binary_nodes([0] + edus, rng, labels or ALL_LABELS))
