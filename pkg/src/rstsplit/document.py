"""Documents, relation labels and the line-delimited corpus format.

Boundary index ``k`` sits between tokens ``k`` and ``k + 1`` (tokens are
1-based), so a document of ``n`` tokens has boundaries ``0 .. n`` and a span
``(i, j)`` covers tokens ``i + 1 .. j``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

RELATIONS = (
    "Elaboration", "Attribution", "Joint", "Same-Unit", "Contrast",
    "Background", "Explanation", "Cause", "Temporal", "Condition",
    "Comparison", "Manner-Means", "Enablement", "Evaluation", "Summary",
    "Topic-Comment", "Topic-Change", "TextualOrganization",
)
NUCLEARITIES = ("NN", "NS", "SN")


class DocumentError(ValueError):
    """A document violates a boundary invariant."""


class CorpusFormatError(ValueError):
    """A corpus record could not be parsed; carries the 1-based line number."""

    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


@dataclass(frozen=True, order=True)
class RelationLabel:
    relation: str
    nuclearity: str

    def __post_init__(self):
        if self.relation not in RELATIONS:
            raise ValueError(f"unknown relation {self.relation!r}")
        if self.nuclearity not in NUCLEARITIES:
            raise ValueError(f"unknown nuclearity {self.nuclearity!r}")

    def __str__(self):
        return f"{self.relation}-{self.nuclearity}"

    @classmethod
    def parse(cls, text: str) -> "RelationLabel":
        # relation names may themselves contain hyphens (Same-Unit)
        relation, sep, nuc = text.rpartition("-")
        if not sep:
            raise ValueError(f"label {text!r} lacks a nuclearity suffix")
        return cls(relation, nuc)


ALL_LABELS = tuple(RelationLabel(r, n) for r in RELATIONS for n in NUCLEARITIES)


@dataclass(frozen=True)
class Document:
    id: str
    tokens: tuple
    sentence_boundaries: tuple
    edu_boundaries: Optional[tuple] = None
    gold_tree: Optional[object] = field(default=None, compare=True)  # DiscourseTree

    def __post_init__(self):
        object.__setattr__(self, "tokens", tuple(self.tokens))
        object.__setattr__(self, "sentence_boundaries",
                           tuple(int(b) for b in self.sentence_boundaries))
        if self.edu_boundaries is not None:
            object.__setattr__(self, "edu_boundaries",
                               tuple(int(b) for b in self.edu_boundaries))

    @property
    def n(self) -> int:
        return len(self.tokens)

    @property
    def num_edus(self) -> Optional[int]:
        return None if self.edu_boundaries is None else len(self.edu_boundaries)


def _check_boundaries(name: str, bounds: Sequence[int], n: int) -> None:
    if not bounds:
        raise DocumentError(f"{name} is empty; it must end with n={n}")
    for a, b in zip(bounds, bounds[1:]):
        if b <= a:
            raise DocumentError(f"{name} non-monotone: {a} followed by {b}")
    for b in bounds:
        if not 0 < b <= n:
            raise DocumentError(f"{name} index {b} out of range (0, {n}]")
    if bounds[-1] != n:
        raise DocumentError(f"{name} missing terminal boundary n={n}")


def validate_document(doc: Document) -> None:
    """Raise DocumentError describing the first violated invariant."""
    n = doc.n
    if n < 1:
        raise DocumentError("document has no tokens")
    _check_boundaries("sentence_boundaries", doc.sentence_boundaries, n)
    if doc.edu_boundaries is not None:
        _check_boundaries("edu_boundaries", doc.edu_boundaries, n)
        sents = set(doc.sentence_boundaries)
        missing = sorted(sents.difference(doc.edu_boundaries))
        if missing:
            raise DocumentError(
                f"EDU crosses sentence boundary {missing[0]}")
    if doc.gold_tree is not None:
        tree = doc.gold_tree
        if tree.n != n:
            raise DocumentError(f"gold tree covers {tree.n} tokens, document has {n}")
        if doc.edu_boundaries is not None and tuple(tree.edus) != doc.edu_boundaries:
            raise DocumentError("gold tree leaves do not match edu_boundaries")
        if doc.edu_boundaries is None:
            sents = set(doc.sentence_boundaries)
            if not sents.issubset(tree.edus):
                raise DocumentError("gold tree EDU crosses a sentence boundary")


# -- corpus I/O ---------------------------------------------------------------

def document_from_record(rec: dict) -> Document:
    from .tree import splits_from_records, splits_to_tree, parse_bracket

    for key in ("id", "tokens", "sentence_ends"):
        if key not in rec:
            raise CorpusFormatError(f"record missing {key!r} field")
    tokens = rec["tokens"]
    if not isinstance(tokens, list) or not all(isinstance(t, str) for t in tokens):
        raise CorpusFormatError("'tokens' must be an array of strings")
    n = len(tokens)
    edus = rec.get("edu_ends")
    tree = None
    raw = rec.get("tree")
    if raw is not None:
        if isinstance(raw, str):
            tree = parse_bracket(raw)
        else:
            seq = splits_from_records(raw)
            if seq and any(d.k == d.j for d in seq):
                tree = splits_to_tree(seq, n)
            else:
                leaves = edus if edus is not None else [n]
                tree = splits_to_tree(seq, n, edus=leaves)
    return Document(str(rec["id"]), tokens, rec["sentence_ends"],
                    None if edus is None else tuple(edus), tree)


def document_to_record(doc: Document, tree_format: str = "splits") -> dict:
    from .tree import splits_to_records, to_bracket, tree_to_splits_e2e

    rec = {"id": doc.id, "tokens": list(doc.tokens),
           "sentence_ends": list(doc.sentence_boundaries)}
    if doc.edu_boundaries is not None:
        rec["edu_ends"] = list(doc.edu_boundaries)
    if doc.gold_tree is not None:
        if tree_format == "bracket":
            rec["tree"] = to_bracket(doc.gold_tree)
        elif doc.edu_boundaries is not None:
            from .tree import tree_to_splits_edu
            rec["tree"] = splits_to_records(tree_to_splits_edu(doc.gold_tree))
        else:
            rec["tree"] = splits_to_records(tree_to_splits_e2e(doc.gold_tree))
    return rec


def read_corpus_lines(lines: Iterable[str]) -> list:
    docs = []
    for lineno, line in enumerate(lines, 1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise CorpusFormatError(f"malformed record: {exc.msg}", lineno) from None
        if not isinstance(rec, dict):
            raise CorpusFormatError("record is not an object", lineno)
        try:
            doc = document_from_record(rec)
        except CorpusFormatError as exc:
            raise CorpusFormatError(str(exc), lineno) from None
        except (ValueError, TypeError, KeyError) as exc:
            raise CorpusFormatError(f"document {rec.get('id')!r}: {exc}", lineno) from None
        try:
            validate_document(doc)
        except DocumentError as exc:
            raise CorpusFormatError(f"document {doc.id!r}: {exc}", lineno) from None
        docs.append(doc)
    return docs


def load_corpus(path) -> list:
    """Read and validate a line-delimited JSON corpus, preserving file order."""
    with open(path, encoding="utf-8") as fh:
        return read_corpus_lines(fh)


def dump_corpus(docs: Iterable[Document], path, tree_format: str = "splits") -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for doc in docs:
            fh.write(json.dumps(document_to_record(doc, tree_format),
                                ensure_ascii=False, separators=(",", ":")))
            fh.write("\n")


# -- synthetic data -----------------------------------------------------------

def _catalan(k: int) -> int:
    c = 1
    for i in range(k):
        c = c * 2 * (2 * i + 1) // (i + 2)
    return c


def random_binary_nodes(bounds: Sequence[int], rng: np.random.Generator,
                        labels: Sequence[RelationLabel] = ALL_LABELS) -> list:
    """Uniformly sample a binary bracketing over consecutive units.

    ``bounds`` lists the unit edges ``b_0 < b_1 < ... < b_m``.  Returns
    ``(i, k, j, label)`` nodes in pre-order, uniform over all Catalan(m-1)
    trees.
    """
    out = []

    def rec(lo, hi):
        m = hi - lo
        if m < 2:
            return
        weights = np.array([_catalan(a - 1) * _catalan(m - a - 1) for a in range(1, m)],
                           dtype=float)
        a = 1 + int(rng.choice(m - 1, p=weights / weights.sum()))
        label = labels[int(rng.integers(len(labels)))]
        out.append((bounds[lo], bounds[lo + a], bounds[hi], label))
        rec(lo, lo + a)
        rec(lo + a, hi)

    rec(0, len(bounds) - 1)
    return out


def generate_synthetic_corpus(num_docs: int, vocab_size: int, mean_tokens: int,
                              seed: int, sentence_rate: float = 0.07,
                              edu_rate: float = 0.13) -> list:
    """Random documents with random sentence-nested segmentations and trees.

    Every sentence is a subtree of the gold tree: a uniform tree is drawn over
    the EDUs of each sentence and another over the sentences.
    """
    from .tree import DiscourseTree

    if num_docs < 1 or vocab_size < 2 or mean_tokens < 2:
        raise ValueError("need num_docs >= 1, vocab_size >= 2, mean_tokens >= 2")
    rng = np.random.default_rng(seed)
    width = len(str(num_docs - 1))
    docs = []
    for d in range(num_docs):
        n = max(2, int(rng.poisson(mean_tokens)))
        tokens = [f"w{int(t)}" for t in rng.integers(vocab_size, size=n)]
        sents, edus = [], []
        for k in range(1, n):
            u = rng.random()
            if u < sentence_rate:
                sents.append(k)
                edus.append(k)
            elif u < sentence_rate + edu_rate:
                edus.append(k)
        sents.append(n)
        edus.append(n)
        nodes = []
        sent_edges = [0] + sents
        for a, b in zip(sent_edges, sent_edges[1:]):
            inner = [a] + [e for e in edus if a < e <= b]
            nodes.append(random_binary_nodes(inner, rng))
        top = random_binary_nodes(sent_edges, rng)
        tree = DiscourseTree.from_nodes(n, edus, top + [x for s in nodes for x in s])
        docs.append(Document(f"syn{d:0{width}d}", tokens, sents, edus, tree))
    return docs
