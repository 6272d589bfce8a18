"""Parseval, RST-Parseval and EDU segmentation scores.

Everything is compared in token-boundary coordinates, so trees built on
different segmentations of the same document can still be scored.

Parseval items are internal nodes other than the root, keyed by their split
``(i, k, j)``.  RST-Parseval items are all node spans ``(i, j)`` including
leaves and the root; each carries the role it plays under its parent
(nucleus/satellite and relation, ``span`` for the nucleus of a mononuclear
relation).
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import asdict, dataclass, field
from typing import Iterable, Sequence

from .tree import DiscourseTree

FACETS = ("span", "nuc", "rel", "full")
ROOT_ROLE = ("Root", "Root")


class MetricError(ValueError):
    pass


@dataclass
class FacetCounts:
    matched: int = 0
    predicted: int = 0
    gold: int = 0

    def __iadd__(self, other):
        self.matched += other.matched
        self.predicted += other.predicted
        self.gold += other.gold
        return self

    @property
    def precision(self) -> float:
        return 100.0 * self.matched / self.predicted if self.predicted else 100.0 * (self.gold == 0)

    @property
    def recall(self) -> float:
        return 100.0 * self.matched / self.gold if self.gold else 100.0 * (self.predicted == 0)

    @property
    def f1(self) -> float:
        # two empty item sets agree perfectly
        if self.predicted + self.gold == 0:
            return 100.0
        return 200.0 * self.matched / (self.predicted + self.gold)


@dataclass
class ScoreReport:
    counts: dict = field(default_factory=lambda: {f: FacetCounts() for f in FACETS})

    @property
    def span_f1(self):
        return self.counts["span"].f1

    @property
    def nuc_f1(self):
        return self.counts["nuc"].f1

    @property
    def rel_f1(self):
        return self.counts["rel"].f1

    @property
    def full_f1(self):
        return self.counts["full"].f1

    def add(self, other: "ScoreReport") -> "ScoreReport":
        for f in FACETS:
            self.counts[f] += other.counts[f]
        return self

    def as_dict(self) -> dict:
        out = {f"{f}_f1": round(self.counts[f].f1, 4) for f in FACETS}
        out["counts"] = {f: asdict(c) for f, c in self.counts.items()}
        return out


# -- item extraction -----------------------------------------------------------------

def _check_pair(pred: DiscourseTree, gold: DiscourseTree):
    if pred.n != gold.n:
        raise MetricError(f"token count mismatch: predicted {pred.n}, gold {gold.n}")


def _label_parts(label):
    if label is None:
        return None, None
    return label.nuclearity, label.relation


def parseval_items(tree: DiscourseTree) -> list:
    """``((i, k, j), nuclearity, relation)`` for every non-root internal node."""
    items = []
    for nd in tree.nodes:
        if (nd.i, nd.j) == (0, tree.n):
            continue
        nuc, rel = _label_parts(nd.label)
        items.append(((nd.i, nd.k, nd.j), nuc, rel))
    return items


def rst_parseval_items(tree: DiscourseTree) -> list:
    """``((i, j), role, relation)`` for every node, leaves and root included."""
    roles = {(0, tree.n): ROOT_ROLE}
    for nd in tree.nodes:
        nuc, rel = _label_parts(nd.label)
        if nuc is None:
            left = right = (None, None)
        elif nuc == "NN":
            left = right = ("N", rel)
        elif nuc == "NS":
            left, right = ("N", "span"), ("S", rel)
        else:
            left, right = ("S", rel), ("N", "span")
        roles[(nd.i, nd.k)] = left
        roles[(nd.k, nd.j)] = right
    return [(span, roles[span][0], roles[span][1]) for span in tree.spans()]


def _facet_keys(items):
    return {
        "span": Counter(it[0] for it in items),
        "nuc": Counter((it[0], it[1]) for it in items),
        "rel": Counter((it[0], it[2]) for it in items),
        "full": Counter(it for it in items),
    }


def _score_items(pred_items, gold_items) -> ScoreReport:
    p, g = _facet_keys(pred_items), _facet_keys(gold_items)
    rep = ScoreReport()
    for f in FACETS:
        rep.counts[f] = FacetCounts(sum((p[f] & g[f]).values()), len(pred_items), len(gold_items))
    return rep


def parseval(pred: DiscourseTree, gold: DiscourseTree) -> ScoreReport:
    _check_pair(pred, gold)
    return _score_items(parseval_items(pred), parseval_items(gold))


def rst_parseval(pred: DiscourseTree, gold: DiscourseTree) -> ScoreReport:
    _check_pair(pred, gold)
    return _score_items(rst_parseval_items(pred), rst_parseval_items(gold))


def corpus_parseval(pairs: Iterable) -> ScoreReport:
    """Micro-averaged Parseval over ``(pred, gold)`` pairs."""
    total = ScoreReport()
    for pred, gold in pairs:
        total.add(parseval(pred, gold))
    return total


def corpus_rst_parseval(pairs: Iterable) -> ScoreReport:
    total = ScoreReport()
    for pred, gold in pairs:
        total.add(rst_parseval(pred, gold))
    return total


# -- segmentation ---------------------------------------------------------------------

def _check_bounds(bounds, n, what):
    bounds = list(bounds)
    if not bounds or bounds[-1] != n or any(b <= a for a, b in zip([0] + bounds, bounds)):
        raise MetricError(f"{what} boundaries {bounds} are not a valid segmentation of {n} tokens")
    return bounds


def segmentation_counts(pred_boundaries, gold_boundaries, n, sentence_boundaries=(),
                        ) -> FacetCounts:
    pred = _check_bounds(pred_boundaries, n, "predicted")
    gold = _check_bounds(gold_boundaries, n, "gold")
    skip = set(sentence_boundaries) | {n}
    p = set(pred) - skip
    g = set(gold) - skip
    return FacetCounts(len(p & g), len(p), len(g))


def segmentation_f1(pred_boundaries, gold_boundaries, n, sentence_boundaries=()) -> float:
    """F1 over intra-sentence EDU boundaries (sentence ends and n are excluded)."""
    return segmentation_counts(pred_boundaries, gold_boundaries, n, sentence_boundaries).f1


# -- reporting ---------------------------------------------------------------------------

@dataclass
class EvaluationReport:
    parseval: ScoreReport
    rst_parseval: ScoreReport
    segmentation: FacetCounts
    documents: int

    def as_dict(self) -> dict:
        rst = self.rst_parseval.as_dict()
        rst.pop("full_f1")
        seg = self.segmentation
        return {
            "documents": self.documents,
            "parseval": self.parseval.as_dict(),
            "rst_parseval": rst,
            "segmentation": {"f1": round(seg.f1, 4), "precision": round(seg.precision, 4),
                             "recall": round(seg.recall, 4), "counts": asdict(seg)},
        }

    def to_json(self) -> str:
        return json.dumps(self.as_dict(), indent=2, sort_keys=True)

    def table(self) -> str:
        rows = [("metric", "Span", "Nuc", "Rel", "Full")]
        p, r = self.parseval, self.rst_parseval
        rows.append(("Parseval", *(f"{x:.2f}" for x in (p.span_f1, p.nuc_f1, p.rel_f1, p.full_f1))))
        rows.append(("RST-Parseval", *(f"{x:.2f}" for x in (r.span_f1, r.nuc_f1, r.rel_f1)), "-"))
        rows.append(("Segmentation", f"{self.segmentation.f1:.2f}", "-", "-", "-"))
        widths = [max(len(row[c]) for row in rows) for c in range(5)]
        return "\n".join("  ".join(cell.rjust(w) if c else cell.ljust(w)
                                   for c, (cell, w) in enumerate(zip(row, widths)))
                         for row in rows)


def evaluate(pred_docs: Sequence, gold_docs: Sequence) -> tuple:
    """Score predicted documents against gold ones aligned by id.

    Returns ``(EvaluationReport, per_document_rows)``.
    """
    gold_by_id = {d.id: d for d in gold_docs}
    pred_by_id = {d.id: d for d in pred_docs}
    for d in gold_docs:
        if d.id not in pred_by_id:
            raise MetricError(f"document {d.id!r} missing from predictions")
    for d in pred_docs:
        if d.id not in gold_by_id:
            raise MetricError(f"document {d.id!r} missing from gold corpus")
    par, rst, seg = ScoreReport(), ScoreReport(), FacetCounts()
    rows = []
    for gold in gold_docs:
        pred = pred_by_id[gold.id]
        if gold.gold_tree is None or pred.gold_tree is None:
            raise MetricError(f"document {gold.id!r} lacks a tree")
        p = parseval(pred.gold_tree, gold.gold_tree)
        r = rst_parseval(pred.gold_tree, gold.gold_tree)
        s = segmentation_counts(pred.gold_tree.edus, gold.gold_tree.edus, gold.n,
                                gold.sentence_boundaries)
        par.add(p)
        rst.add(r)
        seg += s
        rows.append({"id": gold.id, "parseval": p.as_dict(), "rst_parseval": r.as_dict(),
                     "segmentation_f1": s.f1})
    return EvaluationReport(par, rst, seg, len(gold_docs)), rows
