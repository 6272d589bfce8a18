"""Tree decoding: greedy, beam search and exhaustive search over split sequences.

All decoders walk spans depth-first (node, left, right).  Log-probabilities
are taken from the full softmax over every boundary, so partial trees of
different shapes are scored on the same scale.  Ties go to the smallest
split point.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .autodiff import log_softmax
from .document import Document
from .model import (E2E, GOLD_EDU, DecoderState, EncodedDocument, ModelParams,
                    decoder_step, encode, init_decoder, label_logits_batch, span_rep)
from .tree import DiscourseTree, Node


class SearchTooLarge(ValueError):
    pass


def apply_sentence_guidance(scores: np.ndarray, span, sentence_boundaries) -> int:
    """Pick the split for ``span``: best interior sentence boundary if any, else best k in (i, j]."""
    i, j = span
    inside = [b for b in sentence_boundaries if i < b < j]
    if inside:
        cand = np.asarray(inside)
    else:
        cand = np.arange(i + 1, j + 1)
    return int(cand[int(np.argmax(scores[cand]))])


def _candidates(i, j, mode, sentence_boundaries=None):
    """Allowed split points in ascending order."""
    if mode == GOLD_EDU:
        return list(range(i + 1, j))
    if sentence_boundaries is not None:
        inside = [b for b in sentence_boundaries if i < b < j]
        if inside:
            return inside
    return list(range(i + 1, j + 1))


def _labels_for(nodes, enc: EncodedDocument, params: ModelParams) -> list:
    if not nodes:
        return []
    if enc.mode == GOLD_EDU:
        index = {b: e for e, b in enumerate((0,) + tuple(enc.edu_ends))}
        triples = [(index[nd[0]], index[nd[1]], index[nd[2]]) for nd in nodes]
    else:
        triples = [tuple(nd[:3]) for nd in nodes]
    logits = label_logits_batch(enc, triples, params)
    return [params.labels[int(a)] for a in np.argmax(logits, axis=1)]


def assign_labels(tree: DiscourseTree, enc: EncodedDocument, params: ModelParams) -> DiscourseTree:
    """Label every internal node with its highest-scoring relation."""
    return tree.with_labels(_labels_for(tree.nodes, enc, params))


def _step(enc, params, state, i, j):
    state, scores = decoder_step(state, span_rep(enc, i, j, params), enc, params)
    return state, log_softmax(scores)


# -- greedy decoders ----------------------------------------------------------------

def _greedy(enc: EncodedDocument, params: ModelParams, sentence_boundaries=None):
    """Stack-based greedy decoding.  Returns (nodes, leaf ends, log-prob) in the
    encoder's coordinates."""
    size = enc.size
    state = init_decoder(enc, params)
    mode = enc.mode
    nodes, ends = [], []
    logp = 0.0
    stack = [(0, size)]
    if mode == GOLD_EDU and size == 1:
        stack = []
    for _ in range(2 * size):
        if not stack:
            break
        i, j = stack.pop()
        state, lp = _step(enc, params, state, i, j)
        cand = _candidates(i, j, mode, sentence_boundaries)
        k = cand[int(np.argmax(lp[cand]))]
        logp += float(lp[k])
        if k == j:
            ends.append(j)
            continue
        nodes.append((i, k, j))
        if j - k > 1:
            stack.append((k, j))
        else:
            ends.append(j)
        if k - i > 1:
            stack.append((i, k))
        else:
            ends.append(k)
    else:
        raise RuntimeError("decoding did not terminate")
    if mode == GOLD_EDU:
        ends = list(range(1, size + 1))
    return nodes, sorted(ends), logp


def _to_token_tree(nodes, ends, enc: EncodedDocument, n: int) -> DiscourseTree:
    conv = enc.to_tokens
    return DiscourseTree.from_nodes(n, [conv(e) for e in ends],
                                    [(conv(i), conv(k), conv(j)) for i, k, j in nodes])


def greedy_parse_e2e(doc: Document, params: ModelParams, guidance: bool = True,
                     enc: Optional[EncodedDocument] = None):
    """Greedy end-to-end parse.  Returns ``(tree, edu_boundaries)``."""
    enc = enc or encode(doc, params, E2E)
    nodes, ends, _ = _greedy(enc, params, doc.sentence_boundaries if guidance else None)
    tree = assign_labels(_to_token_tree(nodes, ends, enc, doc.n), enc, params)
    return tree, tree.edus


def greedy_parse_gold_edu(doc: Document, params: ModelParams,
                          enc: Optional[EncodedDocument] = None) -> DiscourseTree:
    _require_edus(doc)
    enc = enc or encode(doc, params, GOLD_EDU)
    nodes, ends, _ = _greedy(enc, params)
    return assign_labels(_to_token_tree(nodes, ends, enc, doc.n), enc, params)


def _require_edus(doc):
    if doc.edu_boundaries is None:
        raise ValueError(f"document {doc.id!r} has no EDU boundaries")


# -- beam search ----------------------------------------------------------------------

@dataclass
class BeamItem:
    log_prob: float
    state: DecoderState
    schedule: list          # span consumed at step t is schedule[t - 1]
    tree: list              # (i, k, j) decided at step t is tree[t - 1]


def _batched_step(enc, params, items, spans):
    h = np.stack([it.state.h for it in items], axis=1)
    c = np.stack([it.state.c for it in items], axis=1)
    reps = enc.reps
    idx = np.asarray(spans)
    x = reps[idx[:, 0]] @ params["span.W1"] + reps[idx[:, 1]] @ params["span.W2"]
    new, scores = decoder_step(DecoderState(h, c), x, enc, params)
    return new, log_softmax(scores)


def _beam_gold_edu(enc: EncodedDocument, params: ModelParams, beam: int):
    m = enc.size
    steps = m - 1
    if steps <= 0:
        return [], 0.0
    init = init_decoder(enc, params)
    beams = [BeamItem(0.0, init, [(0, m)] + [(0, 0)] * (steps - 1), [(0, 0, 0)] * steps)]
    for t in range(1, steps + 1):
        spans = [it.schedule[t - 1] for it in beams]
        new, lp = _batched_step(enc, params, beams, spans)
        cands = []
        for b, (it, (i, j)) in enumerate(zip(beams, spans)):
            ks = np.arange(i + 1, j)
            # stable sort keeps the smallest k first among equal scores
            order = ks[np.argsort(-lp[b, ks], kind="stable")][:beam]
            state = DecoderState(new.h[:, b], new.c[:, b])
            for k in order:
                k = int(k)
                schedule = list(it.schedule)
                tree = list(it.tree)
                tree[t - 1] = (i, k, j)
                if k > i + 1:
                    schedule[t] = (i, k)
                if j > k + 1:
                    schedule[t + k - i - 1] = (k, j)
                cands.append(BeamItem(it.log_prob + float(lp[b, k]), state, schedule, tree))
        cands.sort(key=lambda it: -it.log_prob)
        beams = cands[:beam]
    best = beams[0]
    return best.tree, best.log_prob


def beam_parse_gold_edu(doc: Document, params: ModelParams, beam: int = 20,
                        enc: Optional[EncodedDocument] = None) -> DiscourseTree:
    """Beam search over split sequences given gold EDUs."""
    _require_edus(doc)
    if beam < 1:
        raise ValueError("beam width must be >= 1")
    enc = enc or encode(doc, params, GOLD_EDU)
    nodes, _ = _beam_gold_edu(enc, params, beam)
    tree = _to_token_tree(nodes, range(1, enc.size + 1), enc, doc.n)
    return assign_labels(tree, enc, params)


@dataclass
class _StackItem:
    log_prob: float
    state: DecoderState
    stack: list
    nodes: list
    ends: list = field(default_factory=list)


def _beam_stack(enc, params, beam, sentence_boundaries):
    """Beam search with per-item span stacks (end-to-end extension)."""
    size = enc.size
    items = [_StackItem(0.0, init_decoder(enc, params), [(0, size)], [])]
    while any(it.stack for it in items):
        live = [it for it in items if it.stack]
        done = [it for it in items if not it.stack]
        spans = [it.stack[-1] for it in live]
        new, lp = _batched_step(enc, params, live, spans)
        cands = list(done)
        for b, (it, (i, j)) in enumerate(zip(live, spans)):
            ks = np.asarray(_candidates(i, j, enc.mode, sentence_boundaries))
            order = ks[np.argsort(-lp[b, ks], kind="stable")][:beam]
            state = DecoderState(new.h[:, b], new.c[:, b])
            for k in order:
                k = int(k)
                stack = it.stack[:-1]
                nodes, ends = list(it.nodes), list(it.ends)
                if k == j:
                    ends.append(j)
                else:
                    nodes.append((i, k, j))
                    if j - k > 1:
                        stack.append((k, j))
                    else:
                        ends.append(j)
                    if k - i > 1:
                        stack.append((i, k))
                    else:
                        ends.append(k)
                cands.append(_StackItem(it.log_prob + float(lp[b, k]), state, stack, nodes, ends))
        cands.sort(key=lambda it: -it.log_prob)
        items = cands[:beam]
    best = items[0]
    return best.nodes, sorted(best.ends), best.log_prob


def beam_parse_e2e(doc: Document, params: ModelParams, beam: int = 20, guidance: bool = True,
                   enc: Optional[EncodedDocument] = None):
    enc = enc or encode(doc, params, E2E)
    nodes, ends, _ = _beam_stack(enc, params, beam, doc.sentence_boundaries if guidance else None)
    tree = assign_labels(_to_token_tree(nodes, ends, enc, doc.n), enc, params)
    return tree, tree.edus


# -- exhaustive search -----------------------------------------------------------------

def _exhaustive(enc, params, sentence_boundaries):
    """Depth-first enumeration of every tree; returns (nodes, ends, logp, count)."""
    mode = enc.mode
    best = [None, -math.inf]
    count = [0]

    def rec(stack, state, logp, nodes, ends):
        if not stack:
            count[0] += 1
            if logp > best[1]:
                best[0], best[1] = (list(nodes), sorted(ends)), logp
            return
        i, j = stack[-1]
        rest = stack[:-1]
        new, lp = _step(enc, params, state, i, j)
        for k in _candidates(i, j, mode, sentence_boundaries):
            lpk = logp + float(lp[k])
            if k == j:
                rec(rest, new, lpk, nodes, ends + [j])
                continue
            st, en = list(rest), list(ends)
            if j - k > 1:
                st.append((k, j))
            else:
                en.append(j)
            if k - i > 1:
                st.append((i, k))
            else:
                en.append(k)
            rec(st, new, lpk, nodes + [(i, k, j)], en)

    size = enc.size
    if mode == GOLD_EDU and size == 1:
        return [], [1], 0.0, 1
    rec([(0, size)], init_decoder(enc, params), 0.0, [], [])
    nodes, ends = best[0]
    if mode == GOLD_EDU:
        ends = list(range(1, size + 1))
    return nodes, ends, best[1], count[0]


def exhaustive_oracle(doc: Document, params: ModelParams, mode: str = GOLD_EDU,
                      guidance: bool = True, enc: Optional[EncodedDocument] = None,
                      return_count: bool = False):
    """Highest-scoring tree by full enumeration (m <= 12 or n <= 10).

    Each tree is scored by teacher-forcing its decision sequence through the
    decoder, exactly as the greedy and beam decoders score their choices.
    Enumeration is in ascending split order, so among equal scores the
    lexicographically smallest sequence wins.
    """
    if mode == GOLD_EDU:
        _require_edus(doc)
        if doc.num_edus > 12:
            raise SearchTooLarge(f"{doc.num_edus} EDUs exceeds the limit of 12")
    elif doc.n > 10:
        raise SearchTooLarge(f"{doc.n} tokens exceeds the limit of 10")
    enc = enc or encode(doc, params, mode)
    nodes, ends, _, count = _exhaustive(
        enc, params, doc.sentence_boundaries if (mode == E2E and guidance) else None)
    tree = assign_labels(_to_token_tree(nodes, ends, enc, doc.n), enc, params)
    return (tree, count) if return_count else tree


# -- scoring ----------------------------------------------------------------------------

def tree_log_prob(tree: DiscourseTree, enc: EncodedDocument, params: ModelParams) -> float:
    """Log-probability the decoder assigns to ``tree``'s decoding sequence.

    The sequence is the pre-order list of decisions the decoders actually take:
    internal splits, plus terminal decisions for leaves wider than one unit in
    end-to-end mode (width-one spans are never decoded).
    """
    if enc.mode == GOLD_EDU:
        index = {b: e for e, b in enumerate((0,) + tuple(enc.edu_ends))}
        steps = [(index[nd.i], index[nd.j], index[nd.k]) for nd in tree.nodes]
    else:
        steps = [(nd.i, nd.j, nd.k) for nd in tree.nodes]
        steps += [(i, j, j) for i, j in tree.leaves() if j - i > 1 or (i, j) == (0, tree.n)]
        steps.sort(key=lambda s: (s[0], -s[1]))
    state = init_decoder(enc, params)
    total = 0.0
    for i, j, k in steps:
        state, lp = _step(enc, params, state, i, j)
        total += float(lp[k])
    return total


def parse_document(doc: Document, params: ModelParams, mode: str, beam: int = 20,
                   guidance: bool = True, e2e_beam: bool = False) -> DiscourseTree:
    """Decode with the configured strategy; returns a labeled tree in token coordinates."""
    if mode == GOLD_EDU:
        if beam <= 1:
            return greedy_parse_gold_edu(doc, params)
        return beam_parse_gold_edu(doc, params, beam)
    if e2e_beam and beam > 1:
        return beam_parse_e2e(doc, params, beam, guidance)[0]
    return greedy_parse_e2e(doc, params, guidance)[0]


def predict_document(doc: Document, params: ModelParams, mode: str, beam: int = 20,
                     guidance: bool = True, e2e_beam: bool = False) -> Document:
    """Copy of ``doc`` carrying the predicted tree (and predicted EDUs in end-to-end mode)."""
    if mode == GOLD_EDU and doc.edu_boundaries is None:
        if doc.gold_tree is None:
            raise ValueError(f"document {doc.id!r} has no EDU boundaries")
        doc = replace(doc, edu_boundaries=doc.gold_tree.edus)
    tree = parse_document(doc, params, mode, beam, guidance, e2e_beam)
    return replace(doc, gold_tree=tree, edu_boundaries=tree.edus)


def predict_corpus(docs: Sequence[Document], params: ModelParams, mode: str, beam: int = 20,
                   guidance: bool = True, e2e_beam: bool = False, workers: int = 1) -> list:
    """Parse every document; output order follows input order."""
    def one(doc):
        return predict_document(doc, params, mode, beam, guidance, e2e_beam)

    if workers <= 1:
        return [one(d) for d in docs]
    from concurrent.futures import ThreadPoolExecutor
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(one, docs))
