import numpy as np
import pytest

from rstsplit.document import Document, RelationLabel, generate_synthetic_corpus
from rstsplit.model import ModelConfig, build_label_inventory, build_vocab, init_params
from rstsplit.tree import DiscourseTree

FIG1_N = 44
FIG1_EDUS = (4, 17, 25, 33, 37, 44)
FIG1_SENTENCES = (25, 44)
FIG1_LABELS = {
    (0, 4, 44): RelationLabel("Attribution", "SN"),
    (4, 25, 44): RelationLabel("Contrast", "NN"),
    (4, 17, 25): RelationLabel("Elaboration", "NS"),
    (25, 37, 44): RelationLabel("Elaboration", "NS"),
    (25, 33, 37): RelationLabel("Same-Unit", "NN"),
}


def make_fig1_tree(labels=FIG1_LABELS) -> DiscourseTree:
    return DiscourseTree.from_nodes(FIG1_N, FIG1_EDUS,
                                    [(*ikj, lab) for ikj, lab in labels.items()])


@pytest.fixture
def fig1_tree():
    return make_fig1_tree()


@pytest.fixture
def fig1_doc(fig1_tree):
    tokens = [f"t{i}" for i in range(FIG1_N)]
    return Document("fig1", tokens, FIG1_SENTENCES, FIG1_EDUS, fig1_tree)


@pytest.fixture(scope="session")
def small_corpus():
    return generate_synthetic_corpus(12, 30, 10, seed=3)


def tiny_params(docs, seed=0, dtype=np.float64, **kw):
    cfg = ModelConfig.tiny(**kw)
    return init_params(cfg, build_vocab(docs), build_label_inventory(docs), seed=seed,
                       dtype=dtype)


def gradcheck_doc() -> Document:
    """Five tokens, four EDUs, two sentences, two distinct labels."""
    a, b = RelationLabel("Elaboration", "NS"), RelationLabel("Joint", "NN")
    tree = DiscourseTree.from_nodes(5, [1, 2, 4, 5], [(0, 2, 5, a), (0, 1, 2, b), (2, 4, 5, a)])
    return Document("g", ["the", "cat", "sat", "on", "mats"], [2, 5], [1, 2, 4, 5], tree)


def gradient_errors(doc, params, mode, step=1e-5, floor=1e-6) -> dict:
    """Per-group relative error between analytic and central-difference gradients.

    The error is ``|g - g_num| / max(|g|, |g_num|, floor)`` in the 2-norm; the
    floor keeps groups whose true gradient vanishes from dividing noise by noise.
    """
    from rstsplit.model import forward_loss

    grads = forward_loss(doc, params, mode).grads
    out = {}
    for name, arr in params.arrays.items():
        num = np.zeros_like(arr)
        flat, nflat = arr.reshape(-1), num.reshape(-1)
        for idx in range(flat.size):
            old = flat[idx]
            flat[idx] = old + step
            up = forward_loss(doc, params, mode, with_grad=False).total
            flat[idx] = old - step
            down = forward_loss(doc, params, mode, with_grad=False).total
            flat[idx] = old
            nflat[idx] = (up - down) / (2 * step)
        g = grads[name]
        den = max(np.linalg.norm(g), np.linalg.norm(num), floor)
        out[name] = float(np.linalg.norm(g - num) / den)
    return out
