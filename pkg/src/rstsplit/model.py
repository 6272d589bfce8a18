"""Encoder, pointing decoder and label classifier of the splitting parser.

Parameters live in plain numpy arrays inside :class:`ModelParams`.  The
training path builds an :mod:`rstsplit.autodiff` graph per document; the
decoding path (:func:`encode`, :func:`decoder_step`, :func:`label_logits`)
reuses the same graph code for the encoder and steps the decoder with raw
numpy.

Vectors are rows: every affine map is ``x @ W + b``.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, lstm_cell
from .document import Document, RelationLabel
from .tree import DiscourseTree, tree_to_splits_e2e, tree_to_splits_edu

E2E = "end-to-end"
GOLD_EDU = "gold-edu"
MODES = (E2E, GOLD_EDU)

PAD, UNK, SOD, EOD = "<pad>", "<unk>", "<sod>", "<eod>"
SPECIALS = (PAD, UNK, SOD, EOD)
CHAR_VOCAB = 257  # byte values shifted by one; 0 is padding
MAX_CHARS = 24


@dataclass(frozen=True)
class ModelConfig:
    word_dim: int = 100
    char_dim: int = 50          # 0 disables the character Bi-LSTM
    char_hidden: int = 25       # per direction
    hidden: int = 400           # encoder LSTM size per direction
    enc_layers: int = 3
    dec_hidden: int = 400
    dec_layers: int = 3
    span_dim: int = 400
    mlp_dim: int = 500          # pointing MLPs and biaffine
    label_dim: int = 500        # label MLPs
    boundary_lstm: bool = True
    decoder_init: str = "learned"   # or "zero"
    leaky_slope: float = 0.01
    dropout: float = 0.0

    @classmethod
    def tiny(cls, **kw) -> "ModelConfig":
        base = dict(word_dim=4, char_dim=0, char_hidden=2, hidden=3, enc_layers=1,
                    dec_hidden=3, dec_layers=1, span_dim=3, mlp_dim=3, label_dim=3)
        base.update(kw)
        return cls(**base)


class ModelParams:
    """All trainable arrays plus the vocabulary and label inventory they index."""

    def __init__(self, config: ModelConfig, vocab: Sequence[str],
                 labels: Sequence[RelationLabel], arrays: dict,
                 frozen: Optional[np.ndarray] = None):
        self.config = config
        self.vocab = list(vocab)
        self.word_index = {w: i for i, w in enumerate(self.vocab)}
        self.labels = list(labels)
        self.label_index = {l: i for i, l in enumerate(self.labels)}
        self.arrays = arrays
        self.frozen = (np.zeros(len(self.vocab), bool) if frozen is None
                       else np.asarray(frozen, bool))

    def __getitem__(self, name):
        return self.arrays[name]

    def __iter__(self):
        return iter(self.arrays)

    @property
    def dtype(self):
        return self.arrays["word_emb"].dtype

    @property
    def num_labels(self) -> int:
        return len(self.labels)

    def num_parameters(self) -> int:
        return int(sum(a.size for a in self.arrays.values()))

    def astype(self, dtype) -> "ModelParams":
        return ModelParams(self.config, self.vocab, self.labels,
                           {k: v.astype(dtype) for k, v in self.arrays.items()},
                           self.frozen.copy())

    def copy(self) -> "ModelParams":
        return self.astype(self.dtype)

    def token_ids(self, tokens) -> np.ndarray:
        unk = self.word_index[UNK]
        return np.array([self.word_index.get(t, unk) for t in tokens], dtype=np.int64)


def build_vocab(docs, min_count: int = 1) -> list:
    counts = {}
    for doc in docs:
        for t in doc.tokens:
            counts[t] = counts.get(t, 0) + 1
    words = sorted(w for w, c in counts.items() if c >= min_count and w not in SPECIALS)
    return list(SPECIALS) + words


def build_label_inventory(docs) -> list:
    seen = set()
    for doc in docs:
        if doc.gold_tree is not None:
            seen.update(nd.label for nd in doc.gold_tree.nodes if nd.label is not None)
    return sorted(seen, key=lambda l: (l.relation, l.nuclearity))


def _lstm_shapes(prefix, din, h):
    return {f"{prefix}.W": (din, 4 * h), f"{prefix}.U": (h, 4 * h), f"{prefix}.b": (4 * h,)}


def param_shapes(cfg: ModelConfig, vocab_size: int, num_labels: int) -> dict:
    shapes = {"word_emb": (vocab_size, cfg.word_dim)}
    din = cfg.word_dim
    if cfg.char_dim:
        shapes["char_emb"] = (CHAR_VOCAB, cfg.char_dim)
        shapes.update(_lstm_shapes("char.fw", cfg.char_dim, cfg.char_hidden))
        shapes.update(_lstm_shapes("char.bw", cfg.char_dim, cfg.char_hidden))
        din += 2 * cfg.char_hidden
    for l in range(cfg.enc_layers):
        shapes.update(_lstm_shapes(f"enc{l}.fw", din, cfg.hidden))
        shapes.update(_lstm_shapes(f"enc{l}.bw", din, cfg.hidden))
        din = 2 * cfg.hidden
    rep = 2 * cfg.hidden
    if cfg.boundary_lstm:
        shapes.update(_lstm_shapes("bnd.fw", rep, cfg.hidden))
        shapes.update(_lstm_shapes("bnd.bw", rep, cfg.hidden))
    shapes["span.W1"] = (rep, cfg.span_dim)
    shapes["span.W2"] = (rep, cfg.span_dim)
    if cfg.decoder_init == "learned":
        shapes["dec_init.W"] = (rep, 2 * cfg.dec_layers * cfg.dec_hidden)
        shapes["dec_init.b"] = (2 * cfg.dec_layers * cfg.dec_hidden,)
    din = cfg.span_dim
    for l in range(cfg.dec_layers):
        shapes.update(_lstm_shapes(f"dec{l}", din, cfg.dec_hidden))
        din = cfg.dec_hidden
    shapes["mlp_d.W"] = (cfg.dec_hidden, cfg.mlp_dim)
    shapes["mlp_d.b"] = (cfg.mlp_dim,)
    shapes["mlp_h.W"] = (rep, cfg.mlp_dim)
    shapes["mlp_h.b"] = (cfg.mlp_dim,)
    shapes["ptr.W_dh"] = (cfg.mlp_dim, cfg.mlp_dim)
    shapes["ptr.w_h"] = (cfg.mlp_dim,)
    shapes["mlp_l.W"] = (2 * rep, cfg.label_dim)
    shapes["mlp_l.b"] = (cfg.label_dim,)
    shapes["mlp_r.W"] = (2 * rep, cfg.label_dim)
    shapes["mlp_r.b"] = (cfg.label_dim,)
    shapes["label.W_lr"] = (cfg.label_dim, num_labels, cfg.label_dim)
    shapes["label.W_l"] = (cfg.label_dim, num_labels)
    shapes["label.W_r"] = (cfg.label_dim, num_labels)
    shapes["label.b"] = (num_labels,)
    return shapes


def init_params(cfg: ModelConfig, vocab: Sequence[str], labels: Sequence[RelationLabel],
                seed: int = 0, dtype=np.float32) -> ModelParams:
    """Xavier-uniform weights, zero biases, forget-gate bias 1."""
    if cfg.decoder_init not in ("learned", "zero"):
        raise ValueError(f"unknown decoder_init {cfg.decoder_init!r}")
    rng = np.random.default_rng(seed)
    arrays = {}
    for name, shape in param_shapes(cfg, len(vocab), len(labels)).items():
        if len(shape) == 1:
            a = np.zeros(shape)
            if name.endswith(".b") and name.split(".")[0].startswith(("enc", "dec", "bnd", "char")) \
                    and name != "dec_init.b":
                h = shape[0] // 4
                a[h:2 * h] = 1.0
            elif name == "ptr.w_h":
                a = rng.uniform(-0.1, 0.1, shape)
        else:
            fan_in = shape[0]
            fan_out = shape[-1]
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            a = rng.uniform(-limit, limit, shape)
        arrays[name] = a.astype(dtype)
    return ModelParams(cfg, vocab, labels, arrays)


# -- graph construction ----------------------------------------------------------

def _char_ids(tokens):
    L = max(1, min(MAX_CHARS, max(len(t.encode("utf-8")) for t in tokens)))
    fw = np.zeros((L, len(tokens)), np.int64)
    bw = np.zeros((L, len(tokens)), np.int64)
    mask = np.zeros((L, len(tokens)))
    for b, tok in enumerate(tokens):
        raw = list(tok.encode("utf-8")[:MAX_CHARS]) or [0]
        ids = [c + 1 for c in raw]
        fw[:len(ids), b] = ids
        bw[:len(ids), b] = ids[::-1]
        mask[:len(ids), b] = 1
    return fw, bw, mask


def _bilstm(X, P, prefix):
    fw = ad.lstm(X, P[f"{prefix}.fw.W"], P[f"{prefix}.fw.U"], P[f"{prefix}.fw.b"])
    rev = slice(None, None, -1)
    bw = ad.lstm(X[rev], P[f"{prefix}.bw.W"], P[f"{prefix}.bw.U"], P[f"{prefix}.bw.b"])[rev]
    return fw, bw


def _dropout(x, rate, rng):
    if not rate or rng is None:
        return x
    keep = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return x * keep.astype(x.value.dtype)


def _encode_graph(doc: Document, P: dict, params: ModelParams, mode: str, rng=None):
    """Returns (boundary reps [n+1, 2H], EDU-level reps or None, final state [2H])."""
    cfg = params.config
    n = doc.n
    ids = np.concatenate([[params.word_index[SOD]], params.token_ids(doc.tokens),
                          [params.word_index[EOD]]])
    E = P["word_emb"][ids]
    if cfg.char_dim:
        fw_ids, bw_ids, mask = _char_ids([SOD, *doc.tokens, EOD])
        cf = ad.lstm(P["char_emb"][fw_ids], P["char.fw.W"], P["char.fw.U"], P["char.fw.b"],
                     mask=mask)
        cb = ad.lstm(P["char_emb"][bw_ids], P["char.bw.W"], P["char.bw.U"], P["char.bw.b"],
                     mask=mask)
        E = ad.concat([cf[-1], cb[-1], E], axis=-1)
    T = n + 2
    X = _dropout(E, cfg.dropout, rng).reshape(T, 1, -1)
    for l in range(cfg.enc_layers):
        fw, bw = _bilstm(X, P, f"enc{l}")
        X = ad.concat([fw, bw], axis=-1)
    H = cfg.hidden
    f = fw.reshape(T, H)
    b = bw.reshape(T, H)
    bounds = ad.concat([f[0:n + 1], b[1:n + 2]], axis=-1)
    bounds = _dropout(bounds, cfg.dropout, rng)
    final = ad.concat([f[T - 1], b[0]], axis=-1)
    edu_reps = None
    if mode == GOLD_EDU:
        if doc.edu_boundaries is None:
            raise ValueError(f"document {doc.id!r} has no EDU boundaries")
        sel = bounds[np.array((0,) + doc.edu_boundaries)]
        if cfg.boundary_lstm:
            m1 = sel.shape[0]
            bf, bb = _bilstm(sel.reshape(m1, 1, 2 * H), P, "bnd")
            edu_reps = ad.concat([bf, bb], axis=-1).reshape(m1, 2 * H)
        else:
            edu_reps = sel
    return bounds, edu_reps, final


def _decoder_init_graph(final, P, cfg):
    layers, Hd = cfg.dec_layers, cfg.dec_hidden
    if cfg.decoder_init == "zero":
        return [(None, None)] * layers
    z = final @ P["dec_init.W"] + P["dec_init.b"]
    out = []
    for l in range(layers):
        h = z[2 * l * Hd:(2 * l + 1) * Hd].reshape(1, Hd)
        c = z[(2 * l + 1) * Hd:(2 * l + 2) * Hd].reshape(1, Hd)
        out.append((h, c))
    return out


def _leaky(x, cfg):
    return ad.leaky_relu(x, cfg.leaky_slope)


def _pointer_graph(reps, spans, targets, final, P, cfg):
    spans = np.asarray(spans, dtype=np.int64).reshape(-1, 2)
    T = len(spans)
    inp = reps[spans[:, 0]] @ P["span.W1"] + reps[spans[:, 1]] @ P["span.W2"]
    X = inp.reshape(T, 1, cfg.span_dim)
    for l, (h0, c0) in enumerate(_decoder_init_graph(final, P, cfg)):
        X = ad.lstm(X, P[f"dec{l}.W"], P[f"dec{l}.U"], P[f"dec{l}.b"], h0, c0)
    D = X.reshape(T, cfg.dec_hidden)
    Dp = _leaky(D @ P["mlp_d.W"] + P["mlp_d.b"], cfg)
    Hp = _leaky(reps @ P["mlp_h.W"] + P["mlp_h.b"], cfg)
    scores = (Dp @ P["ptr.W_dh"]) @ ad.transpose(Hp) + (Hp @ P["ptr.w_h"])
    return ad.cross_entropy(scores, targets), scores


def _label_graph(reps, triples, P, cfg):
    triples = np.asarray(triples, dtype=np.int64).reshape(-1, 3)
    ri, rk, rj = reps[triples[:, 0]], reps[triples[:, 1]], reps[triples[:, 2]]
    hl = _leaky(ad.concat([ri, rk]) @ P["mlp_l.W"] + P["mlp_l.b"], cfg)
    hr = _leaky(ad.concat([rk, rj]) @ P["mlp_r.W"] + P["mlp_r.b"], cfg)
    return (ad.bilinear(hl, P["label.W_lr"], hr) + hl @ P["label.W_l"]
            + hr @ P["label.W_r"] + P["label.b"])


# -- inference-side API ------------------------------------------------------------

@dataclass
class EncodedDocument:
    mode: str
    boundaries: np.ndarray              # h_0 .. h_n
    forward: np.ndarray                 # f_0 .. f_{n+1} (top layer, sentinels included)
    backward: np.ndarray                # b_0 .. b_{n+1}
    final: np.ndarray
    edu_reps: Optional[np.ndarray] = None   # h-bar_0 .. h-bar_m
    edu_ends: Optional[tuple] = None
    pointer_keys: Optional[np.ndarray] = field(default=None, repr=False)
    pointer_bias: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def reps(self) -> np.ndarray:
        """Representations the decoder points over in this mode."""
        return self.edu_reps if self.mode == GOLD_EDU else self.boundaries

    @property
    def size(self) -> int:
        """Largest index in the active coordinate system (n or m)."""
        return self.reps.shape[0] - 1

    def to_tokens(self, idx: int) -> int:
        if self.mode == GOLD_EDU:
            return 0 if idx == 0 else self.edu_ends[idx - 1]
        return idx


@dataclass
class DecoderState:
    h: np.ndarray   # [layers, ..., dec_hidden]
    c: np.ndarray


def _param_tensors(params: ModelParams, requires_grad=False) -> dict:
    return {k: Tensor(v, requires_grad=requires_grad) for k, v in params.arrays.items()}


def encode(doc: Document, params: ModelParams, mode: str = E2E) -> EncodedDocument:
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}")
    P = _param_tensors(params)
    bounds, edu_reps, final = _encode_graph(doc, P, params, mode)
    cfg = params.config
    enc = EncodedDocument(mode, bounds.value, None, None, final.value,
                          None if edu_reps is None else edu_reps.value,
                          doc.edu_boundaries if mode == GOLD_EDU else None)
    H = cfg.hidden
    enc.forward = np.concatenate([bounds.value[:, :H], final.value[None, :H]])
    enc.backward = np.concatenate([final.value[None, H:], bounds.value[:, H:]])
    enc.pointer_keys, enc.pointer_bias = pointer_projection(enc.reps, params)
    return enc


def pointer_projection(reps: np.ndarray, params: ModelParams):
    """Per-boundary parts of the biaffine score: ``(h' W_dh^T, h' w_h)``."""
    hp = _leaky_np(reps @ params["mlp_h.W"] + params["mlp_h.b"], params.config)
    return hp @ params["ptr.W_dh"].T, hp @ params["ptr.w_h"]


def _leaky_np(x, cfg):
    return np.where(x > 0, x, cfg.leaky_slope * x)


def span_rep(enc: EncodedDocument, i: int, j: int, params: ModelParams) -> np.ndarray:
    """``W1 h_i + W2 h_j`` over the mode's representations."""
    size = enc.size
    if not 0 <= i < j <= size:
        raise IndexError(f"span ({i}, {j}) outside [0, {size}]")
    reps = enc.reps
    return reps[i] @ params["span.W1"] + reps[j] @ params["span.W2"]


def init_decoder(enc: EncodedDocument, params: ModelParams) -> DecoderState:
    cfg = params.config
    layers, Hd = cfg.dec_layers, cfg.dec_hidden
    if cfg.decoder_init == "zero":
        z = np.zeros(2 * layers * Hd, params.dtype)
    else:
        z = enc.final @ params["dec_init.W"] + params["dec_init.b"]
    z = z.reshape(layers, 2, Hd)
    return DecoderState(z[:, 0].copy(), z[:, 1].copy())


def decoder_step(state: DecoderState, span_vec: np.ndarray, enc: EncodedDocument,
                 params: ModelParams):
    """Advance the decoder one step; score every boundary of the document.

    Works on a single state (``h[layers, H]``) or a batch (``h[layers, B, H]``
    with ``span_vec[B, D]``).  Returns the new state and raw biaffine scores
    over all ``size + 1`` boundaries.
    """
    cfg = params.config
    x = span_vec
    hs, cs = [], []
    for l in range(cfg.dec_layers):
        h, c = lstm_cell(x, state.h[l], state.c[l], params[f"dec{l}.W"],
                         params[f"dec{l}.U"], params[f"dec{l}.b"])
        hs.append(h)
        cs.append(c)
        x = h
    dp = _leaky_np(x @ params["mlp_d.W"] + params["mlp_d.b"], cfg)
    scores = dp @ enc.pointer_keys.T + enc.pointer_bias
    return DecoderState(np.stack(hs), np.stack(cs)), scores


def softmax(scores: np.ndarray) -> np.ndarray:
    return np.exp(ad.log_softmax(scores))


def valid_splits(i: int, j: int, mode: str) -> range:
    return range(i + 1, j + 1) if mode == E2E else range(i + 1, j)


def pointing_distribution(scores: np.ndarray, valid_range=None, mode: str = "train") -> np.ndarray:
    """Softmax over all boundaries.

    In ``"train"`` mode the full distribution is returned.  In an inference
    mode (``E2E`` or ``GOLD_EDU``) entries outside the valid split range of
    ``valid_range = (i, j)`` are zeroed; kept entries are still full-softmax
    probabilities, so their logs are comparable across spans.
    """
    probs = softmax(np.asarray(scores))
    if mode == "train":
        return probs
    i, j = valid_range
    ks = valid_splits(i, j, mode)
    if len(ks) == 0:
        raise ValueError(f"span ({i}, {j}) has no valid split in {mode} mode")
    out = np.zeros_like(probs)
    out[..., ks.start:ks.stop] = probs[..., ks.start:ks.stop]
    return out


def label_logits(enc: EncodedDocument, i: int, k: int, j: int, params: ModelParams) -> np.ndarray:
    size = enc.size
    if not 0 <= i < k < j <= size:
        raise IndexError(f"node ({i}, {k}, {j}) outside [0, {size}]")
    return label_logits_batch(enc, [(i, k, j)], params)[0]


def label_logits_batch(enc: EncodedDocument, triples, params: ModelParams) -> np.ndarray:
    P = _param_tensors(params)
    return _label_graph(Tensor(enc.reps), triples, P, params.config).value


# -- training loss ------------------------------------------------------------------------

def gold_decisions(doc: Document, mode: str) -> list:
    """Teacher-forcing sequence ``[(i, j, k, label)]`` in the mode's coordinates."""
    if doc.gold_tree is None:
        raise ValueError(f"document {doc.id!r} has no gold tree")
    tree = doc.gold_tree
    if mode == E2E:
        return [tuple(d) for d in tree_to_splits_e2e(tree)]
    index = {b: e for e, b in enumerate((0,) + tuple(tree.edus))}
    return [(index[d.i], index[d.j], index[d.k], d.label) for d in tree_to_splits_edu(tree)]


@dataclass
class LossResult:
    total: float
    structure: float
    label: float
    grads: Optional[dict] = None


def forward_loss(doc: Document, params: ModelParams, mode: str, with_grad: bool = True,
                 rng=None) -> LossResult:
    if mode == GOLD_EDU and doc.edu_boundaries is None:
        # a gold tree carries its own segmentation
        doc = replace(doc, edu_boundaries=doc.gold_tree.edus)
    decisions = gold_decisions(doc, mode)
    P = _param_tensors(params, requires_grad=with_grad)
    cfg = params.config
    bounds, edu_reps, final = _encode_graph(doc, P, params, mode, rng)
    reps = edu_reps if mode == GOLD_EDU else bounds
    parts = []
    loss_s = loss_l = None
    if decisions:
        spans = [(d[0], d[1]) for d in decisions]
        loss_s, _ = _pointer_graph(reps, spans, [d[2] for d in decisions], final, P, cfg)
        parts.append(loss_s)
        internal = [d for d in decisions if d[2] < d[1]]
        if internal:
            missing = [d[3] for d in internal if d[3] not in params.label_index]
            if missing:
                raise KeyError(f"label {missing[0]} not in the model's inventory")
            logits = _label_graph(reps, [(d[0], d[2], d[1]) for d in internal], P, cfg)
            loss_l = ad.cross_entropy(logits, [params.label_index[d[3]] for d in internal])
            parts.append(loss_l)
    if not parts:
        return LossResult(0.0, 0.0, 0.0, {k: np.zeros_like(v) for k, v in params.arrays.items()}
                          if with_grad else None)
    loss = parts[0] if len(parts) == 1 else parts[0] + parts[1]
    grads = None
    if with_grad:
        loss.backward()
        grads = {}
        for k, t in P.items():
            grads[k] = t.grad if t.grad is not None else np.zeros_like(t.value)
        if params.frozen.any():
            grads["word_emb"] = grads["word_emb"].copy()
            grads["word_emb"][params.frozen] = 0
    return LossResult(float(loss.value),
                      0.0 if loss_s is None else float(loss_s.value),
                      0.0 if loss_l is None else float(loss_l.value), grads)


def total_loss(doc: Document, params: ModelParams, mode: str = E2E):
    """Structure plus label cross-entropy for one document and its gradients."""
    res = forward_loss(doc, params, mode)
    return res.total, res.grads


# -- embeddings -------------------------------------------------------------------------

def load_pretrained_embeddings(path, params: ModelParams) -> ModelParams:
    """Overwrite vocabulary rows from a ``word v1 .. vD`` text file and freeze them."""
    dim = params.config.word_dim
    arrays = dict(params.arrays)
    emb = arrays["word_emb"].copy()
    frozen = params.frozen.copy()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.rstrip("\n").split(" ")
            if not parts or not parts[0]:
                continue
            if len(parts) - 1 != dim:
                raise ValueError(f"{path}:{lineno}: expected {dim} values, got {len(parts) - 1}")
            row = params.word_index.get(parts[0])
            if row is None:
                continue
            emb[row] = np.array(parts[1:], dtype=float)
            frozen[row] = True
    arrays["word_emb"] = emb
    return ModelParams(params.config, params.vocab, params.labels, arrays, frozen)


def config_to_dict(cfg: ModelConfig) -> dict:
    return asdict(cfg)


def teacher_forced_scores(doc: Document, params: ModelParams, mode: str):
    """Pointing scores at every gold decision; returns ``(decisions, scores[T, size+1])``."""
    if mode == GOLD_EDU and doc.edu_boundaries is None:
        doc = replace(doc, edu_boundaries=doc.gold_tree.edus)
    decisions = gold_decisions(doc, mode)
    if not decisions:
        return decisions, np.zeros((0, 0))
    P = _param_tensors(params)
    bounds, edu_reps, final = _encode_graph(doc, P, params, mode)
    reps = edu_reps if mode == GOLD_EDU else bounds
    _, scores = _pointer_graph(reps, [(d[0], d[1]) for d in decisions],
                               [d[2] for d in decisions], final, P, params.config)
    return decisions, scores.value
