"""Sentence embeddings and the two-branch shape/language joint model.

Each branch maps its input through a 256-unit relu layer to a 64-d linear
embedding; an attribute head (sigmoid) reads each branch's hidden layer.
Similarity is the cosine of the two 64-d embeddings.
"""

from __future__ import annotations

import hashlib
import logging
import string
import struct
from dataclasses import dataclass, field

import numpy as np

from . import nnet
from .nnet import Network, NetworkSpec

logger = logging.getLogger(__name__)

JOINT_MAGIC = b"JNTM"
HIDDEN = 256
EMBED = 64
_PUNCT = str.maketrans("", "", string.punctuation)


class DegenerateModelError(ValueError):
    """A branch produced a zero-norm embedding."""


class WordVectorError(ValueError):
    pass


# ---------------------------------------------------------------------------
# word vectors and sentences


@dataclass(frozen=True)
class WordTable:
    vectors: dict
    dim: int

    def __post_init__(self):
        if self.dim < 2:
            raise WordVectorError("word vectors need dimension >= 2")
        for word, vec in self.vectors.items():
            if np.shape(vec) != (self.dim,):
                raise WordVectorError(f"vector for {word!r} has wrong dimension")

    def __contains__(self, word):
        return word in self.vectors

    def __len__(self):
        return len(self.vectors)


def load_word_vectors(path):
    """Read a GloVe-style text file: ``token v1 v2 ... vD`` per line."""
    vectors = {}
    dim = None
    dupes = 0
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.rstrip("\n").split(" ")
            if not line.strip():
                continue
            word, *vals = parts
            try:
                vec = np.array([float(v) for v in vals if v != ""], dtype=np.float64)
            except ValueError:
                raise WordVectorError(f"{path}:{lineno}: unparsable vector") from None
            if dim is None:
                dim = vec.size
            elif vec.size != dim:
                raise WordVectorError(
                    f"{path}:{lineno}: dimension {vec.size} differs from {dim}")
            if word in vectors:
                dupes += 1
            vectors[word] = vec
    if dim is None:
        raise WordVectorError(f"{path}: no word vectors")
    if dupes:
        logger.info("%s: %d duplicate tokens, kept the last occurrence", path, dupes)
    return WordTable(vectors, dim)


def save_word_vectors(table, path):
    with open(path, "w", encoding="utf-8") as fh:
        for word in sorted(table.vectors):
            vals = " ".join(f"{v:.6f}" for v in table.vectors[word])
            fh.write(f"{word} {vals}\n")


def hashed_word_table(words, dim=16, seed=0):
    """Deterministic pseudo-random unit-scale vectors keyed by token hash."""
    vectors = {}
    for word in sorted(set(words)):
        digest = hashlib.sha256(f"{seed}:{word}".encode()).digest()
        rng = np.random.default_rng(int.from_bytes(digest[:8], "little"))
        vectors[word] = np.round(rng.normal(size=dim) / np.sqrt(dim), 6)
    return WordTable(vectors, dim)


def tokenize(text):
    return text.lower().translate(_PUNCT).split()


@dataclass(frozen=True)
class SentenceEmbedding:
    values: np.ndarray
    oov_fraction: float


def embed_sentence(table, text):
    """Mean word vector of the in-vocabulary tokens (order-invariant)."""
    if not text or not text.strip():
        raise ValueError("empty description")
    tokens = tokenize(text)
    if not tokens:
        raise ValueError("description has no tokens")
    known = sorted(t for t in tokens if t in table.vectors)
    oov = 1.0 - len(known) / len(tokens)
    if not known:
        return SentenceEmbedding(np.zeros(table.dim), 1.0)
    total = np.zeros(table.dim)
    for t in known:  # fixed summation order, so permuted text is bitwise identical
        total += table.vectors[t]
    return SentenceEmbedding(total / len(known), oov)


def vocabulary(texts):
    return sorted({t for text in texts for t in tokenize(text)})


# ---------------------------------------------------------------------------
# joint model


@dataclass
class JointModel:
    shape_branch: Network
    lang_branch: Network
    shape_head: Network
    lang_head: Network

    @property
    def k(self):
        return self.shape_branch.input_dim

    @property
    def word_dim(self):
        return self.lang_branch.input_dim

    @property
    def n_attributes(self):
        return self.shape_head.output_dim

    def networks(self):
        return [self.shape_branch, self.lang_branch, self.shape_head, self.lang_head]

    def params(self):
        return [p for net in self.networks() for p in net.params()]

    def copy(self):
        return JointModel(*(n.copy() for n in self.networks()))


def init_joint_model(k, word_dim, n_attributes, seed=0, hidden=HIDDEN, embed=EMBED):
    def branch(dim, s):
        return nnet.init_network(NetworkSpec(dim, ((hidden, "relu"), (embed, "linear")), s))

    def head(s):
        return nnet.init_network(NetworkSpec(hidden, ((n_attributes, "sigmoid"),), s))

    ss = np.random.SeedSequence(seed).generate_state(4)
    return JointModel(branch(k, int(ss[0])), branch(word_dim, int(ss[1])),
                      head(int(ss[2])), head(int(ss[3])))


def _vec(x):
    if isinstance(x, SentenceEmbedding):
        return x.values
    return np.asarray(x, dtype=np.float64)


def _check_dim(x, dim, what):
    if x.shape[-1] != dim:
        raise ValueError(f"{what} has dimension {x.shape[-1]}, model expects {dim}")


def embed_shapes(model, shapes):
    x = _vec(shapes)
    _check_dim(x, model.k, "shape embedding")
    return nnet.predict(model.shape_branch, x)


def embed_sentences(model, sentences):
    x = _vec(sentences)
    _check_dim(x, model.word_dim, "sentence embedding")
    return nnet.predict(model.lang_branch, x)


def _unit_rows(e):
    e = np.atleast_2d(e)
    norms = np.linalg.norm(e, axis=1, keepdims=True)
    if np.any(norms == 0):
        raise DegenerateModelError("branch produced a zero-norm embedding")
    return e / norms


def similarity_matrix(model, shapes, sentences):
    """Cosine similarities between every shape row and every sentence row."""
    a = _unit_rows(embed_shapes(model, shapes))
    b = _unit_rows(embed_sentences(model, sentences))
    return np.clip(a @ b.T, -1.0, 1.0)


def joint_similarity(model, shape, sentence):
    a = embed_shapes(model, shape)
    b = embed_sentences(model, sentence)
    try:
        return nnet.cosine_similarity(a, b)
    except ValueError as exc:
        raise DegenerateModelError(str(exc)) from None


def predict_attributes_from_shape(model, shape):
    x = _vec(shape)
    _check_dim(x, model.k, "shape embedding")
    hidden = nnet.forward(model.shape_branch, x)[1]
    return nnet.predict(model.shape_head, hidden)


def predict_attributes_from_language(model, sentence):
    x = _vec(sentence)
    _check_dim(x, model.word_dim, "sentence embedding")
    hidden = nnet.forward(model.lang_branch, x)[1]
    return nnet.predict(model.lang_head, hidden)


def save_joint_model(model, path):
    with open(path, "wb") as fh:
        fh.write(JOINT_MAGIC)
        fh.write(struct.pack("<III", model.k, model.word_dim, model.n_attributes))
        for net in model.networks():
            nnet.write_network(net, fh)


def load_joint_model(path):
    with open(path, "rb") as fh:
        if fh.read(4) != JOINT_MAGIC:
            raise ValueError(f"{path}: not a joint model file")
        k, d, a = struct.unpack("<III", fh.read(12))
        nets = [nnet.read_network(fh) for _ in range(4)]
    model = JointModel(*nets)
    if (model.k, model.word_dim, model.n_attributes) != (k, d, a):
        raise ValueError(f"{path}: header does not match weight blocks")
    return model


# ---------------------------------------------------------------------------
# training data


@dataclass(frozen=True)
class GroundingExample:
    shape: np.ndarray
    sentence: np.ndarray
    attributes: np.ndarray  # binary targets of the shape's object
    label: int
    shape_id: str
    sentence_id: str
    text: str = ""


def make_pairs(positives, neg_ratio=1.0, seed=0):
    """Positives plus shuffled negatives that cross object identities.

    Each negative keeps a positive's shape and takes the description of a
    randomly chosen example from a different object.
    """
    positives = [p for p in positives if p.label == 1]
    if len({p.shape_id for p in positives}) < 2:
        raise ValueError("need at least 2 distinct objects to form negatives")
    rng = np.random.default_rng(seed)
    ids = np.array([p.shape_id for p in positives])
    n_neg = int(round(neg_ratio * len(positives)))
    negatives = []
    for j in range(n_neg):
        anchor = positives[j % len(positives)]
        others = np.flatnonzero(ids != anchor.shape_id)
        other = positives[int(others[rng.integers(len(others))])]
        negatives.append(GroundingExample(anchor.shape, other.sentence, anchor.attributes, -1,
                                          anchor.shape_id, other.sentence_id, other.text))
    return list(positives) + negatives


def _stack(examples):
    shapes = np.stack([e.shape for e in examples])
    sents = np.stack([e.sentence for e in examples])
    attrs = np.stack([e.attributes for e in examples]).astype(np.float64)
    labels = np.array([e.label for e in examples])
    return shapes, sents, attrs, labels


# ---------------------------------------------------------------------------
# objective


def joint_objective(model, shapes, sentences, attributes, labels, lambda_attr=1.0, margin=0.0):
    """Cosine-embedding loss plus ``lambda_attr`` times the two attribute
    BCE losses (positives only). Returns ``(loss, grads)`` with ``grads`` a
    flat list aligned with ``model.params()``."""
    acts_s = nnet.forward(model.shape_branch, shapes)
    acts_l = nnet.forward(model.lang_branch, sentences)
    loss, g_es, g_el, _ = nnet.cosine_embedding_batch(acts_s[-1], acts_l[-1], labels, margin)
    hidden_s = {}
    hidden_l = {}
    head_grads = []
    pos = labels == 1
    for head, acts, hidden in ((model.shape_head, acts_s, hidden_s),
                               (model.lang_head, acts_l, hidden_l)):
        dh = np.zeros_like(acts[1])
        if lambda_attr and pos.any():
            h_acts = nnet.forward(head, acts[1][pos])
            loss += lambda_attr * nnet.bce_loss(h_acts[-1], attributes[pos])
            g = lambda_attr * nnet.bce_grad(h_acts[-1], attributes[pos])
            grads, g_in = nnet.backward(head, h_acts, g)
            dh[pos] = g_in
        else:
            grads = [(np.zeros_like(w), np.zeros_like(b)) for w, b in zip(head.weights, head.biases)]
        hidden[1] = dh
        head_grads.append(grads)
    gs, _ = nnet.backward(model.shape_branch, acts_s, g_es, hidden_s)
    gl, _ = nnet.backward(model.lang_branch, acts_l, g_el, hidden_l)
    flat = (nnet.flat_grads(gs) + nnet.flat_grads(gl)
            + nnet.flat_grads(head_grads[0]) + nnet.flat_grads(head_grads[1]))
    return loss, flat


# ---------------------------------------------------------------------------
# training


@dataclass
class JointConfig:
    lr: float = 1e-4
    batch_size: int = 64
    lambda_attr: float = 1.0
    margin: float = 0.0
    patience: int = 5
    max_epochs: int = 300
    dev_repeats: int = 5  # distractor draws per dev query
    seed: int = 0


@dataclass
class DevSet:
    """Dev retrieval triplets: for each query sentence, three candidate
    shapes of which ``truth`` is correct."""

    candidates: np.ndarray  # (n, 3, k)
    sentences: np.ndarray  # (n, D)
    truth: np.ndarray  # (n,)

    @classmethod
    def from_examples(cls, examples, seed=0, n_candidates=3, repeats=1):
        positives = [e for e in examples if e.label == 1] * repeats
        ids = sorted({e.shape_id for e in positives})
        if len(ids) < n_candidates:
            raise ValueError(f"dev set needs at least {n_candidates} objects")
        by_id = {i: [e for e in positives if e.shape_id == i] for i in ids}
        rng = np.random.default_rng(seed)
        cands, sents, truth = [], [], []
        for e in positives:
            others = [i for i in ids if i != e.shape_id]
            picks = rng.choice(len(others), n_candidates - 1, replace=False)
            shapes = [e.shape] + [by_id[others[p]][rng.integers(len(by_id[others[p]]))].shape
                                  for p in picks]
            order = rng.permutation(n_candidates)
            cands.append(np.stack([shapes[o] for o in order]))
            sents.append(e.sentence)
            truth.append(int(np.flatnonzero(order == 0)[0]))
        return cls(np.stack(cands), np.stack(sents), np.array(truth))

    def accuracy(self, model):
        n, c, k = self.candidates.shape
        a = _unit_rows(embed_shapes(model, self.candidates.reshape(n * c, k))).reshape(n, c, -1)
        b = _unit_rows(embed_sentences(model, self.sentences))
        sims = np.einsum("nck,nk->nc", a, b)
        return float(np.mean(np.argmax(sims, axis=1) == self.truth))


@dataclass
class TrainResult:
    model: JointModel
    history: list = field(default_factory=list)
    best_epoch: int = 0
    best_dev: float = 0.0


def _standardizer(x):
    # one global scale keeps the relative spread of the input dimensions;
    # per-dimension scaling would blow low-variance subspace directions up
    # to the size of the dominant ones
    mean = x.mean(axis=0)
    scale = float(np.sqrt(np.mean((x - mean) ** 2)))
    return mean, np.full(x.shape[1], scale if scale > 0 else 1.0)


def train_joint(pairs, dev, config=None, on_epoch=None):
    """Adam on the joint objective with early stopping on dev top-1
    retrieval; returns the best-dev model (input standardization folded
    into the first layers)."""
    config = config or JointConfig()
    if not pairs:
        raise ValueError("no training pairs")
    if isinstance(dev, list):
        dev = DevSet.from_examples(dev, seed=config.seed, repeats=config.dev_repeats)
    shapes, sents, attrs, labels = _stack(pairs)
    k, d, a = shapes.shape[1], sents.shape[1], attrs.shape[1]
    if dev.candidates.shape[2] != k or dev.sentences.shape[1] != d:
        raise ValueError("dev set dimensions do not match training pairs")

    s_mean, s_std = _standardizer(shapes)
    l_mean, l_std = _standardizer(sents)
    xs = (shapes - s_mean) / s_std
    xl = (sents - l_mean) / l_std
    dev_norm = DevSet((dev.candidates - s_mean) / s_std, (dev.sentences - l_mean) / l_std, dev.truth)

    model = init_joint_model(k, d, a, seed=config.seed)
    params = model.params()
    opt = nnet.AdamState(lr=config.lr)
    rng = np.random.default_rng(config.seed)
    best = model.copy()
    best_dev = dev_norm.accuracy(model)
    best_epoch = 0
    stale = 0
    history = []
    n = len(labels)
    for epoch in range(1, config.max_epochs + 1):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            loss, grads = joint_objective(model, xs[idx], xl[idx], attrs[idx], labels[idx],
                                          config.lambda_attr, config.margin)
            if not np.isfinite(loss):
                raise FloatingPointError("joint training diverged to a non-finite loss")
            nnet.adam_step(params, grads, opt)
            total += loss * len(idx)
        if not all(np.all(np.isfinite(p)) for p in params):
            raise FloatingPointError("joint training produced non-finite weights")
        acc = dev_norm.accuracy(model)
        record = {"epoch": epoch, "loss": total / n, "dev_top1": acc}
        history.append(record)
        if on_epoch:
            on_epoch(record)
        if acc > best_dev:
            best, best_dev, best_epoch, stale = model.copy(), acc, epoch, 0
        else:
            stale += 1
            if stale >= config.patience:
                break
    final = JointModel(nnet.fold_input_affine(best.shape_branch, s_mean, s_std),
                       nnet.fold_input_affine(best.lang_branch, l_mean, l_std),
                       best.shape_head, best.lang_head)
    return TrainResult(final, history, best_epoch, best_dev)
