"""Neural sentence-score regressor trained by backpropagation.

The network reduces the word embeddings of a candidate sentence and of the
question to one vector each (``mean`` or ``cnn``), compares them with a
similarity layer (``sim``: w * q * s elementwise; ``simyu``: q^T W s + b;
or ``none``), concatenates the comparison to the sentence vector and feeds
the result through one relu hidden layer and a linear output unit. The
embedding matrix is never updated.

The same similarity + head stack also runs on precomputed vectors, which
gives the tf.idf and SVD baselines.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import scipy.sparse as sp
from numpy.lib.stride_tricks import sliding_window_view
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from .exceptions import DataFormatError, DivergenceError, ValidationError
from .vecspace import EmbeddingTable

PAD = 0
MIN_CNN_LEN = 4
MAGIC = "QSUMM-NNR"
FORMAT_VERSION = 1


class Vocab:
    """Token ids in first-occurrence order; id 0 is padding and OOV."""

    def __init__(self, tokens: Sequence[str] = ()):
        self.ids = {}
        for t in tokens:
            if t not in self.ids:
                self.ids[t] = len(self.ids) + 1

    def __len__(self):
        return len(self.ids) + 1

    def encode(self, tokens) -> list[int]:
        return [self.ids.get(t, PAD) for t in tokens]


def build_vocab(docs, table: EmbeddingTable | None = None) -> Vocab:
    """Vocabulary over ``docs``; with ``table`` only embeddable tokens get ids."""
    stream = (t for d in docs for t in d if table is None or t in table)
    return Vocab(stream)


def embedding_matrix(vocab: Vocab, table: EmbeddingTable) -> np.ndarray:
    E = np.zeros((len(vocab), table.dim))
    for tok, i in vocab.ids.items():
        if tok in table:
            E[i] = table[tok]
    E.setflags(write=False)
    return E


@dataclass
class TrainConfig:
    epochs: int = 10
    dropout: float = 0.0
    learning_rate: float = 1e-3
    batch_size: int = 128
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1:
            raise ValidationError("epochs must be >= 1")
        if not 0.0 <= self.dropout < 1.0:
            raise ValidationError("dropout must be in [0, 1)")
        if self.batch_size < 1:
            raise ValidationError("batch_size must be >= 1")


def _glorot(rng, shape, fan_in, fan_out):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


# -- primitives --------------------------------------------------------------

def reduce_mean(E: np.ndarray, ids) -> np.ndarray:
    """Mean of the embedding rows of the non-pad ids; all-pad gives zeros."""
    ids = np.asarray(ids, dtype=np.int64)
    keep = ids[ids != PAD]
    if keep.size == 0:
        return np.zeros(E.shape[1])
    return E[keep].mean(axis=0)


def similarity_sim(q, s, w) -> np.ndarray:
    q, s, w = (np.asarray(a, dtype=float) for a in (q, s, w))
    if not (q.shape == s.shape == w.shape):
        raise ValidationError(f"length mismatch: {q.shape}, {s.shape}, {w.shape}")
    return w * q * s


def similarity_simyu(q, s, W, b) -> float:
    q, s, W = (np.asarray(a, dtype=float) for a in (q, s, W))
    if W.shape != (q.shape[0], s.shape[0]):
        raise ValidationError(f"W has shape {W.shape}, expected {(q.shape[0], s.shape[0])}")
    return float(q @ W @ s + b)


def _pad_batch(seqs, min_len=1):
    lens = np.array([len(s) for s in seqs], dtype=np.int64)
    width = max(min_len, int(lens.max()) if len(lens) else 0)
    out = np.zeros((len(seqs), width), dtype=np.int64)
    for i, s in enumerate(seqs):
        out[i, : len(s)] = s
    return out, lens


class _CNN:
    """Full-width convolutions over the word axis, relu, max over positions."""

    def __init__(self, prefix, heights, n_filters):
        self.prefix = prefix
        self.heights = tuple(heights)
        self.n_filters = n_filters

    def names(self):
        for h in self.heights:
            yield f"{self.prefix}_W{h}", f"{self.prefix}_b{h}"

    def init(self, params, rng, d):
        for h, (wn, bn) in zip(self.heights, self.names()):
            params[wn] = _glorot(rng, (self.n_filters, h, d), h * d, self.n_filters)
            params[bn] = np.zeros(self.n_filters)

    def forward(self, params, X, lens):
        # X: B x L x d with L >= MIN_CNN_LEN; rows past the true length are zero
        B, L, d = X.shape
        eff = np.maximum(lens, MIN_CNN_LEN)
        outs, caches = [], []
        for h, (wn, bn) in zip(self.heights, self.names()):
            win = sliding_window_view(X, h, axis=1)  # B x P x d x h
            win = win.transpose(0, 1, 3, 2).reshape(B, L - h + 1, h * d)
            W = params[wn].reshape(self.n_filters, h * d)
            pre = win @ W.T + params[bn]  # B x P x F
            valid = np.arange(L - h + 1)[None, :] <= (eff - h)[:, None]
            pre = np.where(valid[:, :, None], pre, -np.inf)
            arg = pre.argmax(axis=1)  # B x F
            m = np.take_along_axis(pre, arg[:, None, :], axis=1)[:, 0, :]
            outs.append(np.maximum(m, 0.0))
            caches.append((win, arg, m, pre))
        return np.concatenate(outs, axis=1), caches

    def backward(self, params, caches, dout, grads):
        F = self.n_filters
        B = dout.shape[0]
        for k, (h, (wn, bn)) in enumerate(zip(self.heights, self.names())):
            win, arg, m, _ = caches[k]
            dm = dout[:, k * F:(k + 1) * F] * (m > 0)
            sel = win[np.arange(B)[:, None], arg]  # B x F x (h d)
            grads[wn] = np.einsum("bf,bfk->fk", dm, sel).reshape(params[wn].shape)
            grads[bn] = dm.sum(axis=0)


class NnrModel:
    """Parameters and forward/backward passes of the regression network.

    With an ``embedding`` matrix the inputs are (question ids, sentence ids)
    and ``reduction`` picks mean or cnn. Without one, inputs are
    precomputed (question vector, sentence vector) pairs of size
    ``input_dim``.
    """

    def __init__(self, embedding=None, reduction="mean", similarity="sim", hidden=50,
                 n_filters=32, heights=(2, 3, 4), input_dim=None, seed=0, vocab=None):
        if similarity not in ("none", "sim", "simyu"):
            raise ValidationError(f"unknown similarity {similarity!r}")
        if embedding is not None and reduction not in ("mean", "cnn"):
            raise ValidationError(f"unknown reduction {reduction!r}")
        self.embedding = None
        if embedding is not None:
            E = np.array(embedding, dtype=float)
            E.setflags(write=False)
            self.embedding = E
        elif input_dim is None:
            raise ValidationError("either an embedding matrix or input_dim is required")
        self.reduction = reduction if embedding is not None else "vectors"
        self.similarity = similarity
        self.hidden = hidden
        self.n_filters = n_filters
        self.heights = tuple(heights)
        self.input_dim = input_dim
        self.seed = seed
        self.vocab = vocab
        self._cnn = {
            side: _CNN(f"cnn_{side}", self.heights, n_filters) for side in ("s", "q")
        }
        self.params = self._init_params(np.random.default_rng(seed))

    @property
    def sentence_dim(self) -> int:
        if self.reduction == "mean":
            return self.embedding.shape[1]
        if self.reduction == "cnn":
            return self.n_filters * len(self.heights)
        return self.input_dim

    @property
    def sim_dim(self) -> int:
        return {"none": 0, "sim": self.sentence_dim, "simyu": 1}[self.similarity]

    def _init_params(self, rng):
        p = {}
        ds = self.sentence_dim
        if self.reduction == "cnn":
            for cnn in self._cnn.values():
                cnn.init(p, rng, self.embedding.shape[1])
        if self.similarity == "sim":
            p["sim_w"] = _glorot(rng, (ds,), ds, ds)
        elif self.similarity == "simyu":
            p["simyu_W"] = _glorot(rng, (ds, ds), ds, ds)
            p["simyu_b"] = np.zeros(1)
        din = ds + self.sim_dim
        p["hidden_W"] = _glorot(rng, (din, self.hidden), din, self.hidden)
        p["hidden_b"] = np.zeros(self.hidden)
        p["out_w"] = _glorot(rng, (self.hidden,), self.hidden, 1)
        p["out_b"] = np.zeros(1)
        return p

    def trainable(self) -> list[str]:
        return list(self.params)

    # batches ------------------------------------------------------------
    def make_batch(self, X) -> dict:
        if self.embedding is not None:
            qs = [np.asarray(q, dtype=np.int64) for q, _ in X]
            ss = [np.asarray(s, dtype=np.int64) for _, s in X]
            min_len = MIN_CNN_LEN if self.reduction == "cnn" else 1
            q_ids, q_len = _pad_batch(qs, min_len)
            s_ids, s_len = _pad_batch(ss, min_len)
            return {"q_ids": q_ids, "q_len": q_len, "s_ids": s_ids, "s_len": s_len}
        q = np.array([_dense(a) for a, _ in X], dtype=float).reshape(len(X), -1)
        s = np.array([_dense(b) for _, b in X], dtype=float).reshape(len(X), -1)
        return {"q": q, "s": s}

    def _reduce(self, batch):
        if self.reduction == "vectors":
            return batch["s"], batch["q"], None
        E = self.embedding
        out, caches = [], {}
        for side in ("s", "q"):
            ids, lens = batch[f"{side}_ids"], batch[f"{side}_len"]
            X = E[ids]
            if self.reduction == "mean":
                mask = (ids != PAD)[:, :, None]
                cnt = mask.sum(axis=1)
                out.append(np.divide((X * mask).sum(axis=1), cnt,
                                     out=np.zeros((len(ids), E.shape[1])), where=cnt > 0))
            else:
                v, caches[side] = self._cnn[side].forward(self.params, X, lens)
                out.append(v)
        return out[0], out[1], caches

    def forward_batch(self, batch, train=False, rng=None, dropout=0.0):
        p = self.params
        s, q, rcache = self._reduce(batch)
        if self.similarity == "sim":
            sb = p["sim_w"] * q * s
        elif self.similarity == "simyu":
            sb = (np.sum((q @ p["simyu_W"]) * s, axis=1) + p["simyu_b"][0])[:, None]
        else:
            sb = np.zeros((s.shape[0], 0))
        z = np.concatenate([s, sb], axis=1)
        if train and dropout > 0:
            mask = (rng.random(z.shape) >= dropout) / (1.0 - dropout)
        else:
            mask = None
        zd = z * mask if mask is not None else z
        a = zd @ p["hidden_W"] + p["hidden_b"]
        h = np.maximum(a, 0.0)
        pred = h @ p["out_w"] + p["out_b"][0]
        cache = dict(s=s, q=q, z=z, zd=zd, mask=mask, a=a, h=h, rcache=rcache)
        return pred, cache

    def backward(self, cache, dpred) -> dict:
        p = self.params
        g = {}
        h, a, zd, s, q = cache["h"], cache["a"], cache["zd"], cache["s"], cache["q"]
        g["out_w"] = h.T @ dpred
        g["out_b"] = np.array([dpred.sum()])
        da = dpred[:, None] * p["out_w"][None, :] * (a > 0)
        g["hidden_W"] = zd.T @ da
        g["hidden_b"] = da.sum(axis=0)
        dz = da @ p["hidden_W"].T
        if cache["mask"] is not None:
            dz = dz * cache["mask"]
        D = s.shape[1]
        ds = dz[:, :D].copy()
        dsb = dz[:, D:]
        if self.similarity == "sim":
            w = p["sim_w"]
            g["sim_w"] = (dsb * q * s).sum(axis=0)
            ds += dsb * w * q
            dq = dsb * w * s
        elif self.similarity == "simyu":
            W = p["simyu_W"]
            dy = dsb[:, 0]
            g["simyu_W"] = (q * dy[:, None]).T @ s
            g["simyu_b"] = np.array([dy.sum()])
            ds += dy[:, None] * (q @ W)
            dq = dy[:, None] * (s @ W.T)
        else:
            dq = np.zeros_like(q)
        if self.reduction == "cnn":
            rc = cache["rcache"]
            self._cnn["s"].backward(p, rc["s"], ds, g)
            self._cnn["q"].backward(p, rc["q"], dq, g)
        return g

    def predict(self, X) -> np.ndarray:
        if len(X) == 0:
            return np.zeros(0)
        return self.forward_batch(self.make_batch(X))[0]

    def copy(self) -> "NnrModel":
        clone = object.__new__(NnrModel)
        clone.__dict__.update(self.__dict__)
        clone.params = {k: v.copy() for k, v in self.params.items()}
        return clone

    def config(self) -> dict:
        return dict(reduction=self.reduction, similarity=self.similarity, hidden=self.hidden,
                    n_filters=self.n_filters, heights=list(self.heights),
                    input_dim=self.input_dim, seed=self.seed)


def _dense(v):
    if sp.issparse(v):
        return v.toarray().ravel()
    return np.asarray(v, dtype=float).ravel()


def forward(model: NnrModel, q_ids, s_ids) -> float:
    """Evaluation-mode prediction for one (question, sentence) pair."""
    return float(model.predict([(q_ids, s_ids)])[0])


class _Adam:
    def __init__(self, params, lr, b1=0.9, b2=0.999, eps=1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, b1, b2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params, grads):
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for k, gk in grads.items():
            self.m[k] = self.b1 * self.m[k] + (1 - self.b1) * gk
            self.v[k] = self.b2 * self.v[k] + (1 - self.b2) * gk * gk
            params[k] -= self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)


def train_nnr(model: NnrModel, X, y, cfg: TrainConfig | None = None):
    """Minimise mean squared error with Adam; returns (model, loss history).

    ``X`` holds (question, sentence) inputs in the form the model expects.
    The history has one entry per epoch: the mean squared error over that
    epoch's training passes.
    """
    cfg = cfg or TrainConfig()
    y = np.asarray(y, dtype=float)
    n = len(y)
    if n == 0 or n != len(X):
        raise ValidationError("training data must be nonempty with one target per input")
    rng = np.random.default_rng(cfg.seed)
    opt = _Adam(model.params, cfg.learning_rate)
    history = []
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(n)
        sq = np.zeros(n)
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            batch = model.make_batch([X[i] for i in idx])
            pred, cache = model.forward_batch(batch, train=True, rng=rng, dropout=cfg.dropout)
            err = pred - y[idx]
            sq[idx] = err * err
            grads = model.backward(cache, 2.0 * err / len(idx))
            opt.step(model.params, grads)
        # summed in sample order so the value does not depend on the shuffle
        loss = float(sq.sum()) / n
        if not np.isfinite(loss) or any(not np.all(np.isfinite(v)) for v in model.params.values()):
            raise DivergenceError(epoch, loss)
        history.append(loss)
    return model, history


# -- gradient check ----------------------------------------------------------

def _kink_margin(model: NnrModel, batch) -> float:
    _, cache = model.forward_batch(batch)
    margins = [np.abs(cache["a"]).min()]
    if model.reduction == "cnn":
        for rc in cache["rcache"].values():
            for _, _, m, pre in rc:
                margins.append(np.abs(m).min())
                srt = np.sort(np.where(np.isfinite(pre), pre, -1e300), axis=1)
                if srt.shape[1] > 1:
                    gap = srt[:, -1, :] - srt[:, -2, :]
                    margins.append(gap[srt[:, -2, :] > -1e299].min(initial=np.inf))
    return float(min(margins))


def gradient_check(model: NnrModel, record, block: str, n_samples=50, step=1e-5,
                   margin=1e-4, seed=0, max_jitter=50) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``record`` is ``(question, sentence, target)``; the loss is the squared
    error of one evaluation-mode prediction. Up to ``n_samples`` entries of
    parameter ``block`` are checked. If a relu or max-pool sits within
    ``margin`` of its kink, the biases of a copy of the model are jittered
    until it does not.
    """
    model = model.copy()
    q, s, t = record
    batch = model.make_batch([(q, s)])
    rng = np.random.default_rng(seed)
    for _ in range(max_jitter):
        if _kink_margin(model, batch) > margin:
            break
        for name, v in model.params.items():
            if "_b" in name:
                v += rng.uniform(-1e-2, 1e-2, size=v.shape)
    else:
        raise ValidationError("could not move the network away from relu/max kinks")

    def loss():
        pred, _ = model.forward_batch(batch)
        return float((pred[0] - t) ** 2)

    pred, cache = model.forward_batch(batch)
    grads = model.backward(cache, np.array([2.0 * (pred[0] - t)]))
    W = model.params[block]
    flat = W.reshape(-1)
    gflat = grads[block].reshape(-1)
    picks = np.arange(flat.size)
    if flat.size > n_samples:
        picks = rng.choice(flat.size, size=n_samples, replace=False)
    worst = 0.0
    for i in picks:
        old = flat[i]
        flat[i] = old + step
        up = loss()
        flat[i] = old - step
        down = loss()
        flat[i] = old
        num = (up - down) / (2 * step)
        denom = max(abs(num), abs(gflat[i]), 1e-7)
        worst = max(worst, abs(num - gflat[i]) / denom)
    return worst


# -- persistence -------------------------------------------------------------

def save_model(model: NnrModel, path) -> None:
    arrays = {f"param/{k}": v for k, v in model.params.items()}
    if model.embedding is not None:
        arrays["embedding"] = model.embedding
    vocab = model.vocab.ids if model.vocab is not None else None
    meta = {"magic": MAGIC, "version": FORMAT_VERSION, "config": model.config(), "vocab": vocab}
    with open(path, "wb") as fh:
        np.savez(fh, __meta__=np.array(json.dumps(meta)), **arrays)


def load_model(path) -> NnrModel:
    try:
        with np.load(path, allow_pickle=False) as z:
            meta = json.loads(str(z["__meta__"]))
            arrays = {k: z[k] for k in z.files if k != "__meta__"}
    except (OSError, ValueError, KeyError) as exc:
        raise DataFormatError(f"{path}: not a model container ({exc})") from exc
    if meta.get("magic") != MAGIC:
        raise DataFormatError(f"{path}: not an NNR model")
    if meta.get("version") != FORMAT_VERSION:
        raise DataFormatError(f"{path}: unsupported model version {meta.get('version')}")
    cfg = dict(meta["config"])
    vocab = None
    if meta.get("vocab") is not None:
        vocab = Vocab()
        vocab.ids = dict(meta["vocab"])
    reduction = cfg.pop("reduction")
    model = NnrModel(
        embedding=arrays.get("embedding"),
        reduction=reduction if reduction != "vectors" else "mean",
        vocab=vocab,
        **cfg,
    )
    for k in model.params:
        model.params[k] = arrays[f"param/{k}"].copy()
    return model


# -- estimators --------------------------------------------------------------

class NeuralRegressor(RegressorMixin, BaseEstimator):
    """Sentence-score regressor over (question tokens, sentence tokens) pairs.

    The vocabulary is built from the training pairs, restricted to tokens
    that have an embedding; everything else maps to the zero row.
    """

    def __init__(self, embeddings: EmbeddingTable | None = None, reduction="mean",
                 similarity="sim", hidden=50, n_filters=32, dropout=0.0, epochs=10,
                 learning_rate=1e-3, batch_size=128, seed=0):
        self.embeddings = embeddings
        self.reduction = reduction
        self.similarity = similarity
        self.hidden = hidden
        self.n_filters = n_filters
        self.dropout = dropout
        self.epochs = epochs
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.seed = seed

    def _cfg(self):
        return TrainConfig(self.epochs, self.dropout, self.learning_rate, self.batch_size, self.seed)

    def fit(self, X, y):
        if self.embeddings is None:
            raise ValidationError("NeuralRegressor needs an embedding table")
        vocab = build_vocab((t for pair in X for t in pair), self.embeddings)
        self.model_ = NnrModel(
            embedding_matrix(vocab, self.embeddings), self.reduction, self.similarity,
            self.hidden, self.n_filters, seed=self.seed, vocab=vocab,
        )
        enc = [(vocab.encode(q), vocab.encode(s)) for q, s in X]
        _, self.loss_history_ = train_nnr(self.model_, enc, y, self._cfg())
        return self

    def predict(self, X) -> np.ndarray:
        check_is_fitted(self, "model_")
        v = self.model_.vocab
        return self.model_.predict([(v.encode(q), v.encode(s)) for q, s in X])


class VectorRegressor(RegressorMixin, BaseEstimator):
    """The similarity + head stack on precomputed (question, sentence) vectors.

    ``similarity="none"`` with tf.idf vectors is the tf.idf baseline; SVD
    projections with ``"sim"`` or ``"simyu"`` give the SVD baselines.
    """

    def __init__(self, similarity="none", hidden=50, dropout=0.0, epochs=10,
                 learning_rate=1e-3, batch_size=128, seed=0):
        self.similarity = similarity
        self.hidden = hidden
        self.dropout = dropout
        self.epochs = epochs
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.seed = seed

    def fit(self, X, y):
        X = list(X)
        if not X:
            raise ValidationError("no training data")
        dim = _dense(X[0][1]).shape[0]
        self.model_ = NnrModel(similarity=self.similarity, hidden=self.hidden,
                               input_dim=dim, seed=self.seed)
        cfg = TrainConfig(self.epochs, self.dropout, self.learning_rate, self.batch_size, self.seed)
        _, self.loss_history_ = train_nnr(self.model_, X, y, cfg)
        return self

    def predict(self, X) -> np.ndarray:
        check_is_fitted(self, "model_")
        return self.model_.predict(list(X))


def mse(y_true, y_pred) -> float:
    d = np.asarray(y_true, dtype=float) - np.asarray(y_pred, dtype=float)
    return float(d @ d / len(d)) if len(d) else 0.0


def baseline_tfidf_nn(train_X, train_y, test_X, test_y, **params) -> float:
    """Test MSE of the tf.idf network; inputs are sparse or dense tf.idf rows."""
    reg = VectorRegressor(similarity="none", **params)
    tr = [(v, v) for v in _rows(train_X)]
    te = [(v, v) for v in _rows(test_X)]
    reg.fit(tr, train_y)
    return mse(test_y, reg.predict(te))


def baseline_svd_nn(train_pairs, train_y, test_pairs, test_y, similarity="sim", **params) -> float:
    """Test MSE of the SVD network; pairs are (question vector, sentence vector)."""
    reg = VectorRegressor(similarity=similarity, **params)
    reg.fit(list(train_pairs), train_y)
    return mse(test_y, reg.predict(list(test_pairs)))


def _rows(X):
    if sp.issparse(X):
        X = X.tocsr()
        return [X[i] for i in range(X.shape[0])]
    return list(np.asarray(X, dtype=float))
