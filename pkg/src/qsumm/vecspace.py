"""tf.idf, truncated SVD and word-embedding vector spaces."""

from __future__ import annotations

import logging
from collections import Counter
from pathlib import Path
from typing import Sequence

import numpy as np
import scipy.sparse as sp
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .exceptions import DataFormatError, ValidationError

logger = logging.getLogger(__name__)

TokenSeq = Sequence[str]


def _as_token_docs(docs) -> list[list[str]]:
    if isinstance(docs, str):
        raise TypeError("expected a sequence of token sequences, got a string")
    out = []
    for d in docs:
        if isinstance(d, str):
            raise TypeError("documents must be token sequences, not raw strings")
        out.append(list(d))
    return out


class TfidfModel(TransformerMixin, BaseEstimator):
    """Smoothed tf.idf over pre-tokenised documents.

    ``idf(t) = ln((1 + N) / (1 + df_t)) + 1``; rows are raw counts times
    idf, l2-normalised. Out-of-vocabulary tokens are ignored, so a document
    with no known token maps to the zero row.
    """

    def fit(self, docs, y=None):
        docs = _as_token_docs(docs)
        if not docs:
            raise ValidationError("cannot fit tf.idf on zero documents")
        df = Counter()
        vocabulary = {}
        for doc in docs:
            for tok in doc:
                if tok not in vocabulary:
                    vocabulary[tok] = len(vocabulary)
            df.update(set(doc))
        if not vocabulary:
            raise ValidationError("empty vocabulary: every document is empty")
        n = len(docs)
        dfs = np.array([df[t] for t in vocabulary], dtype=float)
        self.vocabulary_ = vocabulary
        self.idf_ = np.log((1.0 + n) / (1.0 + dfs)) + 1.0
        self.n_docs_ = n
        return self

    @property
    def n_features(self) -> int:
        check_is_fitted(self, "vocabulary_")
        return len(self.vocabulary_)

    def transform(self, docs) -> sp.csr_matrix:
        check_is_fitted(self, "vocabulary_")
        docs = _as_token_docs(docs)
        indptr = [0]
        indices: list[int] = []
        data: list[float] = []
        for doc in docs:
            counts = Counter(self.vocabulary_[t] for t in doc if t in self.vocabulary_)
            cols = sorted(counts)
            vals = np.array([counts[c] for c in cols], dtype=float) * self.idf_[cols]
            norm = np.sqrt(np.dot(vals, vals))
            if norm > 0:
                vals = vals / norm
            indices.extend(cols)
            data.extend(vals.tolist())
            indptr.append(len(indices))
        return sp.csr_matrix(
            (np.array(data, dtype=float), np.array(indices, dtype=np.int64), np.array(indptr)),
            shape=(len(docs), len(self.vocabulary_)),
        )

    def weight_of(self, doc: TokenSeq) -> dict[str, float]:
        """tf.idf weight of each in-vocabulary token within ``doc``."""
        row = self.transform([doc])
        inv = {self.vocabulary_[t]: t for t in set(doc) if t in self.vocabulary_}
        return {inv[i]: v for i, v in zip(row.indices, row.data)}


def fit_tfidf(docs) -> TfidfModel:
    return TfidfModel().fit(docs)


def tfidf_vector(model: TfidfModel, doc: TokenSeq) -> sp.csr_matrix:
    return model.transform([doc])


class SvdModel(TransformerMixin, BaseEstimator):
    """Truncated SVD of a (sparse) document matrix.

    Uses a randomized range finder with ``n_power_iter`` QR-normalised power
    iterations. When ``k + n_oversamples`` already covers the smaller matrix
    dimension the decomposition is computed densely, which is exact.
    ``basis_`` is the V x k matrix whose columns span the top-k right
    singular subspace.
    """

    def __init__(self, n_components=200, n_oversamples=10, n_power_iter=4,
                 tol=1e-10, random_state=0):
        self.n_components = n_components
        self.n_oversamples = n_oversamples
        self.n_power_iter = n_power_iter
        self.tol = tol
        self.random_state = random_state

    def fit(self, X, y=None):
        X = sp.csr_matrix(X, dtype=float) if sp.issparse(X) else np.asarray(X, dtype=float)
        n, v = X.shape
        k = self.n_components
        if k < 1 or k > min(n, v):
            raise ValidationError(
                f"n_components={k} must be in [1, min(n_docs, n_features)={min(n, v)}]"
            )
        if k + self.n_oversamples >= min(n, v):
            dense = X.toarray() if sp.issparse(X) else X
            _, s, vt = np.linalg.svd(dense, full_matrices=False)
            basis = vt[:k].T
            self.converged_ = True
        else:
            basis, s = self._randomized(X, k)
        # sign convention: largest-magnitude entry of each column positive
        idx = np.argmax(np.abs(basis), axis=0)
        signs = np.sign(basis[idx, np.arange(basis.shape[1])])
        signs[signs == 0] = 1.0
        self.basis_ = basis * signs
        self.singular_values_ = s[:k]
        self.n_features_in_ = v
        return self

    def _randomized(self, X, k):
        rng = np.random.default_rng(self.random_state)
        n, v = X.shape
        p = k + self.n_oversamples
        # range finder on X^T, since we want right singular vectors
        Q, _ = np.linalg.qr(X.T @ rng.standard_normal((n, p)))
        prev = None
        self.converged_ = False
        for _ in range(self.n_power_iter):
            Q, _ = np.linalg.qr(X @ Q)
            Q, _ = np.linalg.qr(X.T @ Q)
            if prev is not None:
                # residual of the leading subspace between iterations
                resid = np.linalg.norm(Q[:, :k] - prev @ (prev.T @ Q[:, :k]))
                if resid < self.tol:
                    self.converged_ = True
                    break
            prev = Q[:, :k]
        B = np.asarray(X @ Q)
        _, s, wt = np.linalg.svd(B, full_matrices=False)
        return Q @ wt[:k].T, s

    def transform(self, X):
        check_is_fitted(self, "basis_")
        out = X @ self.basis_
        return np.asarray(out)


def fit_svd(vectors, k: int, random_state: int = 0) -> SvdModel:
    return SvdModel(n_components=k, random_state=random_state).fit(vectors)


def project(model: SvdModel, v) -> np.ndarray:
    """Project one vector (sparse row or dense 1-d) onto the SVD basis."""
    if sp.issparse(v):
        return np.asarray(v @ model.basis_).ravel()
    return np.asarray(v, dtype=float) @ model.basis_


class EmbeddingTable:
    """Read-only word vectors. ``vectors`` is a (n_words, dim) array."""

    def __init__(self, words: Sequence[str], vectors):
        vectors = np.array(vectors, dtype=float)
        if vectors.ndim != 2 or vectors.shape[0] != len(words):
            raise ValueError("vectors must be (len(words), dim)")
        vectors.setflags(write=False)
        self.index = {w: i for i, w in enumerate(words)}
        self.words = list(words)
        self.vectors = vectors
        self.dim = vectors.shape[1]

    def __len__(self):
        return len(self.index)

    def __contains__(self, word):
        return word in self.index

    def __getitem__(self, word) -> np.ndarray:
        return self.vectors[self.index[word]]

    def get(self, word, default=None):
        i = self.index.get(word)
        return default if i is None else self.vectors[i]

    @classmethod
    def from_dict(cls, mapping: dict) -> "EmbeddingTable":
        words = list(mapping)
        return cls(words, np.array([mapping[w] for w in words], dtype=float))

    def scaled(self, factor: float) -> "EmbeddingTable":
        return EmbeddingTable(self.words, self.vectors * factor)


def load_embeddings(path, expected_dim: int | None = None) -> EmbeddingTable:
    """Read word2vec text format (optional ``<count> <dim>`` header line).

    Duplicate words keep the last vector; the number of duplicates is
    logged as a warning.
    """
    path = Path(path)
    vectors: dict[str, np.ndarray] = {}
    dups = 0
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.rstrip("\n").split(" ")
            parts = [p for p in parts if p]
            if not parts:
                continue
            if lineno == 1 and len(parts) == 2 and all(p.isdigit() for p in parts):
                if expected_dim is None:
                    expected_dim = int(parts[1])
                continue
            word, vals = parts[0], parts[1:]
            if expected_dim is None:
                expected_dim = len(vals)
            if len(vals) != expected_dim:
                raise DataFormatError(
                    f"{path}:{lineno}: expected {expected_dim} values, got {len(vals)}"
                )
            try:
                vec = np.array([float(x) for x in vals])
            except ValueError as exc:
                raise DataFormatError(f"{path}:{lineno}: {exc}") from exc
            if word in vectors:
                dups += 1
            vectors[word] = vec
    if dups:
        logger.warning("%s: %d duplicate words, last occurrence kept", path, dups)
    table = EmbeddingTable.from_dict(vectors) if vectors else EmbeddingTable([], np.zeros((0, expected_dim or 0)))
    table.duplicates = dups
    return table


def embed_combine(table: EmbeddingTable, doc: TokenSeq, mode: str = "sum") -> np.ndarray:
    """Sum or mean of the word vectors of ``doc``; OOV tokens are skipped.

    The mean divides by the number of in-vocabulary tokens.
    """
    if mode not in ("sum", "mean"):
        raise ValueError(f"mode must be 'sum' or 'mean', not {mode!r}")
    # sorted so that any permutation of doc gives a bitwise-identical result
    rows = sorted(table.index[t] for t in doc if t in table.index)
    if not rows:
        return np.zeros(table.dim)
    total = table.vectors[rows].sum(axis=0)
    return total / len(rows) if mode == "mean" else total


def _rescaled(v):
    # cosine is scale invariant; dividing by the largest magnitude keeps the
    # squared norms clear of underflow and overflow
    peak = abs(v).max() if v.shape[-1] else 0.0
    return v / peak if peak > 0 else v


def cosine(a, b) -> float:
    """Cosine similarity; 0 when either vector has zero norm."""
    if sp.issparse(a) or sp.issparse(b):
        a = sp.csr_matrix(a) if sp.issparse(a) else sp.csr_matrix(np.asarray(a).reshape(1, -1))
        b = sp.csr_matrix(b) if sp.issparse(b) else sp.csr_matrix(np.asarray(b).reshape(1, -1))
        if a.shape != b.shape:
            raise ValidationError(f"dimension mismatch: {a.shape} vs {b.shape}")
        a, b = _rescaled(a), _rescaled(b)
        dot = float(a.multiply(b).sum())
        na = float(np.sqrt(a.multiply(a).sum()))
        nb = float(np.sqrt(b.multiply(b).sum()))
    else:
        a = np.asarray(a, dtype=float).ravel()
        b = np.asarray(b, dtype=float).ravel()
        if a.shape != b.shape:
            raise ValidationError(f"dimension mismatch: {a.shape} vs {b.shape}")
        a, b = _rescaled(a), _rescaled(b)
        dot = float(a @ b)
        na = float(np.sqrt(a @ a))
        nb = float(np.sqrt(b @ b))
    if na == 0.0 or nb == 0.0:
        return 0.0
    return max(-1.0, min(1.0, dot / (na * nb)))
