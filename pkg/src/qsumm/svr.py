"""Regression run: abstract-sentence candidates, hand-built features and an
epsilon-SVR with RBF kernel trained by sequential minimal optimisation."""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import scipy.sparse as sp
from sklearn.base import BaseEstimator, RegressorMixin, TransformerMixin
from sklearn.exceptions import ConvergenceWarning
from sklearn.utils.validation import check_is_fitted

from .corpus import AbstractStore, Question, resolve_sources
from .exceptions import EmptySourcesError, ValidationError
from .rankers import RankedUnit, stable_rank
from .rouge import su4_score
from .textproc import AbstractOrigin, Sentence, preprocess, split_sentences
from .vecspace import EmbeddingTable, TfidfModel, cosine, embed_combine

logger = logging.getLogger(__name__)

FEATURE_NAMES = (
    "cos_q_tfidf", "min_cos_snippets", "cos_q_emb",
    "pw_mean", "pw_median", "pw_max", "pw_min",
    "pw_mean2hi", "pw_mean3hi", "pw_mean2lo", "pw_mean3lo",
    "wpw_mean", "wpw_median", "wpw_max", "wpw_min",
    "wpw_mean2hi", "wpw_mean3hi", "wpw_mean2lo", "wpw_mean3lo",
)
N_SCALARS = len(FEATURE_NAMES)
GAMMA_GRID = (1e-4, 1e-3, 1e-2, 0.1, 1.0, 10.0, 100.0)


# -- candidates --------------------------------------------------------------

@dataclass(frozen=True)
class Candidate:
    sentence: Sentence
    tokens: tuple
    target_su4: float | None = None


def candidate_pool(question: Question, store: AbstractStore, policy: str = "skip",
                   include_title: bool | None = None) -> list[Candidate]:
    """Every sentence of the question's source abstracts, document order first."""
    if include_title is None:
        include_title = store.include_title
    res = resolve_sources(question, store, policy)
    pool = []
    for ref, abstract in res.entries:
        texts = []
        if include_title and abstract.title.strip():
            texts.append(abstract.title.strip())
        texts.extend(split_sentences(abstract.text))
        for i, text in enumerate(texts):
            sent = Sentence(text, AbstractOrigin(ref, i), len(pool))
            pool.append(Candidate(sent, tuple(preprocess(text))))
    if policy == "strict" and not pool:
        raise EmptySourcesError(f"question {question.id!r}: no candidate sentences")
    return pool


def label_candidates(question: Question, pool: Sequence[Candidate],
                     aggregate: str = "max") -> list[Candidate]:
    """Attach the ROUGE-SU4 F1 of each candidate against the ideal answers."""
    if not question.ideal_answers:
        raise ValidationError(f"question {question.id!r}: no ideal answers to label against")
    refs = [preprocess(a) for a in question.ideal_answers]
    return [
        Candidate(c.sentence, c.tokens, su4_score(c.tokens, refs, aggregate).f1)
        for c in pool
    ]


# -- features ----------------------------------------------------------------

def _order_stats(values) -> list[float]:
    if len(values) == 0:
        return [0.0] * 8
    v = np.sort(np.asarray(values, dtype=float))
    return [
        float(v.mean()), float(np.median(v)), float(v[-1]), float(v[0]),
        float(v[-2:].mean()), float(v[-3:].mean()),
        float(v[:2].mean()), float(v[:3].mean()),
    ]


def _unit_rows(M: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(M, axis=1, keepdims=True)
    return np.divide(M, norms, out=np.zeros_like(M), where=norms > 0)


def pairwise_stats(q, c, table: EmbeddingTable, weights: TfidfModel | None = None) -> list[float]:
    """Order statistics of word-to-word cosine similarities.

    Returns ``[mean, median, max, min, mean2hi, mean3hi, mean2lo, mean3lo]``
    over all (question word, candidate word) pairs. Words without an
    embedding are left out. With ``weights`` each word vector is first
    scaled by the word's tf.idf weight in its own sentence.
    """
    qw = [t for t in q if t in table]
    cw = [t for t in c if t in table]
    if not qw or not cw:
        return [0.0] * 8
    Q = np.array([table[t] for t in qw])
    C = np.array([table[t] for t in cw])
    if weights is not None:
        wq, wc = weights.weight_of(q), weights.weight_of(c)
        Q = Q * np.array([wq.get(t, 0.0) for t in qw])[:, None]
        C = C * np.array([wc.get(t, 0.0) for t in cw])[:, None]
    sims = np.clip(_unit_rows(Q) @ _unit_rows(C).T, -1.0, 1.0)
    return _order_stats(sims.ravel())


@dataclass
class FeatureVec:
    tfidf_block: sp.csr_matrix
    scalars: np.ndarray

    def to_row(self) -> sp.csr_matrix:
        return sp.hstack([self.tfidf_block, sp.csr_matrix(self.scalars[None, :])], format="csr")


def extract_features(question: Question, cand: Candidate | Sequence[str],
                     tfidf: TfidfModel, table: EmbeddingTable) -> FeatureVec:
    tokens = list(cand.tokens if isinstance(cand, Candidate) else cand)
    qtok = preprocess(question.body)
    c_vec = tfidf.transform([tokens])
    q_vec = tfidf.transform([qtok])
    if question.snippets:
        s_mat = tfidf.transform([preprocess(s.text) for s in question.snippets])
        min_snip = min(cosine(c_vec, s_mat[i]) for i in range(s_mat.shape[0]))
    else:
        min_snip = 0.0
    scalars = [
        cosine(q_vec, c_vec),
        min_snip,
        cosine(embed_combine(table, qtok, "sum"), embed_combine(table, tokens, "sum")),
    ]
    scalars += pairwise_stats(qtok, tokens, table)
    scalars += pairwise_stats(qtok, tokens, table, weights=tfidf)
    return FeatureVec(c_vec, np.array(scalars))


class FeatureExtractor(TransformerMixin, BaseEstimator):
    """Turns (question, candidate tokens) pairs into kernel-ready rows.

    ``fit`` builds the tf.idf statistics from the question bodies, ideal
    answers and snippets of the training questions. ``transform`` returns a
    sparse matrix: the candidate's tf.idf vector followed by the 19 scalar
    features in :data:`FEATURE_NAMES` order.
    """

    def __init__(self, embeddings: EmbeddingTable | None = None):
        self.embeddings = embeddings

    def fit(self, questions, y=None):
        docs = []
        for q in questions:
            docs.append(preprocess(q.body))
            docs.extend(preprocess(a) for a in q.ideal_answers)
            docs.extend(preprocess(s.text) for s in q.snippets)
        self.tfidf_ = TfidfModel().fit(docs)
        return self

    def features(self, question, tokens) -> FeatureVec:
        check_is_fitted(self, "tfidf_")
        return extract_features(question, tokens, self.tfidf_, self.embeddings)

    def transform(self, pairs) -> sp.csr_matrix:
        check_is_fitted(self, "tfidf_")
        rows = [self.features(q, toks).to_row() for q, toks in pairs]
        if not rows:
            return sp.csr_matrix((0, self.tfidf_.n_features + N_SCALARS))
        return sp.vstack(rows, format="csr")


# -- SMO ---------------------------------------------------------------------

def _as_matrix(X):
    if sp.issparse(X):
        X = sp.csr_matrix(X, dtype=float)
        X.sum_duplicates()
        X.sort_indices()
        data = X.data
    else:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        data = X
    if not np.all(np.isfinite(data)):
        raise ValidationError("non-finite feature value")
    return X


def _row_key(X, i, y):
    if sp.issparse(X):
        s, e = X.indptr[i], X.indptr[i + 1]
        mask = X.data[s:e] != 0
        return (X.indices[s:e][mask].tobytes(), X.data[s:e][mask].tobytes(), float(y).hex())
    return (X[i].tobytes(), float(y).hex())


def _sq_norms(X):
    if sp.issparse(X):
        return np.asarray(X.multiply(X).sum(axis=1)).ravel()
    return np.einsum("ij,ij->i", X, X)


def rbf_kernel(A, B, gamma: float) -> np.ndarray:
    cross = A @ B.T
    cross = cross.toarray() if sp.issparse(cross) else np.asarray(cross)
    d2 = _sq_norms(A)[:, None] + _sq_norms(B)[None, :] - 2.0 * cross
    return np.exp(-gamma * np.maximum(d2, 0.0))


class SMORegressor(RegressorMixin, BaseEstimator):
    """Epsilon-SVR with RBF kernel ``exp(-gamma * ||x - y||^2)``.

    The dual is solved by sequential minimal optimisation over the 2n
    variables (alpha, alpha*), choosing the maximal violating pair at every
    step. Training stops once the violation gap falls below ``tol`` or
    after ``max_iter`` pair updates; in the latter case ``converged_`` is
    False and a :class:`ConvergenceWarning` is issued.

    Training rows are put into a canonical order first, so the fitted model
    does not depend on the order of the input.
    """

    def __init__(self, C=1.0, gamma=0.1, epsilon=0.1, tol=1e-3, max_iter=1_000_000):
        self.C = C
        self.gamma = gamma
        self.epsilon = epsilon
        self.tol = tol
        self.max_iter = max_iter

    def fit(self, X, y):
        X = _as_matrix(X)
        y = np.asarray(y, dtype=float).ravel()
        n = X.shape[0]
        if n != y.shape[0]:
            raise ValidationError("X and y have different lengths")
        if n < 2:
            raise ValidationError("SVR needs at least 2 training points")
        if not np.all(np.isfinite(y)):
            raise ValidationError("non-finite target value")
        if self.gamma <= 0 or self.C <= 0 or self.epsilon < 0:
            raise ValidationError("gamma and C must be > 0, epsilon >= 0")

        order = sorted(range(n), key=lambda i: _row_key(X, i, y[i]))
        X = X[order]
        y = y[order]
        alpha, rho, gap, it = self._solve(X, y)

        coef = alpha[:n] - alpha[n:]
        sv = np.flatnonzero(coef != 0)
        self.support_vectors_ = X[sv]
        self.dual_coef_ = coef[sv]
        self.train_coef_ = coef
        self.intercept_ = -rho
        self.n_iter_ = it
        self.kkt_gap_ = gap
        self.converged_ = gap < self.tol
        self.n_features_in_ = X.shape[1]
        if not self.converged_:
            warnings.warn(
                f"SMO stopped after {it} iterations with KKT gap {gap:.3g}",
                ConvergenceWarning,
            )
        return self

    def _solve(self, X, y):
        n = len(y)
        C, eps = float(self.C), float(self.epsilon)
        sq = _sq_norms(X)
        cache: dict[int, np.ndarray] = {}

        def kcol(i):
            col = cache.get(i)
            if col is None:
                cross = X @ X[i].T
                cross = cross.toarray().ravel() if sp.issparse(cross) else np.asarray(cross).ravel()
                col = np.exp(-self.gamma * np.maximum(sq + sq[i] - 2.0 * cross, 0.0))
                col[i] = 1.0
                if len(cache) > 4096:
                    cache.clear()
                cache[i] = col
            return col

        ys = np.concatenate([np.ones(n), -np.ones(n)])
        alpha = np.zeros(2 * n)
        G = np.concatenate([eps - y, eps + y])

        def qcol(t):
            k = kcol(t % n)
            return ys * ys[t] * np.concatenate([k, k])

        it = 0
        gap = np.inf
        while True:
            v = -ys * G
            up = ((ys > 0) & (alpha < C)) | ((ys < 0) & (alpha > 0))
            low = ((ys > 0) & (alpha > 0)) | ((ys < 0) & (alpha < C))
            vu = np.where(up, v, -np.inf)
            vl = np.where(low, v, np.inf)
            i = int(np.argmax(vu))
            j = int(np.argmin(vl))
            gap = float(vu[i] - vl[j])
            if gap < self.tol or it >= self.max_iter:
                break
            it += 1
            Qi, Qj = qcol(i), qcol(j)
            ai, aj = alpha[i], alpha[j]
            if ys[i] != ys[j]:
                quad = max(Qi[i] + Qj[j] + 2.0 * Qi[j], 1e-12)
                delta = (-G[i] - G[j]) / quad
                diff = ai - aj
                ni, nj = ai + delta, aj + delta
                if diff > 0:
                    if nj < 0:
                        nj, ni = 0.0, diff
                elif ni < 0:
                    ni, nj = 0.0, -diff
                if diff > 0:
                    if ni > C:
                        ni, nj = C, C - diff
                elif nj > C:
                    nj, ni = C, C + diff
            else:
                quad = max(Qi[i] + Qj[j] - 2.0 * Qi[j], 1e-12)
                delta = (G[i] - G[j]) / quad
                total = ai + aj
                ni, nj = ai - delta, aj + delta
                if total > C:
                    if ni > C:
                        ni, nj = C, total - C
                elif nj < 0:
                    nj, ni = 0.0, total
                if total > C:
                    if nj > C:
                        nj, ni = C, total - C
                elif ni < 0:
                    ni, nj = 0.0, total
            alpha[i], alpha[j] = ni, nj
            G += Qi * (ni - ai) + Qj * (nj - aj)

        return alpha, self._rho(alpha, G, ys, C), gap, it

    @staticmethod
    def _rho(alpha, G, ys, C):
        yG = ys * G
        free = (alpha > 0) & (alpha < C)
        if free.any():
            return float(yG[free].mean())
        at_upper = alpha >= C
        # bounds on rho from the variables sitting at a box edge
        ub_mask = (at_upper & (ys < 0)) | (~at_upper & (ys > 0))
        lb_mask = (at_upper & (ys > 0)) | (~at_upper & (ys < 0))
        ub = yG[ub_mask].min() if ub_mask.any() else np.inf
        lb = yG[lb_mask].max() if lb_mask.any() else -np.inf
        return float((ub + lb) / 2.0)

    def decision_function(self, X) -> np.ndarray:
        check_is_fitted(self, "dual_coef_")
        X = _as_matrix(X)
        if self.dual_coef_.size == 0:
            return np.full(X.shape[0], self.intercept_)
        K = rbf_kernel(X, self.support_vectors_, self.gamma)
        return K @ self.dual_coef_ + self.intercept_

    def predict(self, X) -> np.ndarray:
        return self.decision_function(X)

    def kkt_violation(self, X, y) -> float:
        """Largest violation of the epsilon-tube complementarity conditions on (X, y).

        ``X`` and ``y`` must be the training data.
        """
        X = _as_matrix(X)
        y = np.asarray(y, dtype=float).ravel()
        if len(y) != len(self.train_coef_):
            raise ValidationError("kkt_violation expects the training data")
        order = sorted(range(len(y)), key=lambda i: _row_key(X, i, y[i]))
        X, y = X[order], y[order]
        r = y - self.predict(X)
        coef = self.train_coef_
        C, eps = self.C, self.epsilon
        viol = np.zeros(len(y))
        for i, (b, ri) in enumerate(zip(coef, r)):
            if b == 0:
                viol[i] = max(0.0, abs(ri) - eps)
            elif 0 < b < C:
                viol[i] = abs(ri - eps)
            elif b >= C:
                viol[i] = max(0.0, eps - ri)
            elif -C < b < 0:
                viol[i] = abs(ri + eps)
            else:
                viol[i] = max(0.0, ri + eps)
        return float(viol.max())


def train_svr(X, y, gamma=0.1, C=1.0, epsilon=0.1, **kwargs) -> SMORegressor:
    return SMORegressor(C=C, gamma=gamma, epsilon=epsilon, **kwargs).fit(X, y)


def predict_svr(model: SMORegressor, X) -> np.ndarray:
    return model.predict(X)


# -- run ---------------------------------------------------------------------

def score_question(pool: Sequence[Candidate], scores) -> list[RankedUnit]:
    units = [RankedUnit(c.sentence.text, float(s), c.sentence.origin) for c, s in zip(pool, scores)]
    return stable_rank(units)
