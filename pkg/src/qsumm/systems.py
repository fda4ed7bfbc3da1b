"""Summarisers that score abstract sentences with a learned regressor."""

from __future__ import annotations

import hashlib
import json

import numpy as np
import scipy.sparse as sp
from sklearn.utils.validation import check_is_fitted

from . import nnr
from .exceptions import DataFormatError, ValidationError
from .rankers import DEFAULT_N, RankedUnit, SimpleSummariser, Summariser, TrivialSummariser
from .svr import Candidate, FeatureExtractor, SMORegressor, candidate_pool, label_candidates, score_question
from .textproc import preprocess
from .vecspace import EmbeddingTable, SvdModel, TfidfModel

SVR_MAGIC = "QSUMM-SVR"
SVR_VERSION = 1


class CandidateSummariser(Summariser):
    """Base for runs that rank every abstract sentence by a predicted SU4.

    Subclasses implement ``_fit_regressor(questions, pools)`` and
    ``_predict(question, pool)``. Pools are resolved through ``store`` and
    memoised per question id.
    """

    def _pool(self, question) -> list[Candidate]:
        memo = self.__dict__.setdefault("_pools", {})
        if question.id not in memo:
            memo[question.id] = candidate_pool(question, self.store, self.policy)
        return memo[question.id]

    def labelled_pool(self, question) -> list[Candidate]:
        return label_candidates(question, self._pool(question))

    def fit(self, questions, y=None):
        questions = list(questions)
        self._record_fit(questions)
        pools = {q.id: self.labelled_pool(q) for q in questions}
        if sum(len(p) for p in pools.values()) < 2:
            raise ValidationError("fewer than 2 labelled candidates to train on")
        self._fit_regressor(questions, pools)
        return self

    def score_candidates(self, question, pool) -> np.ndarray:
        if not pool:
            return np.zeros(0)
        return np.asarray(self._predict(question, pool), dtype=float)

    def rank(self, question) -> list[RankedUnit]:
        pool = self._pool(question)
        return score_question(pool, self.score_candidates(question, pool))


class SVRSummariser(CandidateSummariser):
    def __init__(self, store=None, embeddings=None, gamma=0.1, C=1.0, epsilon=0.1,
                 tol=1e-3, max_iter=1_000_000, policy="skip", answer_config=None):
        self.store = store
        self.embeddings = embeddings
        self.gamma = gamma
        self.C = C
        self.epsilon = epsilon
        self.tol = tol
        self.max_iter = max_iter
        self.policy = policy
        self.answer_config = answer_config

    def _fit_regressor(self, questions, pools):
        self.features_ = FeatureExtractor(self.embeddings).fit(questions)
        pairs = [(q, c.tokens) for q in questions for c in pools[q.id]]
        targets = [c.target_su4 for q in questions for c in pools[q.id]]
        self.model_ = SMORegressor(
            C=self.C, gamma=self.gamma, epsilon=self.epsilon, tol=self.tol, max_iter=self.max_iter
        ).fit(self.features_.transform(pairs), targets)

    def _predict(self, question, pool):
        check_is_fitted(self, "model_")
        return self.model_.predict(self.features_.transform([(question, c.tokens) for c in pool]))


class NNRSummariser(CandidateSummariser):
    """Neural regressor over (question, sentence) token sequences."""

    def __init__(self, store=None, embeddings=None, reduction="mean", similarity="sim",
                 hidden=50, dropout=0.0, epochs=10, learning_rate=1e-3, batch_size=128,
                 seed=0, policy="skip", answer_config=None):
        self.store = store
        self.embeddings = embeddings
        self.reduction = reduction
        self.similarity = similarity
        self.hidden = hidden
        self.dropout = dropout
        self.epochs = epochs
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.seed = seed
        self.policy = policy
        self.answer_config = answer_config

    def _fit_regressor(self, questions, pools):
        X, y = [], []
        for q in questions:
            qt = preprocess(q.body)
            for c in pools[q.id]:
                X.append((qt, list(c.tokens)))
                y.append(c.target_su4)
        self.model_ = nnr.NeuralRegressor(
            self.embeddings, self.reduction, self.similarity, self.hidden,
            dropout=self.dropout, epochs=self.epochs, learning_rate=self.learning_rate,
            batch_size=self.batch_size, seed=self.seed,
        ).fit(X, y)

    def _predict(self, question, pool):
        check_is_fitted(self, "model_")
        qt = preprocess(question.body)
        return self.model_.predict([(qt, list(c.tokens)) for c in pool])


class TfidfNNSummariser(CandidateSummariser):
    """tf.idf of the candidate into one relu layer and a linear unit."""

    def __init__(self, store=None, hidden=50, dropout=0.0, epochs=10, learning_rate=1e-3,
                 batch_size=128, seed=0, policy="skip", answer_config=None):
        self.store = store
        self.hidden = hidden
        self.dropout = dropout
        self.epochs = epochs
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.seed = seed
        self.policy = policy
        self.answer_config = answer_config

    def _fit_regressor(self, questions, pools):
        self.tfidf_ = FeatureExtractor().fit(questions).tfidf_
        toks = [c.tokens for q in questions for c in pools[q.id]]
        y = [c.target_su4 for q in questions for c in pools[q.id]]
        X = self.tfidf_.transform(toks)
        self.model_ = nnr.VectorRegressor(
            "none", self.hidden, self.dropout, self.epochs, self.learning_rate,
            self.batch_size, self.seed,
        ).fit([(X[i], X[i]) for i in range(X.shape[0])], y)

    def _predict(self, question, pool):
        check_is_fitted(self, "model_")
        X = self.tfidf_.transform([c.tokens for c in pool])
        return self.model_.predict([(X[i], X[i]) for i in range(X.shape[0])])


class SVDNNSummariser(CandidateSummariser):
    """SVD projections of question and sentence into the similarity + head stack."""

    def __init__(self, store=None, n_components=100, similarity="sim", hidden=50,
                 dropout=0.0, epochs=10, learning_rate=1e-3, batch_size=128, seed=0,
                 policy="skip", answer_config=None):
        self.store = store
        self.n_components = n_components
        self.similarity = similarity
        self.hidden = hidden
        self.dropout = dropout
        self.epochs = epochs
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.seed = seed
        self.policy = policy
        self.answer_config = answer_config

    def _vectors(self, question, pool):
        q = self.svd_.transform(self.tfidf_.transform([preprocess(question.body)]))[0]
        S = self.svd_.transform(self.tfidf_.transform([c.tokens for c in pool]))
        return [(q, s) for s in S]

    def _fit_regressor(self, questions, pools):
        simple = SimpleSummariser("tfidf-svd", n_components=self.n_components,
                                  random_state=self.seed).fit(questions)
        self.tfidf_, self.svd_ = simple.space_.tfidf, simple.space_.svd
        X, y = [], []
        for q in questions:
            X.extend(self._vectors(q, pools[q.id]))
            y.extend(c.target_su4 for c in pools[q.id])
        self.model_ = nnr.VectorRegressor(
            self.similarity, self.hidden, self.dropout, self.epochs, self.learning_rate,
            self.batch_size, self.seed,
        ).fit(X, y)

    def _predict(self, question, pool):
        check_is_fitted(self, "model_")
        return self.model_.predict(self._vectors(question, pool))


SYSTEMS = {
    "trivial": TrivialSummariser,
    "simple-word2vec": lambda **kw: SimpleSummariser("word2vec", **kw),
    "simple-tfidf-svd": lambda **kw: SimpleSummariser("tfidf-svd", **kw),
    "svr": SVRSummariser,
    "nnr": NNRSummariser,
    "tfidf-nn": TfidfNNSummariser,
    "svd-nn": SVDNNSummariser,
}


def make_system(name: str, **params) -> Summariser:
    """Instantiate a run by name, dropping parameters it does not take."""
    try:
        factory = SYSTEMS[name]
    except KeyError:
        raise ValidationError(f"unknown system {name!r}; choose from {sorted(SYSTEMS)}") from None
    probe = factory()
    accepted = probe.get_params(deep=False)
    return factory(**{k: v for k, v in params.items() if k in accepted and k != "space"})


def clone_system(system: Summariser) -> Summariser:
    """Fresh unfitted copy sharing the (read-only) store and embeddings."""
    return type(system)(**system.get_params(deep=False))


# -- SVR persistence ---------------------------------------------------------

def embeddings_digest(table: EmbeddingTable | None) -> str:
    if table is None:
        return ""
    h = hashlib.sha256()
    h.update("\n".join(table.words).encode("utf-8"))
    h.update(np.ascontiguousarray(table.vectors).tobytes())
    return h.hexdigest()


def save_svr(summariser: SVRSummariser, path) -> None:
    check_is_fitted(summariser, "model_")
    m = summariser.model_
    sv = sp.csr_matrix(m.support_vectors_)
    tfidf = summariser.features_.tfidf_
    meta = {
        "magic": SVR_MAGIC,
        "version": SVR_VERSION,
        "gamma": m.gamma, "C": m.C, "epsilon": m.epsilon, "tol": m.tol,
        "intercept": m.intercept_,
        "n_features": m.n_features_in_,
        "vocabulary": list(tfidf.vocabulary_),
        "n_docs": tfidf.n_docs_,
        "embeddings_sha256": embeddings_digest(summariser.embeddings),
    }
    with open(path, "wb") as fh:
        np.savez(
            fh, __meta__=np.array(json.dumps(meta)), dual_coef=m.dual_coef_,
            sv_data=sv.data, sv_indices=sv.indices, sv_indptr=sv.indptr, idf=tfidf.idf_,
        )


def load_svr(path, store=None, embeddings=None, **params) -> SVRSummariser:
    try:
        with np.load(path, allow_pickle=False) as z:
            meta = json.loads(str(z["__meta__"]))
            arrays = {k: z[k] for k in z.files}
    except (OSError, ValueError, KeyError) as exc:
        raise DataFormatError(f"{path}: not a model container ({exc})") from exc
    if meta.get("magic") != SVR_MAGIC:
        raise DataFormatError(f"{path}: not an SVR model")
    if meta.get("version") != SVR_VERSION:
        raise DataFormatError(f"{path}: unsupported model version {meta.get('version')}")
    if embeddings is not None and embeddings_digest(embeddings) != meta["embeddings_sha256"]:
        raise ValidationError(f"{path}: model was trained with different embeddings")

    tfidf = TfidfModel()
    tfidf.vocabulary_ = {t: i for i, t in enumerate(meta["vocabulary"])}
    tfidf.idf_ = arrays["idf"]
    tfidf.n_docs_ = meta["n_docs"]
    model = SMORegressor(C=meta["C"], gamma=meta["gamma"], epsilon=meta["epsilon"], tol=meta["tol"])
    model.support_vectors_ = sp.csr_matrix(
        (arrays["sv_data"], arrays["sv_indices"], arrays["sv_indptr"]),
        shape=(len(arrays["dual_coef"]), meta["n_features"]),
    )
    model.dual_coef_ = arrays["dual_coef"]
    model.intercept_ = meta["intercept"]
    model.n_features_in_ = meta["n_features"]
    s = SVRSummariser(store=store, embeddings=embeddings, gamma=meta["gamma"], C=meta["C"],
                      epsilon=meta["epsilon"], tol=meta["tol"], **params)
    s.features_ = FeatureExtractor(embeddings)
    s.features_.tfidf_ = tfidf
    s.model_ = model
    s.fitted_ids_ = frozenset()
    return s


__all__ = [
    "CandidateSummariser", "SVRSummariser", "NNRSummariser", "TfidfNNSummariser",
    "SVDNNSummariser", "TrivialSummariser", "SimpleSummariser", "SYSTEMS", "make_system",
    "clone_system", "save_svr", "load_svr", "DEFAULT_N",
]
