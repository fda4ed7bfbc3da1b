"""Snippet rankers for the trivial and simple runs, and answer assembly."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .corpus import Question, QuestionType
from .textproc import AbstractOrigin, SnippetOrigin, preprocess
from .vecspace import EmbeddingTable, SvdModel, TfidfModel, cosine, embed_combine, project

logger = logging.getLogger(__name__)

DEFAULT_N = {
    QuestionType.SUMMARY: 6,
    QuestionType.FACTOID: 2,
    QuestionType.YESNO: 2,
    QuestionType.LIST: 3,
}


@dataclass(frozen=True)
class RankedUnit:
    text: str
    score: float
    source: SnippetOrigin | AbstractOrigin


@dataclass(frozen=True)
class AnswerConfig:
    n_by_type: dict = field(default_factory=lambda: dict(DEFAULT_N))

    def __post_init__(self):
        for qt, n in self.n_by_type.items():
            if n < 1:
                raise ValueError(f"n for {qt} must be >= 1")


def n_for_type(cfg: AnswerConfig, qtype: QuestionType) -> int:
    return cfg.n_by_type[QuestionType(qtype)]


def stable_rank(units: Sequence[RankedUnit], tie_digits: int | None = None) -> list[RankedUnit]:
    """Sort by score descending; equal scores keep their input order.

    With ``tie_digits`` scores are compared after rounding, so values that
    differ only by floating-point noise count as ties.
    """
    if tie_digits is None:
        return sorted(units, key=lambda u: -u.score)
    return sorted(units, key=lambda u: -round(u.score, tie_digits))


def rank_trivial(question: Question) -> list[RankedUnit]:
    return [RankedUnit(s.text, -float(s.rank), SnippetOrigin(s.rank)) for s in question.snippets]


class TfidfSvdSpace:
    def __init__(self, tfidf: TfidfModel, svd: SvdModel):
        self.tfidf = tfidf
        self.svd = svd

    def vector(self, tokens) -> np.ndarray:
        return project(self.svd, self.tfidf.transform([tokens]))


class Word2VecSpace:
    def __init__(self, table: EmbeddingTable, mode: str = "sum"):
        self.table = table
        self.mode = mode

    def vector(self, tokens) -> np.ndarray:
        return embed_combine(self.table, tokens, self.mode)


def rank_simple(question: Question, space) -> list[RankedUnit]:
    qvec = space.vector(preprocess(question.body))
    units = [
        RankedUnit(s.text, cosine(qvec, space.vector(preprocess(s.text))), SnippetOrigin(s.rank))
        for s in question.snippets
    ]
    return stable_rank(units, tie_digits=12)


def assemble_answer(ranked: Sequence[RankedUnit], question: Question,
                    cfg: AnswerConfig | None = None) -> str:
    """Join the top-n unit texts with single spaces, in rank order."""
    cfg = cfg or AnswerConfig()
    if not ranked and question.snippets:
        raise RuntimeError(f"question {question.id!r}: ranker returned no units")
    n = n_for_type(cfg, question.qtype)
    return " ".join(u.text for u in list(ranked)[:n])


class Summariser(BaseEstimator):
    """Common fit/rank/predict surface for every run.

    ``fit`` takes a sequence of training questions; ``predict`` returns one
    ideal-answer string per question. ``fitted_ids_`` records which
    question ids were seen while fitting.
    """

    answer_config = None

    def _record_fit(self, questions):
        self.fitted_ids_ = frozenset(q.id for q in questions)

    def rank(self, question: Question) -> list[RankedUnit]:
        raise NotImplementedError

    def predict(self, questions) -> list[str]:
        cfg = self.answer_config or AnswerConfig()
        return [assemble_answer(self.rank(q), q, cfg) for q in questions]


class TrivialSummariser(Summariser):
    def __init__(self, answer_config=None):
        self.answer_config = answer_config

    def fit(self, questions=(), y=None):
        self._record_fit(questions)
        return self

    def rank(self, question):
        return rank_trivial(question)


class SimpleSummariser(Summariser):
    """Select the snippets most similar to the question.

    ``space="tfidf-svd"`` fits tf.idf and a truncated SVD on the training
    questions and their ideal answers. ``space="word2vec"`` sums the word
    vectors in ``embeddings`` and needs no fitting.
    """

    def __init__(self, space="word2vec", embeddings=None, n_components=200,
                 random_state=0, answer_config=None):
        self.space = space
        self.embeddings = embeddings
        self.n_components = n_components
        self.random_state = random_state
        self.answer_config = answer_config

    def fit(self, questions=(), y=None):
        questions = list(questions)
        self._record_fit(questions)
        if self.space == "word2vec":
            if self.embeddings is None:
                raise ValueError("word2vec space needs an embedding table")
            self.space_ = Word2VecSpace(self.embeddings, "sum")
        elif self.space == "tfidf-svd":
            docs = []
            for q in questions:
                docs.append(preprocess(q.body))
                docs.extend(preprocess(a) for a in q.ideal_answers)
            tfidf = TfidfModel().fit(docs)
            X = tfidf.transform(docs)
            k = min(self.n_components, *X.shape)
            if k < self.n_components:
                logger.warning("SVD components reduced from %d to %d (corpus too small)",
                               self.n_components, k)
            svd = SvdModel(n_components=k, random_state=self.random_state).fit(X)
            self.space_ = TfidfSvdSpace(tfidf, svd)
        else:
            raise ValueError(f"unknown space {self.space!r}")
        return self

    def rank(self, question):
        check_is_fitted(self, "space_")
        return rank_simple(question, self.space_)
