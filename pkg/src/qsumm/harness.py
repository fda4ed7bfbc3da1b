"""Cross-validation, grid search, target labelling and run-file generation."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from sklearn.exceptions import NotFittedError

from .corpus import AbstractStore, Dataset, Question
from .exceptions import LeakageError, QsummError, SourceError, ValidationError
from .rankers import Summariser
from .rouge import mean_stdev, su4_score
from .svr import Candidate, candidate_pool, label_candidates
from .systems import CandidateSummariser, clone_system
from .textproc import preprocess
from .vecspace import EmbeddingTable

logger = logging.getLogger(__name__)


# -- labelling ---------------------------------------------------------------

class Labels(dict):
    """question id -> labelled candidates; ``skipped`` lists unusable ids."""

    def __init__(self, *args, **kwargs):
        super().__init__(*args, **kwargs)
        self.skipped: list[str] = []


def label_targets(dataset: Dataset, store: AbstractStore, aggregate: str = "max") -> Labels:
    labels = Labels()
    for q in dataset:
        try:
            pool = candidate_pool(q, store, policy="strict")
        except SourceError as exc:
            logger.warning("skipping %s: %s", q.id, exc)
            labels.skipped.append(q.id)
            continue
        labels[q.id] = label_candidates(q, pool, aggregate)
    return labels


# -- folds -------------------------------------------------------------------

@dataclass(frozen=True)
class Fold:
    train_ids: tuple[str, ...]
    test_ids: tuple[str, ...]


def kfold(dataset_or_ids, k: int = 10, seed: int = 0) -> list[Fold]:
    """Shuffle question ids with ``seed`` and cut them into ``k`` test blocks.

    Block sizes differ by at most one, larger blocks first.
    """
    ids = list(dataset_or_ids.ids if isinstance(dataset_or_ids, Dataset) else dataset_or_ids)
    if k < 2:
        raise ValidationError("k must be at least 2")
    if k > len(ids):
        raise ValidationError(f"k={k} exceeds the number of questions ({len(ids)})")
    perm = np.random.default_rng(seed).permutation(len(ids))
    blocks = np.array_split(perm, k)
    folds = []
    for b in blocks:
        test = set(b.tolist())
        folds.append(Fold(
            tuple(ids[i] for i in range(len(ids)) if i not in test),
            tuple(ids[i] for i in sorted(test)),
        ))
    return folds


# -- experiments -------------------------------------------------------------

def _describe(value):
    if isinstance(value, (str, int, float, bool)) or value is None:
        return value
    if isinstance(value, EmbeddingTable):
        return f"EmbeddingTable(n={len(value)}, dim={value.dim})"
    if isinstance(value, AbstractStore):
        return f"AbstractStore(offline={value.offline}, include_title={value.include_title})"
    if isinstance(value, dict):
        return {str(k): _describe(v) for k, v in value.items()}
    return type(value).__name__


def config_snapshot(system: Summariser) -> dict:
    params = system.get_params(deep=False)
    return {k: _describe(v) for k, v in sorted(params.items())}


@dataclass
class ExperimentReport:
    system: str
    seed: int
    config: dict
    fold_f1: list = field(default_factory=list)
    fold_mse: list = field(default_factory=list)
    targets: list = field(default_factory=list, repr=False)
    predictions: list = field(default_factory=list, repr=False)

    @staticmethod
    def _agg(values):
        return mean_stdev(values) if values else (None, None)

    @property
    def mean_f1(self):
        return self._agg(self.fold_f1)[0]

    @property
    def stdev_f1(self):
        return self._agg(self.fold_f1)[1]

    @property
    def mean_mse(self):
        return self._agg(self.fold_mse)[0]

    @property
    def stdev_mse(self):
        return self._agg(self.fold_mse)[1]

    def to_dict(self) -> dict:
        return {
            "system": self.system,
            "seed": self.seed,
            "config": self.config,
            "folds": len(self.fold_f1 or self.fold_mse),
            "f1": {"per_fold": self.fold_f1, "mean": self.mean_f1, "stdev": self.stdev_f1},
            "mse": {"per_fold": self.fold_mse, "mean": self.mean_mse, "stdev": self.stdev_mse},
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def to_table(self) -> str:
        rows = [("metric", "mean", "stdev", "folds")]
        for name, vals, m, s in (("ROUGE-SU4 F1", self.fold_f1, self.mean_f1, self.stdev_f1),
                                 ("MSE", self.fold_mse, self.mean_mse, self.stdev_mse)):
            if vals:
                rows.append((name, f"{m:.4f}" if name != "MSE" else f"{m:.5f}",
                             f"{s:.4f}" if name != "MSE" else f"{s:.5f}", str(len(vals))))
        widths = [max(len(r[i]) for r in rows) for i in range(4)]
        lines = [f"system: {self.system}  seed: {self.seed}"]
        for r in rows:
            lines.append("  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip())
        return "\n".join(lines) + "\n"


def answer_f1(question: Question, answer: str) -> float:
    refs = [preprocess(a) for a in question.ideal_answers]
    return su4_score(preprocess(answer), refs).f1


def _check_leakage(fold: Fold, system: Summariser):
    test = set(fold.test_ids)
    overlap = test & set(fold.train_ids)
    overlap |= test & set(getattr(system, "fitted_ids_", ()))
    if overlap:
        raise LeakageError(f"test questions seen during fitting: {sorted(overlap)}")


def run_experiment(system: Summariser, dataset: Dataset, metrics: str = "both",
                   k: int = 10, seed: int = 0, folds: Sequence[Fold] | None = None,
                   name: str | None = None) -> ExperimentReport:
    """k-fold cross-validation of ``system`` over the questions of ``dataset``.

    Each fold fits a fresh copy of ``system`` on the training questions and
    scores the test questions. ``metrics`` is ``"rouge_f1"``, ``"mse"`` or
    ``"both"``; MSE is only defined for candidate-scoring systems.
    """
    if metrics not in ("rouge_f1", "mse", "both"):
        raise ValidationError(f"unknown metrics {metrics!r}")
    want_mse = metrics in ("mse", "both") and isinstance(system, CandidateSummariser)
    want_f1 = metrics in ("rouge_f1", "both")
    if metrics == "mse" and not want_mse:
        raise ValidationError(f"{type(system).__name__} does not predict candidate scores")
    folds = list(folds) if folds is not None else kfold(dataset, k, seed)
    by_id = {q.id: q for q in dataset}
    report = ExperimentReport(name or type(system).__name__, seed, config_snapshot(system))
    for fold in folds:
        model = clone_system(system)
        _check_leakage(fold, model)
        train = [by_id[i] for i in fold.train_ids]
        test = [by_id[i] for i in fold.test_ids]
        model.fit(train)
        _check_leakage(fold, model)
        if want_f1:
            answers = model.predict(test)
            report.fold_f1.append(float(np.mean([answer_f1(q, a) for q, a in zip(test, answers)])))
        if want_mse:
            sq = []
            for q in test:
                pool = model.labelled_pool(q)
                pred = model.score_candidates(q, pool)
                tgt = [c.target_su4 for c in pool]
                report.targets.extend(tgt)
                report.predictions.extend(float(p) for p in pred)
                sq.extend((np.asarray(tgt) - pred) ** 2)
            report.fold_mse.append(float(np.mean(sq)) if sq else 0.0)
    return report


@dataclass
class GridResult:
    param: str
    rows: list  # (value, mean_f1, stdev_f1, mean_mse, stdev_mse)
    best: object

    def to_tsv(self) -> str:
        out = [f"{self.param}\tmean_f1\tstdev_f1\tmean_mse\tstdev_mse"]
        for row in self.rows:
            out.append("\t".join(_fmt(v) for v in row))
        out.append(f"# best\t{_fmt(self.best)}")
        return "\n".join(out) + "\n"


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, tuple):
        return ",".join(_fmt(x) for x in v)
    return repr(v) if isinstance(v, float) else str(v)


def _pick_best(rows):
    """Smallest mean MSE; falls back to largest mean F1 when MSE is absent."""
    if all(r[3] is not None for r in rows):
        return min(rows, key=lambda r: r[3])[0]
    return max(rows, key=lambda r: r[1])[0]


def grid_search(system: Summariser, axis: str, values, dataset: Dataset,
                metrics: str = "both", k: int = 10, seed: int = 0) -> GridResult:
    """One cross-validated experiment per grid value; best by minimal mean MSE.

    ``axis`` is ``"gamma"`` or ``"dropout,epochs"`` (values are pairs).
    """
    values = list(values)
    if not values:
        raise ValidationError("empty grid")
    names = axis.split(",")
    folds = kfold(dataset, k, seed)
    rows = []
    for v in values:
        setting = dict(zip(names, v if isinstance(v, tuple) else (v,)))
        cell = clone_system(system).set_params(**setting)
        rep = run_experiment(cell, dataset, metrics, folds=folds, seed=seed)
        rows.append((v, rep.mean_f1, rep.stdev_f1, rep.mean_mse, rep.stdev_mse))
    return GridResult(axis, rows, _pick_best(rows))


def grid_search_regressor(estimator, param: str, values, X, y, k: int = 5, seed: int = 0):
    """Cross-validated MSE of a plain regressor over one parameter grid.

    Returns (rows of (value, mean_mse, stdev_mse), best value).
    """
    y = np.asarray(y, dtype=float)
    folds = kfold([str(i) for i in range(len(y))], k, seed)
    rows = []
    for v in values:
        errs = []
        for f in folds:
            tr = [int(i) for i in f.train_ids]
            te = [int(i) for i in f.test_ids]
            est = type(estimator)(**{**estimator.get_params(deep=False), param: v})
            est.fit(X[tr], y[tr])
            d = est.predict(X[te]) - y[te]
            errs.append(float(d @ d / len(d)))
        rows.append((v, *mean_stdev(errs)))
    return rows, min(rows, key=lambda r: r[1])[0]


# -- outputs -----------------------------------------------------------------

def export_scatter(targets, predictions, path, header: dict | None = None) -> None:
    """TSV of (target, prediction) rows, preceded by ``# key=value`` lines."""
    if len(targets) != len(predictions):
        raise ValidationError("targets and predictions differ in length")
    lines = [f"# {k}={v}" for k, v in sorted((header or {}).items())]
    lines.append("target\tprediction")
    lines.extend(f"{float(t)!r}\t{float(p)!r}" for t, p in zip(targets, predictions))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_scatter(path):
    header, rows = {}, []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line.startswith("#"):
            key, _, val = line[1:].strip().partition("=")
            header[key] = val
        elif line and not line.startswith("target"):
            t, p = line.split("\t")
            rows.append((float(t), float(p)))
    return header, rows


def run_json(dataset: Dataset, answers: Sequence[str]) -> str:
    items = [{"id": q.id, "ideal_answer": a} for q, a in zip(dataset, answers)]
    return json.dumps({"questions": items}, indent=2, ensure_ascii=False) + "\n"


def generate_run(system: Summariser, dataset: Dataset, path=None) -> dict:
    """Answer every question of ``dataset``; optionally write the run JSON."""
    try:
        answers = system.predict(list(dataset))
    except NotFittedError as exc:
        raise QsummError(f"{type(system).__name__} has no trained model: {exc}") from exc
    text = run_json(dataset, answers)
    if path is not None:
        Path(path).write_text(text, encoding="utf-8")
    return json.loads(text)
