import json

import numpy as np
import pytest

from conftest import make_toy_corpus
from qsumm.corpus import Dataset, Question, QuestionType, Snippet, load_dataset
from qsumm.exceptions import LeakageError, QsummError, ValidationError
from qsumm.harness import (
    Fold,
    answer_f1,
    export_scatter,
    generate_run,
    grid_search,
    grid_search_regressor,
    kfold,
    label_targets,
    read_scatter,
    run_experiment,
)
from qsumm.rankers import SimpleSummariser, TrivialSummariser
from qsumm.rouge import mean_stdev, su4_score
from qsumm.svr import SMORegressor
from qsumm.systems import (
    NNRSummariser,
    SVDNNSummariser,
    SVRSummariser,
    TfidfNNSummariser,
    load_svr,
    make_system,
    save_svr,
)
from qsumm.textproc import preprocess


# -- labelling ---------------------------------------------------------------

def test_label_targets(toy, tmp_path):
    ds, store, _ = toy
    labels = label_targets(ds, store)
    assert set(labels) == set(ds.ids) and labels.skipped == []
    for q in ds:
        pool = labels[q.id]
        assert len(pool) == 8  # 2 titles + 2 x 3 sentences
        assert all(0.0 <= c.target_su4 <= 1.0 for c in pool)
        refs = [preprocess(a) for a in q.ideal_answers]
        assert [c.target_su4 for c in pool] == [su4_score(c.tokens, refs).f1 for c in pool]
    missing = Question("gone", "b", QuestionType.LIST, document_refs=("nowhere",), ideal_answers=("x",))
    labels = label_targets(Dataset((missing,)), store)
    assert labels.skipped == ["gone"] and "gone" not in labels


def test_label_two_references(tmp_path):
    from qsumm.corpus import Abstract, AbstractStore

    store = AbstractStore(tmp_path / "c", offline=True, include_title=False)
    store.put("d", Abstract("", "A b c. Zzz."))
    q = Question("q", "b", QuestionType.SUMMARY, document_refs=("d",), ideal_answers=("a c", "x y"))
    pool = label_targets(Dataset((q,)), store)["q"]
    # [a b c] vs [a c]: 3 matches of 6 candidate and 3 reference units
    assert pool[0].target_su4 == pytest.approx(2 / 3, abs=1e-15)
    assert pool[1].target_su4 == 0.0


# -- folds -------------------------------------------------------------------

def test_kfold_sizes_and_cover():
    ids = [f"q{i}" for i in range(23)]
    folds = kfold(ids, 10, seed=3)
    assert sorted(len(f.test_ids) for f in folds) == [2] * 7 + [3] * 3
    assert [len(f.test_ids) for f in folds] == [3, 3, 3] + [2] * 7
    assert sorted(i for f in folds for i in f.test_ids) == sorted(ids)
    for f in folds:
        assert not set(f.train_ids) & set(f.test_ids)
        assert set(f.train_ids) | set(f.test_ids) == set(ids)
    assert kfold(ids, 10, seed=3) == folds
    assert kfold(ids, 10, seed=4) != folds


def test_kfold_singletons_and_errors():
    folds = kfold([str(i) for i in range(10)], 10)
    assert all(len(f.test_ids) == 1 for f in folds)
    with pytest.raises(ValidationError):
        kfold(["a", "b"], 3)


# -- experiments -------------------------------------------------------------

def echo_dataset(n=10):
    """Ideal answer = the first n snippets verbatim, so trivial scores 1."""
    qs = []
    types = list(QuestionType)
    for i in range(n):
        qt = types[i % 4]
        snips = tuple(Snippet(f"Sentence {i} number {k} here.", "d", k) for k in range(7))
        nsel = {"summary": 6, "factoid": 2, "yesno": 2, "list": 3}[qt.value]
        ideal = " ".join(s.text for s in snips[:nsel])
        qs.append(Question(f"e{i}", f"Question {i}?", qt, snippets=snips, ideal_answers=(ideal,)))
    return Dataset(tuple(qs), "echo")


def test_trivial_cv_perfect():
    rep = run_experiment(TrivialSummariser(), echo_dataset(), metrics="rouge_f1", k=5)
    assert rep.mean_f1 == 1.0 and rep.stdev_f1 == 0.0 and len(rep.fold_f1) == 5
    with pytest.raises(ValidationError):
        run_experiment(TrivialSummariser(), echo_dataset(), metrics="mse", k=5)


def test_report_aggregation_and_determinism(toy):
    ds, store, table = toy
    sys_ = SVRSummariser(store=store, embeddings=table)
    a = run_experiment(sys_, ds, k=4, seed=1, name="svr")
    b = run_experiment(sys_, ds, k=4, seed=1, name="svr")
    assert a.to_json() == b.to_json()
    m, s = mean_stdev(a.fold_f1)
    assert abs(a.mean_f1 - m) < 1e-12 and abs(a.stdev_f1 - s) < 1e-12
    d = json.loads(a.to_json())
    assert d["mse"]["per_fold"] == a.fold_mse and d["folds"] == 4
    assert d["config"]["embeddings"].startswith("EmbeddingTable")
    assert len(a.targets) == len(a.predictions) == 8 * len(ds)
    assert "ROUGE-SU4 F1" in a.to_table() and "MSE" in a.to_table()


def test_perfect_predictor_mse_zero(toy):
    ds, store, _ = toy

    class Oracle(SVRSummariser):
        def _fit_regressor(self, questions, pools):
            self.model_ = True

        def _predict(self, question, pool):
            return [c.target_su4 for c in self.labelled_pool(question)]

    rep = run_experiment(Oracle(store=store), ds, metrics="mse", k=3)
    assert rep.fold_mse == [0.0, 0.0, 0.0]


class Leaky(TrivialSummariser):
    def fit(self, questions=(), y=None):
        super().fit(questions)
        self.fitted_ids_ = self.fitted_ids_ | {"e0", "e1", "e2", "e3", "e4", "e5"}
        return self


def test_leakage_guard():
    ds = echo_dataset()
    with pytest.raises(LeakageError):
        run_experiment(Leaky(), ds, k=5)
    bad = [Fold(("e0", "e1"), ("e1", "e2"))]
    with pytest.raises(LeakageError):
        run_experiment(TrivialSummariser(), ds, folds=bad)


def test_fold_models_use_train_text_only(toy):
    ds, store, table = toy
    fold = kfold(ds, 4, seed=0)[0]
    train = [q for q in ds if q.id in fold.train_ids]
    s = SimpleSummariser("tfidf-svd", n_components=5).fit(train)
    again = SimpleSummariser("tfidf-svd", n_components=5).fit(train)
    np.testing.assert_array_equal(s.space_.svd.basis_, again.space_.svd.basis_)
    train_words = {t for q in train for d in [q.body, *q.ideal_answers] for t in preprocess(d)}
    assert set(s.space_.tfidf.vocabulary_) == train_words
    assert s.fitted_ids_ == set(fold.train_ids)


@pytest.mark.parametrize("factory", [
    lambda st, tb: NNRSummariser(store=st, embeddings=tb, epochs=2),
    lambda st, tb: NNRSummariser(store=st, embeddings=tb, reduction="cnn", similarity="simyu", epochs=1),
    lambda st, tb: TfidfNNSummariser(store=st, epochs=2),
    lambda st, tb: SVDNNSummariser(store=st, n_components=4, epochs=2),
    lambda st, tb: SimpleSummariser("word2vec", embeddings=tb),
])
def test_every_system_runs_cv(toy, factory):
    ds, store, table = toy
    rep = run_experiment(factory(store, table), ds, k=3, seed=0)
    assert len(rep.fold_f1) == 3 and all(0.0 <= f <= 1.0 for f in rep.fold_f1)


# -- grid search -------------------------------------------------------------

def test_grid_single_and_duplicate_values(toy):
    ds, store, table = toy
    base = SVRSummariser(store=store, embeddings=table)
    one = grid_search(base, "gamma", [0.1], ds, k=3)
    assert one.best == 0.1 and len(one.rows) == 1
    dup = grid_search(base, "gamma", [1.0, 1.0], ds, k=3)
    assert dup.rows[0] == dup.rows[1]
    tsv = dup.to_tsv()
    assert tsv.startswith("gamma\tmean_f1") and tsv.rstrip().endswith("# best\t1.0")
    with pytest.raises(ValidationError):
        grid_search(base, "gamma", [], ds)


def test_grid_dropout_epochs(toy):
    ds, store, table = toy
    base = NNRSummariser(store=store, embeddings=table)
    res = grid_search(base, "dropout,epochs", [(0.0, 1), (0.5, 2)], ds, k=3)
    assert [r[0] for r in res.rows] == [(0.0, 1), (0.5, 2)]
    assert res.best in {(0.0, 1), (0.5, 2)}
    assert "0.5,2" in res.to_tsv()


def synthetic_gamma_search(true_gamma=1.0, seed=0):
    rng = np.random.default_rng(seed)
    X = rng.uniform(-1, 1, size=(80, 2))
    centres = rng.uniform(-1, 1, size=(3, 2))
    y = sum(np.exp(-true_gamma * ((X - c) ** 2).sum(axis=1)) for c in centres) / 3
    grid = [1e-2, 0.1, 1.0, 10.0, 100.0]
    rows, best = grid_search_regressor(SMORegressor(epsilon=0.01), "gamma", grid, X, y, k=5, seed=seed)
    return grid, rows, best


def test_grid_recovers_synthetic_gamma():
    grid, rows, best = synthetic_gamma_search(1.0)
    i = grid.index(1.0)
    assert best in grid[max(0, i - 1): i + 2]


# -- outputs -----------------------------------------------------------------

def test_scatter_roundtrip(tmp_path):
    t = [0.1, 0.25, 1 / 3]
    p = [0.2, -0.05, 2 / 3]
    path = tmp_path / "s.tsv"
    export_scatter(t, p, path, {"gamma": 0.1, "system": "svr"})
    header, rows = read_scatter(path)
    assert header == {"gamma": "0.1", "system": "svr"}
    assert len(rows) == 3
    assert max(abs(a - b) for r, e in zip(rows, zip(t, p)) for a, b in zip(r, e)) < 1e-9
    with pytest.raises(ValidationError):
        export_scatter([1.0], [], path)


def test_generate_run_trivial(fixtures_dir, tmp_path):
    ds = load_dataset(fixtures_dir / "five_questions.json")
    out = tmp_path / "run.json"
    run = generate_run(TrivialSummariser().fit([]), ds, out)
    assert [q["id"] for q in run["questions"]] == ds.ids
    summary = run["questions"][0]["ideal_answer"]
    assert summary == " ".join(s.text for s in ds.questions[0].snippets[:6])
    assert out.read_bytes() == (fixtures_dir / "five_questions.trivial.expected.json").read_bytes()


def test_generate_run_unfitted_errors(toy):
    ds, store, table = toy
    with pytest.raises(QsummError):
        generate_run(SVRSummariser(store=store, embeddings=table), ds)


def test_run_bytes_deterministic(toy, tmp_path):
    ds, store, table = toy
    outs = []
    for i in range(2):
        s = SVRSummariser(store=store, embeddings=table).fit(list(ds)[:8])
        generate_run(s, ds.subset(ds.ids[8:]), tmp_path / f"r{i}.json")
        outs.append((tmp_path / f"r{i}.json").read_bytes())
    assert outs[0] == outs[1]


def test_svr_persistence(toy, tmp_path):
    ds, store, table = toy
    s = SVRSummariser(store=store, embeddings=table).fit(list(ds)[:8])
    path = tmp_path / "svr.npz"
    save_svr(s, path)
    back = load_svr(path, store=store, embeddings=table)
    test = list(ds)[8:]
    assert back.predict(test) == s.predict(test)
    with pytest.raises(ValidationError):
        load_svr(path, store=store, embeddings=table.scaled(2.0))


def test_answer_f1_and_make_system(toy):
    ds, store, table = toy
    q = ds.questions[0]
    assert answer_f1(q, q.ideal_answers[0]) == 1.0
    assert isinstance(make_system("svr", store=store, gamma=0.5, dropout=0.3), SVRSummariser)
    assert make_system("simple-tfidf-svd", n_components=7).n_components == 7
    with pytest.raises(ValidationError):
        make_system("nope")


def test_toy_corpus_is_reproducible(tmp_path):
    a = make_toy_corpus(tmp_path / "a")[0]
    b = make_toy_corpus(tmp_path / "b")[0]
    assert a.questions == b.questions
