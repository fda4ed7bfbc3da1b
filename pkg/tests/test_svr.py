import math
import random
import time
import warnings

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st
from sklearn.exceptions import ConvergenceWarning

from qsumm.corpus import Abstract, AbstractStore, Question, QuestionType, Snippet
from qsumm.exceptions import EmptySourcesError, ValidationError
from qsumm.svr import (
    FEATURE_NAMES,
    Candidate,
    FeatureExtractor,
    SMORegressor,
    candidate_pool,
    extract_features,
    label_candidates,
    pairwise_stats,
    predict_svr,
    rbf_kernel,
    score_question,
    train_svr,
)
from qsumm.textproc import AbstractOrigin, Sentence, preprocess
from qsumm.vecspace import EmbeddingTable, fit_tfidf


# -- pairwise stats ----------------------------------------------------------

def test_pairwise_single_identical_pair():
    t = EmbeddingTable.from_dict({"w": [1.0, 2.0], "u": [-2.0, 1.0]})
    np.testing.assert_allclose(pairwise_stats(["w"], ["w"], t), [1.0] * 8, atol=1e-15)
    np.testing.assert_allclose(pairwise_stats(["w"], ["u"], t), [0.0] * 8, atol=1e-15)
    assert pairwise_stats(["w"], ["oov"], t) == [0.0] * 8
    assert pairwise_stats([], [], t) == [0.0] * 8


def test_pairwise_two_pair_case():
    # cos(a, a) = 1, cos(a, b) = 0.5
    t = EmbeddingTable.from_dict({"a": [1.0, 0.0], "b": [0.5, math.sqrt(3) / 2]})
    got = pairwise_stats(["a"], ["a", "b"], t)
    np.testing.assert_allclose(got, [0.75, 0.75, 1.0, 0.5, 0.75, 0.75, 0.75, 0.75], atol=1e-15)


def check_chain(stats):
    mean, median, mx, mn, hi2, hi3, lo2, lo3 = stats
    eps = 1e-12
    assert mn - eps <= lo2 <= lo3 + eps
    assert lo3 <= mean + eps and mean <= hi3 + eps
    assert hi3 <= hi2 + eps and hi2 <= mx + eps
    assert mn - eps <= median <= mx + eps


@settings(max_examples=200, deadline=None)
@given(st.lists(st.sampled_from("abcdz"), max_size=6), st.lists(st.sampled_from("abcdz"), max_size=6),
       st.integers(0, 1000))
def test_pairwise_order_chain(q, c, seed):
    rng = np.random.default_rng(seed)
    t = EmbeddingTable(list("abcd"), rng.normal(size=(4, 3)))
    check_chain(pairwise_stats(q, c, t))
    w = fit_tfidf([list("abcd"), q or ["a"], c or ["b"]])
    check_chain(pairwise_stats(q, c, t, weights=w))


# -- feature oracle ----------------------------------------------------------

def o_idf(docs):
    n = len(docs)
    vocab = {t for d in docs for t in d}
    return {t: math.log((1 + n) / (1 + sum(1 for d in docs if t in d))) + 1 for t in vocab}


def o_tfidf(idf, doc):
    v = {}
    for t in doc:
        if t in idf:
            v[t] = v.get(t, 0.0) + idf[t]
    norm = math.sqrt(sum(x * x for x in v.values()))
    return {t: x / norm for t, x in v.items()} if norm else {}


def o_cos_dict(a, b):
    dot = sum(a[t] * b.get(t, 0.0) for t in a)
    na = math.sqrt(sum(x * x for x in a.values()))
    nb = math.sqrt(sum(x * x for x in b.values()))
    return 0.0 if na == 0 or nb == 0 else dot / (na * nb)


def o_cos(a, b):
    dot = sum(x * y for x, y in zip(a, b))
    na = math.sqrt(sum(x * x for x in a))
    nb = math.sqrt(sum(y * y for y in b))
    return 0.0 if na == 0 or nb == 0 else dot / (na * nb)


def o_stats(vals):
    if not vals:
        return [0.0] * 8
    v = sorted(vals)
    n = len(v)
    med = v[n // 2] if n % 2 else (v[n // 2 - 1] + v[n // 2]) / 2
    top = lambda k: sum(v[-k:]) / len(v[-k:])
    bot = lambda k: sum(v[:k]) / len(v[:k])
    return [sum(v) / n, med, v[-1], v[0], top(2), top(3), bot(2), bot(3)]


def o_pairwise(q, c, emb, wq=None, wc=None):
    sims = []
    for a in q:
        if a not in emb:
            continue
        for b in c:
            if b not in emb:
                continue
            va = [x * (wq.get(a, 0.0) if wq is not None else 1.0) for x in emb[a]]
            vb = [x * (wc.get(b, 0.0) if wc is not None else 1.0) for x in emb[b]]
            sims.append(o_cos(va, vb))
    return o_stats(sims)


def oracle_features(question, tokens, docs, emb):
    idf = o_idf(docs)
    q = preprocess(question.body)
    qv, cv = o_tfidf(idf, q), o_tfidf(idf, tokens)
    snips = [o_tfidf(idf, preprocess(s.text)) for s in question.snippets]
    dim = len(next(iter(emb.values())))
    qsum = [sum(emb[t][i] for t in q if t in emb) for i in range(dim)]
    csum = [sum(emb[t][i] for t in tokens if t in emb) for i in range(dim)]
    out = [o_cos_dict(qv, cv), min(o_cos_dict(cv, s) for s in snips) if snips else 0.0,
           o_cos(qsum, csum)]
    out += o_pairwise(q, tokens, emb)
    out += o_pairwise(q, tokens, emb, qv, cv)
    return out


TOY4 = ["alpha", "beta", "gamma", "delta"]


def random_pair(rng, i):
    words = TOY4 + ["oov"]
    sent = lambda: " ".join(rng.choice(words) for _ in range(rng.randint(1, 6)))
    q = Question(f"f{i}", sent(), QuestionType.SUMMARY,
                 snippets=tuple(Snippet(sent(), "d", k) for k in range(rng.randint(0, 3))),
                 ideal_answers=(sent(),))
    return q, preprocess(sent())


def run_feature_oracle(n_pairs=60, seed=0):
    rng = random.Random(seed)
    nrng = np.random.default_rng(seed)
    table = EmbeddingTable(TOY4, nrng.normal(size=(4, 5)))
    emb = {w: list(table[w]) for w in TOY4}
    pairs = [random_pair(rng, i) for i in range(n_pairs)]
    fe = FeatureExtractor(table).fit([q for q, _ in pairs])
    docs = []
    for q, _ in pairs:
        docs.append(preprocess(q.body))
        docs.extend(preprocess(a) for a in q.ideal_answers)
        docs.extend(preprocess(s.text) for s in q.snippets)
    worst = 0.0
    for q, toks in pairs:
        got = fe.features(q, toks).scalars
        want = oracle_features(q, toks, docs, emb)
        assert len(got) == 19 and np.all(np.isfinite(got))
        check_chain(got[3:11])
        check_chain(got[11:19])
        worst = max(worst, float(np.max(np.abs(got - np.array(want)))))
    return worst


def test_feature_oracle():
    assert run_feature_oracle() < 1e-12


def test_feature_identity_cases():
    table = EmbeddingTable(TOY4, np.random.default_rng(1).normal(size=(4, 3)))
    q = Question("i", "alpha beta", QuestionType.SUMMARY,
                 snippets=(Snippet("alpha beta", "d", 0), Snippet("gamma", "d", 1)),
                 ideal_answers=("delta",))
    tf = fit_tfidf([["alpha", "beta"], ["gamma"], ["delta"]])
    f = extract_features(q, ["alpha", "beta"], tf, table)
    assert f.scalars[0] == pytest.approx(1.0) and f.scalars[2] == pytest.approx(1.0)
    assert f.scalars[1] == pytest.approx(0.0)
    no_snip = Question("j", "alpha", QuestionType.SUMMARY, ideal_answers=("x",))
    assert extract_features(no_snip, ["alpha"], tf, table).scalars[1] == 0.0
    assert len(FEATURE_NAMES) == 19
    row = f.to_row()
    assert row.shape == (1, len(tf.vocabulary_) + 19)


# -- candidates --------------------------------------------------------------

def _store(tmp_path):
    store = AbstractStore(tmp_path / "c", offline=True, include_title=False)
    store.put("d1", Abstract("T1", "One a. Two b. Three c."))
    store.put("d2", Abstract("T2", "Four d. Five e. Six f."))
    store.put("d3", Abstract("", "Only one sentence here."))
    return store


def test_candidate_pool(tmp_path):
    store = _store(tmp_path)
    q = Question("p", "b", QuestionType.SUMMARY, document_refs=("d1", "d2"), ideal_answers=("x",))
    pool = candidate_pool(q, store)
    assert [c.sentence.text for c in pool] == ["One a.", "Two b.", "Three c.", "Four d.", "Five e.", "Six f."]
    assert pool[3].sentence.origin == AbstractOrigin("d2", 0)
    assert [c.sentence.global_index for c in pool] == list(range(6))
    q2 = Question("p", "b", QuestionType.SUMMARY, document_refs=("d1", "missing"), ideal_answers=("x",))
    assert len(candidate_pool(q2, store)) == 3
    q3 = Question("p", "b", QuestionType.SUMMARY, document_refs=("d3",), ideal_answers=("x",))
    assert len(candidate_pool(q3, store)) == 1
    with_title = candidate_pool(q, store, include_title=True)
    assert with_title[0].sentence.text == "T1" and len(with_title) == 8
    empty = Question("p", "b", QuestionType.SUMMARY, document_refs=("missing",), ideal_answers=("x",))
    with pytest.raises(EmptySourcesError):
        candidate_pool(empty, store, policy="strict")


def test_label_candidates(tmp_path):
    store = _store(tmp_path)
    q = Question("p", "b", QuestionType.SUMMARY, document_refs=("d1",), ideal_answers=("two b", "zzz"))
    labelled = label_candidates(q, candidate_pool(q, store))
    assert [c.target_su4 for c in labelled] == [0.0, 1.0, 0.0]


def _cand(text, i):
    return Candidate(Sentence(text, AbstractOrigin("d", i), i), tuple(preprocess(text)))


def test_score_question():
    pool = [_cand("A.", 0)]
    assert [u.text for u in score_question(pool, [0.2])] == ["A."]
    pool = [_cand(t, i) for i, t in enumerate("ABCD")]
    ranked = score_question(pool, [0.1, 0.5, 0.1, 0.5])
    assert [u.text for u in ranked] == ["B", "D", "A", "C"]


# -- SMO ---------------------------------------------------------------------

def synthetic(seed=0, n=50, d=3, g=0.5):
    rng = np.random.default_rng(seed)
    X = rng.uniform(-1, 1, size=(n, d))
    c = rng.uniform(-0.5, 0.5, size=d)
    y = np.exp(-g * ((X - c) ** 2).sum(axis=1))
    return X, y


def test_synthetic_recovery():
    X, y = synthetic()
    t = time.perf_counter()
    m = train_svr(X, y, gamma=0.5, C=1.0, epsilon=0.01)
    assert time.perf_counter() - t < 10
    assert np.mean((m.predict(X) - y) ** 2) < 1e-3
    assert m.converged_ and m.kkt_violation(X, y) < 1e-3
    assert np.all(np.abs(m.dual_coef_) <= m.C + 1e-12)


def test_constant_targets():
    X = np.random.default_rng(1).normal(size=(20, 4))
    m = train_svr(X, np.full(20, 0.3), epsilon=0.1)
    assert m.dual_coef_.size == 0
    assert m.intercept_ == pytest.approx(0.3)
    np.testing.assert_allclose(predict_svr(m, np.random.default_rng(2).normal(size=(5, 4))), 0.3)


def test_duplicates_do_not_change_predictions():
    X, y = synthetic(3, n=15)
    a = train_svr(X, y, gamma=0.5, tol=1e-8)
    b = train_svr(np.vstack([X, X]), np.concatenate([y, y]), gamma=0.5, tol=1e-8)
    probe = np.random.default_rng(0).uniform(-1, 1, size=(10, 3))
    # duplication leaves the optimal function unchanged only if no bound is hit
    assert np.all(np.abs(a.dual_coef_) < a.C / 2)
    np.testing.assert_allclose(a.predict(probe), b.predict(probe), atol=1e-6)


def test_interior_point_within_tube():
    X, y = synthetic(4, n=30)
    m = train_svr(X, y, gamma=2.0, epsilon=0.05, tol=1e-8)
    f = m.predict(X)
    assert np.all(np.abs(f - y) <= 0.05 + 1e-6)


def test_permutation_invariance_bitwise():
    X, y = synthetic(5, n=25)
    perm = np.random.default_rng(9).permutation(25)
    a = train_svr(X, y, gamma=1.0)
    b = train_svr(X[perm], y[perm], gamma=1.0)
    probe = np.random.default_rng(1).normal(size=(7, 3))
    assert np.array_equal(a.predict(probe), b.predict(probe))


def test_sparse_and_dense_agree():
    X, y = synthetic(6, n=20)
    a = train_svr(X, y, gamma=1.0)
    b = train_svr(sp.csr_matrix(X), y, gamma=1.0)
    np.testing.assert_allclose(a.predict(X), b.predict(sp.csr_matrix(X)), atol=1e-12)


def test_validation_errors():
    with pytest.raises(ValidationError):
        train_svr(np.ones((1, 2)), [0.0])
    with pytest.raises(ValidationError):
        train_svr(np.array([[0.0], [np.nan]]), [0.0, 1.0])
    with pytest.raises(ValidationError):
        train_svr(np.ones((2, 2)), [0.0, 1.0], gamma=0.0)


def test_iteration_cap_warns():
    X, y = synthetic(7)
    with warnings.catch_warnings(record=True) as w:
        warnings.simplefilter("always")
        m = SMORegressor(gamma=0.5, epsilon=0.01, max_iter=2).fit(X, y)
    assert not m.converged_ and m.n_iter_ == 2
    assert any(issubclass(x.category, ConvergenceWarning) for x in w)


# dense dual oracle -------------------------------------------------------------

def _project_box_hyperplane(v, C, a):
    """Euclidean projection onto {0 <= z <= C, a.z = 0} by bisection."""
    lo = -(np.abs(v).max() + C + 1.0)
    hi = -lo
    for _ in range(100):
        lam = (lo + hi) / 2
        if a @ np.clip(v - lam * a, 0, C) > 0:
            lo = lam
        else:
            hi = lam
    return np.clip(v - (lo + hi) / 2 * a, 0, C)


def dual_qp_oracle(X, y, gamma, C, eps, iters=3000):
    """Accelerated projected gradient on the 2n-variable epsilon-SVR dual."""
    n = len(y)
    K = rbf_kernel(X, X, gamma)
    a = np.concatenate([np.ones(n), -np.ones(n)])
    Q = np.outer(a, a) * np.block([[K, K], [K, K]])
    p = np.concatenate([eps - y, eps + y])
    L = np.linalg.eigvalsh(Q).max()
    z = np.zeros(2 * n)
    w, t = z.copy(), 1.0
    for _ in range(iters):
        zn = _project_box_hyperplane(w - (Q @ w + p) / L, C, a)
        tn = (1 + math.sqrt(1 + 4 * t * t)) / 2
        w = zn + (t - 1) / tn * (zn - z)
        z, t = zn, tn
    beta = z[:n] - z[n:]
    f0 = K @ beta
    tight = 1e-8
    bs = [y[i] - eps - f0[i] for i in range(n) if tight < z[i] < C - tight]
    bs += [y[i] + eps - f0[i] for i in range(n) if tight < z[n + i] < C - tight]
    return beta, float(np.mean(bs))


def qp_agreement(tol):
    rng = np.random.default_rng(0)
    X = rng.normal(size=(10, 3))
    y = np.sin(X.sum(axis=1))
    beta, b = dual_qp_oracle(X, y, 0.5, 1.0, 0.1)
    probe = np.vstack([X, rng.normal(size=(30, 3))])
    want = rbf_kernel(probe, X, 0.5) @ beta + b
    m = SMORegressor(C=1.0, gamma=0.5, epsilon=0.1, tol=tol).fit(X, y)
    return float(np.abs(m.predict(probe) - want).max())


def test_dense_qp_oracle():
    assert qp_agreement(1e-6) < 1e-4
