import json
from pathlib import Path

import numpy as np
import pytest

from qsumm.corpus import Abstract, AbstractStore, Dataset, Question, QuestionType, Snippet
from qsumm.vecspace import EmbeddingTable

FIXTURES = Path(__file__).parent / "fixtures"

WORDS = (
    "protein gene cell cancer brain peptide mutation receptor kinase therapy "
    "patient outcome injury level factor stem tumour drug trial response"
).split()

_ACCEPTANCE = []


@pytest.fixture
def fixtures_dir():
    return FIXTURES


@pytest.fixture
def acceptance_log():
    return _ACCEPTANCE


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for line in _ACCEPTANCE:
        terminalreporter.write_line(line)


def _sentence(rng, n):
    words = rng.choice(WORDS, size=n)
    return (" ".join(words)).capitalize() + "."


def make_toy_corpus(tmp_path, n_questions=12, seed=0, dim=8):
    """Random questions, abstracts cached in an offline store, embeddings."""
    rng = np.random.default_rng(seed)
    store = AbstractStore(tmp_path / "cache", offline=True)
    types = list(QuestionType)
    questions = []
    for qi in range(n_questions):
        refs = []
        snippets = []
        for d in range(2):
            ref = f"http://www.ncbi.nlm.nih.gov/pubmed/{qi * 10 + d}"
            sents = [_sentence(rng, int(rng.integers(4, 9))) for _ in range(3)]
            store.put(ref, Abstract(f"Title {qi} {d}", " ".join(sents)))
            refs.append(ref)
            snippets.append(Snippet(sents[0], ref, len(snippets)))
        ideal = " ".join(s.text for s in snippets[:1]) + " " + _sentence(rng, 5)
        questions.append(Question(
            id=f"q{qi:02d}", body=_sentence(rng, 6).rstrip(".") + "?",
            qtype=types[qi % 4], snippets=tuple(snippets), document_refs=tuple(refs),
            ideal_answers=(ideal,),
        ))
    table = EmbeddingTable(WORDS, rng.normal(size=(len(WORDS), dim)))
    return Dataset(tuple(questions), "toy"), store, table


@pytest.fixture
def toy(tmp_path):
    return make_toy_corpus(tmp_path)
