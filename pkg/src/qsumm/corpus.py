"""BioASQ question sets and the PubMed abstract cache."""

from __future__ import annotations

import enum
import hashlib
import json
import logging
import os
import re
import threading
import urllib.error
import urllib.request
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

from .exceptions import (
    DataFormatError,
    EmptySourcesError,
    FetchError,
    SourceError,
    UnavailableError,
    ValidationError,
)

logger = logging.getLogger(__name__)

CACHE_ENV = "QSUMM_CACHE"


class QuestionType(str, enum.Enum):
    SUMMARY = "summary"
    FACTOID = "factoid"
    YESNO = "yesno"
    LIST = "list"

    @classmethod
    def parse(cls, value: str, qid: str = "?") -> "QuestionType":
        try:
            return cls(value)
        except ValueError:
            raise ValidationError(
                f"question {qid!r}: unknown question type {value!r}"
            ) from None


@dataclass(frozen=True)
class Snippet:
    text: str
    document_ref: str
    rank: int


@dataclass(frozen=True)
class Question:
    id: str
    body: str
    qtype: QuestionType
    snippets: tuple[Snippet, ...] = ()
    document_refs: tuple[str, ...] = ()
    ideal_answers: tuple[str, ...] = ()


@dataclass(frozen=True)
class Dataset:
    questions: tuple[Question, ...]
    origin: str = "<memory>"

    def __len__(self):
        return len(self.questions)

    def __iter__(self):
        return iter(self.questions)

    @property
    def ids(self) -> list[str]:
        return [q.id for q in self.questions]

    def subset(self, ids) -> "Dataset":
        wanted = set(ids)
        return Dataset(
            tuple(q for q in self.questions if q.id in wanted), self.origin
        )


def _ideal_list(raw, qid):
    if raw is None:
        return ()
    if isinstance(raw, str):
        return (raw,) if raw.strip() else ()
    if isinstance(raw, list) and all(isinstance(a, str) for a in raw):
        return tuple(a for a in raw if a.strip())
    raise ValidationError(f"question {qid!r}: ideal_answer must be a string or list")


def _parse_question(obj, test_mode: bool) -> Question:
    if not isinstance(obj, dict):
        raise ValidationError("each question must be a JSON object")
    qid = obj.get("id")
    if not isinstance(qid, str) or not qid:
        raise ValidationError("question without a string 'id'")
    for key in ("body", "type"):
        if not isinstance(obj.get(key), str):
            raise ValidationError(f"question {qid!r}: missing string {key!r}")
    qtype = QuestionType.parse(obj["type"], qid)

    snippets = []
    for i, s in enumerate(obj.get("snippets") or []):
        text = s.get("text") if isinstance(s, dict) else None
        if not isinstance(text, str) or not text.strip():
            raise ValidationError(f"question {qid!r}: snippet {i} has no text")
        snippets.append(Snippet(text=text, document_ref=str(s.get("document", "")), rank=i))

    ideal = _ideal_list(obj.get("ideal_answer"), qid)
    if not test_mode and not ideal:
        raise ValidationError(f"question {qid!r}: no ideal answers (training mode)")
    return Question(
        id=qid,
        body=obj["body"],
        qtype=qtype,
        snippets=tuple(snippets),
        document_refs=tuple(str(d) for d in obj.get("documents") or []),
        ideal_answers=ideal,
    )


def parse_dataset(data: bytes | str, origin: str = "<memory>", test_mode: bool = False) -> Dataset:
    if isinstance(data, bytes):
        text = data.decode("utf-8")
    else:
        text = data
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        offset = len(text[: exc.pos].encode("utf-8"))
        raise DataFormatError(f"{origin}: invalid JSON at byte {offset}: {exc.msg}") from exc
    if not isinstance(doc, dict) or not isinstance(doc.get("questions"), list):
        raise DataFormatError(f"{origin}: expected an object with a 'questions' array")

    questions = [_parse_question(q, test_mode) for q in doc["questions"]]
    seen = set()
    for q in questions:
        if q.id in seen:
            raise ValidationError(f"duplicate question id {q.id!r}")
        seen.add(q.id)
    return Dataset(tuple(questions), origin)


def load_dataset(path, test_mode: bool = False) -> Dataset:
    """Read a BioASQ-style JSON file.

    ``ideal_answer`` may be a string or a list of strings; either way it
    ends up as a tuple in :attr:`Question.ideal_answers`. Outside test mode
    every question must carry at least one ideal answer.
    """
    path = Path(path)
    return parse_dataset(path.read_bytes(), str(path), test_mode)


def dataset_to_json(dataset: Dataset) -> dict:
    out = []
    for q in dataset.questions:
        item = {
            "id": q.id,
            "body": q.body,
            "type": q.qtype.value,
            "documents": list(q.document_refs),
            "snippets": [{"text": s.text, "document": s.document_ref} for s in q.snippets],
        }
        if q.ideal_answers:
            item["ideal_answer"] = list(q.ideal_answers)
        out.append(item)
    return {"questions": out}


def dump_dataset(dataset: Dataset, path) -> None:
    Path(path).write_text(
        json.dumps(dataset_to_json(dataset), indent=2, ensure_ascii=False) + "\n",
        encoding="utf-8",
    )


# -- abstracts ---------------------------------------------------------------

EFETCH_URL = (
    "https://eutils.ncbi.nlm.nih.gov/entrez/eutils/efetch.fcgi"
    "?db=pubmed&retmode=xml&id={pmid}"
)


@dataclass(frozen=True)
class Abstract:
    title: str
    text: str

    def combined(self, include_title: bool = True) -> str:
        parts = [self.title, self.text] if include_title else [self.text]
        return " ".join(p for p in parts if p)


def pmid_from_ref(ref: str) -> str:
    m = re.search(r"(\d+)\s*/?\s*$", ref)
    if not m:
        raise FetchError(ref, "cannot extract a PubMed id")
    return m.group(1)


def parse_pubmed_xml(payload: bytes) -> Abstract:
    root = ET.fromstring(payload)
    title_el = root.find(".//ArticleTitle")
    title = " ".join("".join(title_el.itertext()).split()) if title_el is not None else ""
    sections = ["".join(el.itertext()).strip() for el in root.iter("AbstractText")]
    text = " ".join(" ".join(s.split()) for s in sections if s)
    return Abstract(title, text)


def pubmed_fetcher(ref: str, timeout: float = 30.0) -> Abstract:
    url = EFETCH_URL.format(pmid=pmid_from_ref(ref))
    try:
        with urllib.request.urlopen(url, timeout=timeout) as resp:
            payload = resp.read()
    except (urllib.error.URLError, OSError) as exc:
        raise FetchError(ref, exc) from exc
    try:
        return parse_pubmed_xml(payload)
    except ET.ParseError as exc:
        raise FetchError(ref, f"bad XML: {exc}") from exc


def _cache_name(ref: str) -> str:
    return hashlib.sha256(ref.encode("utf-8")).hexdigest()[:32] + ".txt"


class AbstractStore:
    """Disk-backed cache of abstracts keyed by document reference.

    Each abstract lives in a UTF-8 file whose first line is the title and
    whose remainder is the abstract body. ``index.json`` maps refs to file
    names. With ``offline=True`` the store never touches the network.
    """

    INDEX = "index.json"

    def __init__(
        self,
        cache_dir=None,
        offline: bool = False,
        include_title: bool = True,
        fetcher: Callable[[str], Abstract] | None = None,
    ):
        cache_dir = cache_dir or os.environ.get(CACHE_ENV) or ".qsumm-cache"
        self.cache_dir = Path(cache_dir)
        self.offline = offline
        self.include_title = include_title
        self.fetcher = fetcher or pubmed_fetcher
        self._lock = threading.Lock()
        self._index = self._read_index()

    def _read_index(self) -> dict:
        path = self.cache_dir / self.INDEX
        if not path.exists():
            return {}
        try:
            return json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise DataFormatError(f"corrupt cache index {path}: {exc}") from exc

    def __contains__(self, ref) -> bool:
        return ref in self._index and (self.cache_dir / self._index[ref]).exists()

    def put(self, ref: str, abstract: Abstract | str) -> None:
        if isinstance(abstract, str):
            abstract = Abstract("", abstract)
        title = " ".join(abstract.title.split())
        name = _cache_name(ref)
        with self._lock:
            self.cache_dir.mkdir(parents=True, exist_ok=True)
            (self.cache_dir / name).write_text(title + "\n" + abstract.text, encoding="utf-8")
            self._index[ref] = name
            tmp = self.cache_dir / (self.INDEX + ".tmp")
            tmp.write_text(json.dumps(self._index, indent=1, sort_keys=True), encoding="utf-8")
            tmp.replace(self.cache_dir / self.INDEX)

    def get(self, ref: str) -> Abstract:
        if not ref:
            raise ValueError("empty document reference")
        if ref in self:
            raw = (self.cache_dir / self._index[ref]).read_text(encoding="utf-8")
            title, _, text = raw.partition("\n")
            return Abstract(title, text)
        if self.offline:
            raise UnavailableError(ref)
        abstract = self.fetcher(ref)
        self.put(ref, abstract)
        return abstract


def fetch_abstract(store: AbstractStore, document_ref: str) -> str:
    return store.get(document_ref).combined(store.include_title)


@dataclass
class Resolution:
    entries: list[tuple[str, Abstract]] = field(default_factory=list)
    missing: list[tuple[str, SourceError]] = field(default_factory=list)

    def texts(self, include_title: bool = True) -> list[tuple[str, str]]:
        return [(ref, a.combined(include_title)) for ref, a in self.entries]


def resolve_sources(question: Question, store: AbstractStore, policy: str = "skip") -> Resolution:
    """Look up every document of ``question`` in order; duplicates are kept.

    Unresolvable refs end up in ``missing``. Under ``policy="strict"`` an
    empty result raises :class:`EmptySourcesError`.
    """
    if policy not in ("skip", "strict"):
        raise ValueError(f"unknown policy {policy!r}")
    res = Resolution()
    for ref in question.document_refs:
        try:
            res.entries.append((ref, store.get(ref)))
        except SourceError as exc:
            logger.debug("unresolved %s: %s", ref, exc)
            res.missing.append((ref, exc))
    if policy == "strict" and not res.entries:
        raise EmptySourcesError(f"question {question.id!r}: no source abstracts resolved")
    return res
