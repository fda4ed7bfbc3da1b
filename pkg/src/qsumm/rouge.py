"""ROUGE-SU4: unigrams plus skip-bigrams with a gap of at most 4 positions."""

from __future__ import annotations

import statistics
from collections import Counter
from dataclasses import dataclass
from typing import Sequence

MAX_SKIP = 4


@dataclass(frozen=True)
class RougeScore:
    precision: float
    recall: float
    f1: float
    match_count: int
    candidate_units: int
    reference_units: int


def su4_units(doc: Sequence[str], max_skip: int = MAX_SKIP) -> Counter:
    """Multiset of unigrams ``(t,)`` and skip-bigrams ``(t_i, t_j)``, 0 < j-i <= max_skip."""
    units = Counter((t,) for t in doc)
    n = len(doc)
    for i in range(n):
        for j in range(i + 1, min(n, i + max_skip + 1)):
            units[(doc[i], doc[j])] += 1
    return units


def _score(cand: Counter, ref: Counter) -> RougeScore:
    nc = sum(cand.values())
    nr = sum(ref.values())
    match = sum((cand & ref).values())
    p = match / nc if nc else 0.0
    r = match / nr if nr else 0.0
    f = 2 * p * r / (p + r) if p + r > 0 else 0.0
    return RougeScore(p, r, f, match, nc, nr)


def su4_score(candidate: Sequence[str], references: Sequence[Sequence[str]],
              aggregate: str = "max") -> RougeScore:
    """Score ``candidate`` against each reference.

    ``aggregate="max"`` returns the per-reference score with the highest
    F1 (first one on ties). ``"average"`` averages P, R and F1 across
    references and sums the counts.
    """
    if not references:
        raise ValueError("su4_score needs at least one reference")
    if aggregate not in ("max", "average"):
        raise ValueError(f"unknown aggregate {aggregate!r}")
    cand = su4_units(candidate)
    scores = [_score(cand, su4_units(r)) for r in references]
    if aggregate == "max":
        return max(scores, key=lambda s: s.f1)
    k = len(scores)
    return RougeScore(
        sum(s.precision for s in scores) / k,
        sum(s.recall for s in scores) / k,
        sum(s.f1 for s in scores) / k,
        sum(s.match_count for s in scores),
        sum(s.candidate_units for s in scores),
        sum(s.reference_units for s in scores),
    )


def mean_stdev(values: Sequence[float]) -> tuple[float, float]:
    """Arithmetic mean and sample standard deviation (0 for one value)."""
    values = list(values)
    if not values:
        raise ValueError("no values")
    mean = statistics.fmean(values)
    sd = statistics.stdev(values) if len(values) > 1 else 0.0
    return mean, sd


def su4_corpus_f1(pairs, aggregate: str = "max") -> tuple[float, float]:
    f1s = [su4_score(c, refs, aggregate).f1 for c, refs in pairs]
    return mean_stdev(f1s)
