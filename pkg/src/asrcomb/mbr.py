"""Minimum Bayes risk decoding and multi-system combination over N-best lists.

For a candidate word sequence W the combined risk is

    risk(W) = sum_m lambda_m * sum_{W' in H_m} P_m(W') * L(W, W')

with L the word-level Levenshtein distance.  Candidates are the union of
all systems' supports.  Sums run over systems in the given order and over
each system's hypotheses in canonical posterior order, so results are
reproducible bit for bit.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Iterable, Sequence

from .align import edit_distance, seq_key
from .errors import DataError
from .nbest import PosteriorDistribution, SystemOutput, compute_posteriors


@dataclass(frozen=True)
class CombinationWeights:
    weights: tuple[float, ...]

    def __post_init__(self):
        if not self.weights:
            raise ValueError("at least one combination weight is required")
        if any(not (math.isfinite(w) and w >= 0) for w in self.weights):
            raise ValueError(f"combination weights must be finite and >= 0: {self.weights}")
        total = math.fsum(self.weights)
        if total <= 0:
            raise ValueError("combination weights must not all be zero")
        object.__setattr__(self, "weights", tuple(w / total for w in self.weights))

    @classmethod
    def uniform(cls, n: int) -> CombinationWeights:
        return cls((1.0,) * n)

    def __len__(self):
        return len(self.weights)


@dataclass(frozen=True)
class MbrResult:
    utterance_id: str | None
    chosen: tuple[str, ...]
    risk: float
    risks: tuple[tuple[tuple[str, ...], float], ...]


def _select(risks, mass):
    # argmin risk; ties -> larger posterior mass, then codepoint order
    return min(risks, key=lambda c: (risks[c], -mass.get(c, 0.0), seq_key(c)))


def mbr_combine(
    systems: Sequence[PosteriorDistribution], lambdas: CombinationWeights | None = None
) -> MbrResult:
    if not systems:
        raise ValueError("no systems to combine")
    if lambdas is None:
        lambdas = CombinationWeights.uniform(len(systems))
    if len(lambdas) != len(systems):
        raise ValueError(f"{len(lambdas)} combination weights for {len(systems)} systems")
    utt_ids = {p.utterance_id for p in systems}
    if len(utt_ids) > 1:
        raise ValueError(f"posteriors refer to different utterances: {sorted(map(str, utt_ids))}")

    candidates: list[tuple[str, ...]] = []
    mass: dict = {}
    for lam, post in zip(lambdas.weights, systems):
        for words, p in post.entries:
            if words not in mass:
                candidates.append(words)
                mass[words] = 0.0
            mass[words] += lam * p

    dist_cache: dict = {}

    def dist(a, b):
        key = (a, b) if seq_key(a) <= seq_key(b) else (b, a)
        d = dist_cache.get(key)
        if d is None:
            d = dist_cache[key] = edit_distance(a, b)
        return d

    risks = {}
    for cand in candidates:
        total = 0.0
        for lam, post in zip(lambdas.weights, systems):
            inner = 0.0
            for words, p in post.entries:
                inner += p * dist(cand, words)
            total += lam * inner
        risks[cand] = total

    chosen = _select(risks, mass)
    return MbrResult(
        systems[0].utterance_id,
        chosen,
        risks[chosen],
        tuple((c, risks[c]) for c in candidates),
    )


def mbr_decode(
    posterior: PosteriorDistribution, candidates: Iterable[Sequence[str]] | None = None
) -> MbrResult:
    """Single-system MBR decode; candidates default to the posterior's support."""
    if candidates is None:
        return mbr_combine([posterior], CombinationWeights((1.0,)))
    cands = []
    for c in candidates:
        c = tuple(c)
        if c not in cands:
            cands.append(c)
    if not cands:
        raise ValueError("empty candidate set")
    risks = {}
    for cand in cands:
        total = 0.0
        for words, p in posterior.entries:
            total += p * edit_distance(cand, words)
        risks[cand] = total
    mass = {c: posterior.prob(c) for c in cands}
    chosen = _select(risks, mass)
    return MbrResult(
        posterior.utterance_id, chosen, risks[chosen], tuple((c, risks[c]) for c in cands)
    )


def _combine_chunk(args):
    chunk, lambdas, lm_scale, posterior_scale = args
    out = []
    for utt, lists in chunk:
        posts = [compute_posteriors(nb, lm_scale, posterior_scale) for nb in lists]
        out.append((utt, mbr_combine(posts, lambdas)))
    return out


def combine_corpus(
    systems: Sequence[SystemOutput],
    lambdas: CombinationWeights | None = None,
    lm_scale: float = 1.0,
    posterior_scale: float = 1.0,
    intersect: bool = False,
    jobs: int = 1,
) -> dict[str, MbrResult]:
    """Combine whole systems utterance by utterance.

    With ``jobs > 1`` utterances are spread over worker processes; every
    utterance is still computed by the same deterministic routine, so
    the result does not depend on ``jobs``.
    """
    if not systems:
        raise ValueError("no systems to combine")
    if lambdas is None:
        lambdas = CombinationWeights.uniform(len(systems))
    if len(lambdas) != len(systems):
        raise DataError(f"{len(lambdas)} combination weights for {len(systems)} systems")

    id_sets = [set(s.lists) for s in systems]
    common = set.intersection(*id_sets)
    union = set.union(*id_sets)
    if not intersect and common != union:
        diff = sorted(union - common)
        raise DataError("systems cover different utterances; not in every system: " + ", ".join(diff))
    if not common:
        raise DataError("systems have no utterances in common")

    work = [(utt, [s.lists[utt] for s in systems]) for utt in sorted(common)]
    if jobs <= 1 or len(work) < 2:
        pairs = _combine_chunk((work, lambdas, lm_scale, posterior_scale))
    else:
        size = math.ceil(len(work) / jobs)
        chunks = [work[i:i + size] for i in range(0, len(work), size)]
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            parts = pool.map(
                _combine_chunk, [(c, lambdas, lm_scale, posterior_scale) for c in chunks]
            )
            pairs = [p for part in parts for p in part]
    return dict(sorted(pairs, key=lambda p: p[0]))


def render_one_best(results: dict[str, MbrResult]) -> str:
    return "".join(f"{utt}\t{seq_key(results[utt].chosen)}\n" for utt in sorted(results))


def render_risks(results: dict[str, MbrResult]) -> str:
    lines = []
    for utt in sorted(results):
        for words, risk in results[utt].risks:
            lines.append(f"{utt}\t{risk!r}\t{seq_key(words)}\n")
    return "".join(lines)
