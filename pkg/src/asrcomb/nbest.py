"""N-best list ingestion and conversion of decoder scores to posteriors."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping

from .align import seq_key, words_of
from .errors import DataError

POSTERIOR_SUM_TOL = 1e-9


@dataclass(frozen=True)
class Hypothesis:
    words: tuple[str, ...]
    acoustic_score: float = 0.0
    lm_score: float = 0.0

    def __post_init__(self):
        if not (math.isfinite(self.acoustic_score) and math.isfinite(self.lm_score)):
            raise ValueError("hypothesis scores must be finite")


@dataclass
class NBestList:
    utterance_id: str
    hypotheses: list[Hypothesis]

    def __post_init__(self):
        if not self.hypotheses:
            raise ValueError(f"N-best list for {self.utterance_id!r} is empty")


@dataclass
class SystemOutput:
    system_id: str
    lists: dict[str, NBestList] = field(default_factory=dict)

    def one_best(self) -> dict[str, tuple[str, ...]]:
        return {utt: nb.hypotheses[0].words for utt, nb in self.lists.items()}


@dataclass(frozen=True)
class PosteriorDistribution:
    """Normalised probabilities over distinct word sequences.

    Entries are kept in canonical order: descending probability, ties by
    codepoint order of the rendered word sequence.
    """

    entries: tuple[tuple[tuple[str, ...], float], ...]
    utterance_id: str | None = None

    def __post_init__(self):
        if not self.entries:
            raise ValueError("posterior distribution is empty")
        seen = set()
        total = 0.0
        for words, p in self.entries:
            if words in seen:
                raise ValueError(f"duplicate word sequence {seq_key(words)!r} in posterior")
            if not p >= 0.0:
                raise ValueError("posterior probabilities must be non-negative")
            seen.add(words)
            total += p
        if abs(total - 1.0) > POSTERIOR_SUM_TOL:
            raise ValueError(f"posterior sums to {total!r}, not 1")

    @classmethod
    def from_mapping(cls, probs: Mapping, utterance_id=None) -> PosteriorDistribution:
        """Build from ``{words: prob}``; mass of repeated sequences is summed."""
        merged: dict = {}
        for words, p in probs.items():
            words = tuple(words)
            merged[words] = merged.get(words, 0.0) + p
        return cls(canonical_order(merged.items()), utterance_id)

    def prob(self, words) -> float:
        for w, p in self.entries:
            if w == words:
                return p
        return 0.0

    @property
    def support(self) -> list[tuple[str, ...]]:
        return [w for w, _ in self.entries]


def canonical_order(items: Iterable) -> tuple:
    return tuple(sorted(((tuple(w), p) for w, p in items), key=lambda e: (-e[1], seq_key(e[0]))))


def _logsumexp(values: list[float]) -> float:
    top = max(values)
    return top + math.log(math.fsum(math.exp(v - top) for v in values))


def compute_posteriors(
    nbest: NBestList, lm_scale: float = 1.0, posterior_scale: float = 1.0
) -> PosteriorDistribution:
    """Softmax over scaled scores ``beta * (acoustic + gamma * lm)``.

    Hypotheses sharing a word sequence are merged by log-sum-exp of their
    scaled scores before normalisation.
    """
    if not (math.isfinite(lm_scale) and lm_scale >= 0):
        raise ValueError(f"lm_scale must be finite and >= 0, got {lm_scale}")
    if not (math.isfinite(posterior_scale) and posterior_scale > 0):
        raise ValueError(f"posterior_scale must be finite and > 0, got {posterior_scale}")

    grouped: dict[tuple[str, ...], list[float]] = {}
    for hyp in nbest.hypotheses:
        score = posterior_scale * (hyp.acoustic_score + lm_scale * hyp.lm_score)
        grouped.setdefault(hyp.words, []).append(score)
    merged = {w: (s[0] if len(s) == 1 else _logsumexp(s)) for w, s in grouped.items()}

    top = max(merged.values())
    unnorm = {w: math.exp(s - top) for w, s in merged.items()}
    z = math.fsum(unnorm.values())
    return PosteriorDistribution(
        canonical_order((w, u / z) for w, u in unnorm.items()), nbest.utterance_id
    )


def parse_nbest(text: str, system_id: str = "system", path=None) -> SystemOutput:
    """Parse ``utt<TAB>rank<TAB>acoustic<TAB>lm<TAB>words`` lines."""
    out = SystemOutput(system_id)
    ranks: dict[str, set] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        fields = line.split("\t", 4)
        if len(fields) != 5:
            raise DataError(f"expected 5 tab-separated fields, found {len(fields)}", path, lineno)
        utt, rank_s, ac_s, lm_s, words = fields
        if not utt or any(c.isspace() for c in utt):
            raise DataError(f"malformed utterance id {utt!r}", path, lineno)
        try:
            rank = int(rank_s)
        except ValueError:
            raise DataError(f"rank {rank_s!r} is not an integer", path, lineno) from None
        if rank < 1:
            raise DataError(f"rank must be positive, got {rank}", path, lineno)
        scores = []
        for name, s in (("acoustic", ac_s), ("lm", lm_s)):
            try:
                v = float(s)
            except ValueError:
                raise DataError(f"{name} score {s!r} is not numeric", path, lineno) from None
            if not math.isfinite(v):
                raise DataError(f"{name} score {s!r} is not finite", path, lineno)
            scores.append(v)
        seen = ranks.setdefault(utt, set())
        if rank in seen:
            raise DataError(f"duplicate rank {rank} for utterance {utt!r}", path, lineno)
        seen.add(rank)
        hyp = Hypothesis(words_of(words), scores[0], scores[1])
        if utt in out.lists:
            out.lists[utt].hypotheses.append(hyp)
        else:
            out.lists[utt] = NBestList(utt, [hyp])
    if not out.lists:
        raise DataError("no utterances", path)
    return out


def render_nbest(system: SystemOutput) -> str:
    lines = []
    for utt in sorted(system.lists):
        for rank, hyp in enumerate(system.lists[utt].hypotheses, 1):
            lines.append(
                f"{utt}\t{rank}\t{hyp.acoustic_score!r}\t{hyp.lm_score!r}\t{seq_key(hyp.words)}\n"
            )
    return "".join(lines)
