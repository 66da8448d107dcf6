"""Ensemble diagnostics: cross-system WER, WER spread, synthetic ensembles
and receptive-field arithmetic for spliced/recurrent layer stacks."""

from __future__ import annotations

import random
import statistics
from dataclasses import dataclass
from typing import Mapping, Sequence

from .align import edit_distance, score_wer
from .errors import DataError
from .nbest import Hypothesis, NBestList, SystemOutput

SUB_SHARE = 0.6
DEL_SHARE = 0.2


@dataclass(frozen=True)
class EnsembleStats:
    wers: tuple[float, ...]
    mean: float
    std: float
    cwer: float


def cross_wer(systems: Sequence[Mapping[str, Sequence[str]]]) -> float:
    """Cross word error rate between the 1-best outputs of M >= 2 systems.

    Averages, over all M(M-1) ordered pairs (m, n), the total distance of
    system m's outputs to system n's divided by the total length of
    system n's outputs.  Note the asymmetry: the denominator belongs to
    the second system of the pair.
    """
    if len(systems) < 2:
        raise DataError(f"cross WER needs at least 2 systems, got {len(systems)}")
    utts = sorted(systems[0])
    for k, s in enumerate(systems[1:], 2):
        if set(s) != set(utts):
            diff = sorted(set(s) ^ set(utts))
            raise DataError(f"system {k} covers different utterances: " + ", ".join(diff))
    lengths = [sum(len(s[u]) for u in utts) for s in systems]
    for k, n in enumerate(lengths, 1):
        if n == 0:
            raise DataError(f"system {k} has zero total hypothesis length")

    M = len(systems)
    dist = {}
    for m in range(M):
        for n in range(m + 1, M):
            dist[m, n] = dist[n, m] = sum(edit_distance(systems[m][u], systems[n][u]) for u in utts)
    total = 0.0
    for m in range(M):
        for n in range(M):
            if n != m:
                total += dist[m, n] / lengths[n]
    return 100.0 * total / (M * (M - 1))


def ensemble_stats(
    systems: Sequence[Mapping[str, Sequence[str]]],
    refs: Mapping[str, Sequence[str]],
    sample_std: bool = False,
) -> EnsembleStats:
    if len(systems) < 2:
        raise DataError(f"ensemble statistics need at least 2 systems, got {len(systems)}")
    wers = tuple(score_wer(s, refs).wer for s in systems)
    std = statistics.stdev(wers) if sample_std else statistics.pstdev(wers)
    return EnsembleStats(wers, statistics.fmean(wers), std, cross_wer(systems))


def _utterance_rng(seed, system_index, utt):
    # str seeds are hashed with SHA-512 by random.Random: stable across runs
    return random.Random(f"{seed}/{system_index}/{utt}")


def corrupt(words, rate, vocab, rng, index=None) -> tuple:
    """Corrupt one word sequence; ``vocab`` must be sorted and duplicate-free."""
    if index is None:
        index = {v: i for i, v in enumerate(vocab)}
    out = []
    for w in words:
        if rate <= 0 or rng.random() >= rate:
            out.append(w)
            continue
        u = rng.random()
        if u < SUB_SHARE:
            # uniform over the vocabulary minus the original word; with a
            # single-word vocabulary this degrades to a deletion
            if len(vocab) > 1:
                k = rng.randrange(len(vocab) - 1)
                if k >= index.get(w, len(vocab)):
                    k += 1
                out.append(vocab[k])
        elif u < SUB_SHARE + DEL_SHARE:
            pass
        else:
            out.append(w)
            out.append(rng.choice(vocab))
    return tuple(out)


def synth_ensemble(
    refs: Mapping[str, Sequence[str]], num_systems: int, target_wer: float, seed: int
) -> list[SystemOutput]:
    """Corrupt references independently per system to mimic a seed ensemble.

    Each reference word is hit with probability ``target_wer / 100``; a hit
    is a substitution (60%), deletion (20%) or insertion after the word
    (20%), with replacement words drawn from the reference vocabulary.
    """
    if not refs:
        raise DataError("empty reference set")
    if num_systems < 1:
        raise ValueError("num_systems must be >= 1")
    if not 0 <= target_wer <= 50:
        raise ValueError(f"target_wer must be within [0, 50], got {target_wer}")
    vocab = sorted({w for seq in refs.values() for w in seq})
    if not vocab:
        raise DataError("references contain no words")
    index = {v: i for i, v in enumerate(vocab)}
    rate = target_wer / 100.0
    systems = []
    for m in range(num_systems):
        out = SystemOutput(f"sys{m + 1}")
        for utt in sorted(refs):
            words = corrupt(refs[utt], rate, vocab, _utterance_rng(seed, m, utt), index)
            out.lists[utt] = NBestList(utt, [Hypothesis(words)])
        systems.append(out)
    return systems


def synth_references(
    num_words: int, seed: int, vocab_size: int = 500, min_len: int = 5, max_len: int = 15
) -> dict[str, tuple[str, ...]]:
    """Random reference transcripts totalling at least ``num_words`` words."""
    if num_words < 1:
        raise ValueError("num_words must be >= 1")
    rng = random.Random(f"refs/{seed}")
    vocab = [f"w{i:04d}" for i in range(vocab_size)]
    refs = {}
    total = 0
    while total < num_words:
        n = rng.randint(min_len, max_len)
        refs[f"utt{len(refs) + 1:06d}"] = tuple(rng.choice(vocab) for _ in range(n))
        total += n
    return refs


# --- receptive field -----------------------------------------------------


@dataclass(frozen=True)
class Spliced:
    offsets: tuple[int, ...]

    def __post_init__(self):
        if not self.offsets:
            raise ValueError("spliced layer needs at least one offset")
        if 0 not in self.offsets:
            raise ValueError(f"spliced layer offsets {list(self.offsets)} must include 0")

    @property
    def span(self):
        return -min(self.offsets), max(self.offsets)


@dataclass(frozen=True)
class Recurrent:
    past: int
    future: int = 0

    def __post_init__(self):
        if self.past < 0 or self.future < 0:
            raise ValueError("recurrent horizons must be >= 0")

    @property
    def span(self):
        return self.past, self.future


@dataclass(frozen=True)
class ReceptiveField:
    left: int
    right: int


def receptive_field(layers) -> ReceptiveField:
    if not layers:
        raise ValueError("at least one layer is required")
    left = right = 0
    for layer in layers:
        lo, hi = layer.span
        left += lo
        right += hi
    return ReceptiveField(left, right)


def parse_layers(text: str, path=None) -> list:
    """Parse ``splice o1,o2,...`` / ``recur past,future`` lines."""
    layers = []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        kind, _, rest = line.partition(" ")
        try:
            values = [int(v) for v in rest.replace(" ", "").split(",") if v]
            if kind == "splice":
                layers.append(Spliced(tuple(values)))
            elif kind == "recur":
                if len(values) != 2:
                    raise ValueError("recur expects 'past,future'")
                layers.append(Recurrent(values[0], values[1]))
            else:
                raise ValueError(f"unknown layer kind {kind!r}")
        except ValueError as exc:
            raise DataError(str(exc), path, lineno) from None
    if not layers:
        raise DataError("no layers", path)
    return layers

