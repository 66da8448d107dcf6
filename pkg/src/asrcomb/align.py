"""Word-level Levenshtein alignment and WER scoring."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

from .errors import DataError

WordSequence = tuple  # tuple[str, ...]


def words_of(text: str) -> tuple[str, ...]:
    return tuple(text.split())


def seq_key(words: Sequence[str]) -> str:
    """Rendered form used for codepoint-order tie-breaking and sorting."""
    return " ".join(words)


@dataclass(frozen=True)
class AlignmentResult:
    distance: int
    substitutions: int = 0
    insertions: int = 0
    deletions: int = 0


def edit_distance(a: Sequence[str], b: Sequence[str]) -> int:
    """Unit-cost edit distance only, computed with two rows."""
    if len(a) < len(b):
        a, b = b, a
    if not b:
        return len(a)
    if a == b:
        return 0
    prev = list(range(len(b) + 1))
    for i, x in enumerate(a, 1):
        cur = [i]
        left = i
        for j, y in enumerate(b, 1):
            diag = prev[j - 1] + (x != y)
            up = prev[j] + 1
            left = left + 1
            if up < left:
                left = up
            if diag < left:
                left = diag
            cur.append(left)
        prev = cur
    return prev[-1]


def levenshtein(a: Sequence[str], b: Sequence[str]) -> AlignmentResult:
    """Align reference ``a`` against hypothesis ``b``.

    Words of ``b`` with no counterpart in ``a`` are insertions, words of
    ``a`` missing from ``b`` are deletions.  Among minimal alignments the
    one with the most substitutions is used, i.e. the diagonal is
    preferred over a deletion/insertion pair; the backtrace then takes
    diagonal, deletion, insertion in that order.  Because the distance and
    ``insertions - deletions`` are fixed, this makes the counts of
    ``levenshtein(b, a)`` exactly those of ``levenshtein(a, b)`` with
    insertions and deletions swapped.
    """
    n, m = len(a), len(b)
    # cell value = distance * big - substitutions, so min() ranks by
    # distance first and by substitution count second
    big = n + m + 1
    sub_step = big - 1
    d = [[0] * (m + 1) for _ in range(n + 1)]
    for j in range(m + 1):
        d[0][j] = j * big
    for i in range(1, n + 1):
        row, prev = d[i], d[i - 1]
        row[0] = i * big
        x = a[i - 1]
        left = row[0]
        for j in range(1, m + 1):
            best = prev[j - 1] if x == b[j - 1] else prev[j - 1] + sub_step
            gap = prev[j] + big
            if gap < best:
                best = gap
            gap = left + big
            if gap < best:
                best = gap
            row[j] = left = best

    subs = ins = dels = 0
    i, j = n, m
    while i > 0 or j > 0:
        if i > 0 and j > 0:
            is_sub = a[i - 1] != b[j - 1]
            if d[i][j] == d[i - 1][j - 1] + (sub_step if is_sub else 0):
                subs += is_sub
                i -= 1
                j -= 1
                continue
        if i > 0 and d[i][j] == d[i - 1][j] + big:
            dels += 1
            i -= 1
        else:
            ins += 1
            j -= 1
    return AlignmentResult(subs + ins + dels, subs, ins, dels)


@dataclass
class WerReport:
    per_utterance: dict = field(default_factory=dict)  # utt -> (AlignmentResult, ref length)
    substitutions: int = 0
    insertions: int = 0
    deletions: int = 0
    ref_words: int = 0

    @property
    def errors(self) -> int:
        return self.substitutions + self.insertions + self.deletions

    @property
    def wer(self) -> float:
        return 100.0 * self.errors / self.ref_words

    def summary_line(self) -> str:
        return (
            f"WER={self.wer:.1f} SUB={self.substitutions} INS={self.insertions} "
            f"DEL={self.deletions} WORDS={self.ref_words}"
        )

    def render(self) -> str:
        lines = ["utt\terrors\tsub\tins\tdel\twords"]
        for utt in sorted(self.per_utterance):
            res, nref = self.per_utterance[utt]
            lines.append(
                f"{utt}\t{res.distance}\t{res.substitutions}\t{res.insertions}\t{res.deletions}\t{nref}"
            )
        lines.append(f"# WER {self.wer!r} ({self.errors}/{self.ref_words})")
        lines.append(self.summary_line())
        return "\n".join(lines) + "\n"


def score_wer(
    hyps: Mapping[str, Sequence[str]],
    refs: Mapping[str, Sequence[str]],
    missing_as_empty: bool = False,
) -> WerReport:
    missing = sorted(set(refs) - set(hyps))
    extra = sorted(set(hyps) - set(refs))
    if extra or (missing and not missing_as_empty):
        parts = []
        if missing and not missing_as_empty:
            parts.append("missing hypotheses for: " + ", ".join(missing))
        if extra:
            parts.append("hypotheses without reference: " + ", ".join(extra))
        raise DataError("utterance-id mismatch; " + "; ".join(parts))

    report = WerReport()
    for utt in sorted(refs):
        ref = tuple(refs[utt])
        res = levenshtein(ref, tuple(hyps.get(utt, ())))
        report.per_utterance[utt] = (res, len(ref))
        report.substitutions += res.substitutions
        report.insertions += res.insertions
        report.deletions += res.deletions
        report.ref_words += len(ref)
    if report.ref_words == 0:
        raise DataError("total reference length is zero")
    return report


def relative_change(baseline_wer: float, other_wer: float) -> float:
    """Signed relative change of ``other_wer`` against ``baseline_wer`` in percent."""
    if not baseline_wer > 0:
        raise ValueError(f"baseline WER must be positive, got {baseline_wer}")
    return 100.0 * (other_wer - baseline_wer) / baseline_wer


def format_relative(value: float) -> str:
    return f"{value:+.1f}" if round(value, 1) != 0 else "0.0"


def parse_transcripts(text: str, path=None) -> dict[str, tuple[str, ...]]:
    """Read ``utt-id<TAB>word word ...`` lines; a bare id is an empty sequence."""
    out: dict[str, tuple[str, ...]] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        utt, _, rest = line.partition("\t")
        utt = utt.strip()
        if not utt or any(c.isspace() for c in utt):
            raise DataError(f"malformed utterance id {utt!r}", path, lineno)
        if utt in out:
            raise DataError(f"duplicate utterance id {utt!r}", path, lineno)
        out[utt] = words_of(rest)
    return out


def render_transcripts(seqs: Mapping[str, Sequence[str]]) -> str:
    return "".join(f"{utt}\t{seq_key(seqs[utt])}\n" for utt in sorted(seqs))
