"""Acceptance gate: one test family per criterion, reported as ACn PASS/FAIL."""

import itertools
import os
import random
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np
import pytest

from asrcomb.align import edit_distance, levenshtein, relative_change, score_wer
from asrcomb.cli import main
from asrcomb.diversity import (
    Spliced,
    cross_wer,
    receptive_field,
    synth_ensemble,
    synth_references,
)
from asrcomb.mbr import CombinationWeights, combine_corpus, mbr_combine
from asrcomb.nbest import Hypothesis, NBestList, compute_posteriors
from asrcomb.smoothing import (
    ParamBundle,
    builtin_evaluator,
    estimate_weights,
    render_bundle,
    select_checkpoints,
)

from oracles import exhaustive_mbr, grid_best_linear_ce


def cli(argv, capsys):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


# --- AC1 -----------------------------------------------------------------

EXCERPT = (
    "B.B.C.'s\tb;DB b;DB c;DADB s\n"
    "information\ti n f o r m a t i o n\n"
    "moon\tm o o n\n"
    "the\tt h e\n"
)


def test_ac1_lexicon_excerpt(tmp_path, capsys):
    words = tmp_path / "words.txt"
    words.write_text("the\nmoon\nB.B.C.'s\ninformation\n")
    out = tmp_path / "lex.txt"
    code, _, _ = cli(["glex", "build", "--words", words, "--out", out], capsys)
    assert code == 0
    assert out.read_bytes() == EXCERPT.encode()


# --- AC2 -----------------------------------------------------------------


def test_ac2_receptive_field():
    tdnn = [(-1, 0, 1), (-1, 0, 1), (-1, 0, 1, 2), (-3, 0, 3), (-3, 0, 3), (-6, -3, 0), (0,)]
    rf = receptive_field([Spliced(o) for o in tdnn])
    assert (rf.left, rf.right) == (15, 10)
    rf = receptive_field([Spliced(tuple(range(-10, 11)))])
    assert (rf.left, rf.right) == (10, 10)


# --- AC3 -----------------------------------------------------------------

RELATIVE_ROWS = [
    ("tdnn_ph_single", 27.8, 30.7, 10.4),
    ("tdnn_ph_comb", 27.8, 26.3, -5.4),
    ("tdnn_gr_single", 24.4, 26.9, 10.3),
    ("tdnn_gr_comb", 24.4, 23.0, -5.7),
    ("blstm_ph_single", 25.0, 26.7, 6.8),
    ("blstm_ph_comb", 25.0, 23.2, -7.2),
    ("blstm_gr_single", 23.4, 25.0, 6.8),
    ("blstm_gr_comb", 23.4, 21.7, -7.3),
    ("smooth_ph", 23.4, 21.7, -7.3),
    ("smooth_gr", 21.5, 20.3, -5.6),
]


@pytest.mark.parametrize("base,other,expected", [r[1:] for r in RELATIVE_ROWS],
                         ids=[r[0] for r in RELATIVE_ROWS])
def test_ac3_relative_wer(base, other, expected):
    got = round(relative_change(base, other), 1)
    assert abs(got - expected) <= 0.05, f"{base} -> {other}: {got:+.1f}, expected {expected:+.1f}"


# --- AC4 -----------------------------------------------------------------

SYMBOLS = ["a", "b", "c", "d"]


def random_system(rng, utt, vocab):
    hyps = []
    for _ in range(rng.randint(1, 6)):
        words = tuple(rng.choice(vocab) for _ in range(rng.randint(0, 4)))
        hyps.append(Hypothesis(words, rng.uniform(-8, 0), rng.uniform(-4, 0)))
    return NBestList(utt, hyps)


@pytest.mark.parametrize("block", range(4))
def test_ac4_mbr_oracle(block):
    mismatches = []
    for seed in range(block * 60, (block + 1) * 60):
        rng = random.Random(f"ac4/{seed}")
        vocab = SYMBOLS[: rng.randint(1, 4)]
        lm_scale, post_scale = rng.choice([0.5, 1.0, 2.0]), rng.choice([0.3, 1.0])
        posts = [
            compute_posteriors(random_system(rng, "u", vocab), lm_scale, post_scale)
            for _ in range(rng.randint(1, 3))
        ]
        raw = [rng.randint(1, 5) for _ in posts]
        lambdas = CombinationWeights(tuple(raw))
        res = mbr_combine(posts, lambdas)
        chosen, risk, table = exhaustive_mbr([p.entries for p in posts], lambdas.weights)
        if res.chosen != chosen or res.risk != risk or dict(res.risks) != table:
            mismatches.append(seed)
    assert mismatches == []


# --- AC5 -----------------------------------------------------------------


def test_ac5_levenshtein_oracle():
    seqs = [s for n in range(7) for s in itertools.product("xyz", repeat=n)]
    assert len(seqs) == 1093
    memo = {}

    # plain recursion on word suffixes, memoised across all pairs
    def naive(a, b):
        key = (a, b)
        if key not in memo:
            if not a or not b:
                memo[key] = len(a) + len(b)
            else:
                memo[key] = min(naive(a[1:], b) + 1, naive(a, b[1:]) + 1,
                                naive(a[1:], b[1:]) + (a[0] != b[0]))
        return memo[key]

    bad = []
    for a in seqs:
        for b in seqs:
            d = naive(a, b)
            res = levenshtein(a, b)
            if res.distance != d or res.substitutions + res.insertions + res.deletions != d:
                bad.append((a, b))
            elif edit_distance(a, b) != d:
                bad.append((a, b))
    assert bad == []


# --- AC6 -----------------------------------------------------------------


def test_ac6_cross_wer_hand_cases():
    one = [{"u": ("a", "b", "c")}, {"u": ("a", "b", "d")}]
    two = [{"u": ("a", "b")}, {"u": ("a", "b", "c")}]
    assert abs(cross_wer(one) - 100 / 3) <= 1e-9
    assert abs(cross_wer(two) - 500 / 12) <= 1e-9
    assert round(cross_wer(one), 1) == 33.3 and round(cross_wer(two), 1) == 41.7


@pytest.mark.parametrize("seed", range(5))
def test_ac6_cwer_permutation_invariance(seed):
    refs = synth_references(300, seed)
    systems = [s.one_best() for s in synth_ensemble(refs, 4, 30, seed)]
    base = cross_wer(systems)
    for perm in itertools.permutations(range(4)):
        assert cross_wer([systems[i] for i in perm]) == pytest.approx(base, rel=1e-12, abs=1e-12)


# --- AC7 -----------------------------------------------------------------


def combination_trial(seed):
    refs = synth_references(10_000, seed)
    systems = synth_ensemble(refs, 3, 25.0, seed)
    singles = [score_wer(s.one_best(), refs).wer for s in systems]
    combined = combine_corpus(systems)
    wer = score_wer({u: r.chosen for u, r in combined.items()}, refs).wer
    return singles, wer


def test_ac7_combination_gain():
    with ProcessPoolExecutor(max_workers=min(8, os.cpu_count() or 1)) as pool:
        trials = list(pool.map(combination_trial, range(50)))
    below_mean = sum(wer < np.mean(singles) for singles, wer in trials)
    worst_ok = all(wer <= max(singles) for singles, wer in trials)
    print(f"combined below mean in {below_mean}/50 trials")
    assert below_mean >= 45
    assert worst_ok


# --- AC8 -----------------------------------------------------------------


def toy(seed, num_models, classes=2):
    rng = np.random.default_rng(1000 + seed)
    X = rng.normal(size=(40, 3))
    W_true = rng.normal(size=(classes, 3)) * 1.5
    y = np.argmax(X @ W_true.T + rng.gumbel(size=(40, classes)), axis=1)
    Ws = [W_true + rng.normal(size=(classes, 3)) for _ in range(num_models)]
    bs = [rng.normal(size=classes) for _ in range(num_models)]
    return X, y, Ws, bs, [ParamBundle({"W": W, "b": b}) for W, b in zip(Ws, bs)]


@pytest.mark.parametrize("num_models,classes,seed",
                         [(1, 2, 0), (2, 2, 0), (2, 2, 1), (2, 3, 2), (3, 2, 3), (3, 2, 4)])
def test_ac8_smoothing_grid_oracle(num_models, classes, seed):
    X, y, Ws, bs, models = toy(seed, num_models, classes)
    _, loss = estimate_weights(models, builtin_evaluator(X, y))
    assert abs(loss - grid_best_linear_ce(Ws, bs, X, y)) <= 1e-3


@pytest.mark.parametrize("seed", range(6))
def test_ac8_smoothing_vertex_dominance(seed):
    X, y, _, _, models = toy(50 + seed, 2 + seed % 3)
    evaluate = builtin_evaluator(X, y)
    _, loss = estimate_weights(models, evaluate)
    assert loss <= min(evaluate(m) for m in models) + 1e-6


def test_ac8_smoothing_scalar_example():
    models = [ParamBundle({"x": [0.0]}), ParamBundle({"x": [1.0]})]
    weights, _ = estimate_weights(models, lambda b: (b["x"][0] - 0.3) ** 2)
    np.testing.assert_allclose(weights.weights["x"], [0.7, 0.3], atol=1e-2)


def test_ac8_smoothing_checkpoint_selection():
    assert select_checkpoints(list(range(1, 121)), 20, 6) == list(range(120, 0, -6))


# --- AC9 -----------------------------------------------------------------


def snapshot(root):
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


@pytest.fixture(scope="module")
def inputs(tmp_path_factory):
    d = tmp_path_factory.mktemp("inputs")
    (d / "words.txt").write_text("B.B.C.'s\ninformation\nmoon\nthe\nrock'n'roll\nx-ray\n9\n")
    (d / "layers.txt").write_text("splice -1,0,1\nrecur 4,0\nsplice -3,0,3\n")
    (d / "avail.txt").write_text("\n".join(map(str, range(1, 121))) + "\n")
    assert main(["synth", "--ref-words", "3000", "--systems", "3", "--seed", "5",
                 "--out-dir", str(d / "synth")]) == 0
    X, y, _, _, models = toy(9, 3)
    (d / "data.tsv").write_text("".join(
        f"{lab}\t{' '.join(repr(float(v)) for v in row)}\n" for lab, row in zip(y, X)))
    for k, m in enumerate(models):
        (d / f"ck{k}.pb").write_text(render_bundle(m))
    (d / "lex.txt").write_text(EXCERPT)
    (d / "pipe.cfg").write_text(
        "stages = lexicon-build, synth-ensemble, mbr-combine, score, cwer, smooth\n"
        f"lexicon-build.words = {d / 'words.txt'}\n"
        "synth-ensemble.ref_words = 2000\n"
        "mbr-combine.jobs = 3\n"
        f"smooth.bundles = {d / 'ck0.pb'},{d / 'ck1.pb'},{d / 'ck2.pb'}\n"
        f"smooth.data = {d / 'data.tsv'}\n"
    )
    return d


def commands(d, out):
    s = d / "synth"
    nb = [x for k in (1, 2, 3) for x in ("--nbest", s / f"sys{k}.nbest")]
    return {
        "glex_build": ["glex", "build", "--words", d / "words.txt", "--out", out / "lex"],
        "glex_units": ["glex", "units", "--lexicon", d / "lex.txt", "--context", "left-bi",
                       "--out", out / "units"],
        "score": ["score", "--hyp", s / "ref.txt", "--ref", s / "ref.txt", "--report", out / "rep"],
        "mbr_decode": ["mbr", "decode", "--nbest", s / "sys1.nbest", "--out", out / "dec",
                       "--risks", out / "risks"],
        "mbr_combine": ["mbr", "combine", *nb, "--lambdas", "1,2,3", "--out", out / "comb",
                        "--risks", out / "risks"],
        "mbr_combine_jobs": ["mbr", "combine", *nb, "--lambdas", "1,2,3", "--out", out / "comb",
                             "--risks", out / "risks", "--jobs", "3"],
        "cwer": ["cwer", "--hyp", out / "comb_in1", "--hyp", out / "comb_in2"],
        "stats": ["stats", "--hyp", out / "comb_in1", "--hyp", out / "comb_in2", "--ref", s / "ref.txt"],
        "smooth": ["smooth", "--bundle", d / "ck0.pb", "--bundle", d / "ck1.pb", "--bundle", d / "ck2.pb",
                   "--data", d / "data.tsv", "--out", out / "s.pb", "--weights-out", out / "s.w"],
        "checkpoints": ["checkpoints", "--available", d / "avail.txt", "--count", "20", "--interval", "6"],
        "rfield": ["rfield", "--layers", d / "layers.txt"],
        "synth": ["synth", "--ref-words", "2000", "--seed", "11", "--out-dir", out / "syn"],
        "pipeline": ["pipeline", "--config", d / "pipe.cfg", "--seed", "4", "--out-dir", out / "pipe"],
    }


def prepare(d, out):
    # cwer/stats take 1-best files: derive them once from the synthetic N-bests
    out.mkdir(parents=True)
    for k in (1, 2):
        assert main(["mbr", "decode", "--nbest", str(d / "synth" / f"sys{k}.nbest"),
                     "--out", str(out / f"comb_in{k}")]) == 0


@pytest.mark.parametrize("name", list(commands(Path("."), Path("."))))
def test_ac9_determinism(name, inputs, tmp_path, capsys):
    runs = []
    for rep in ("one", "two"):
        out = tmp_path / rep
        prepare(inputs, out)
        capsys.readouterr()
        code, stdout, _ = cli(commands(inputs, out)[name], capsys)
        assert code == 0
        runs.append((stdout.replace(str(out), "<out>"), snapshot(out)))
    assert runs[0] == runs[1]


def test_ac9_determinism_parallel_matches_serial(inputs, tmp_path, capsys):
    results = []
    for jobs in ("1", "3"):
        out = tmp_path / jobs
        out.mkdir()
        cmd = commands(inputs, out)["mbr_combine"] + ["--jobs", jobs]
        assert cli(cmd, capsys)[0] == 0
        results.append(snapshot(out))
    assert results[0] == results[1]
