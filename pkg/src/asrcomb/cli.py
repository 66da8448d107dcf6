"""Command line entry point: ``asrcomb <subcommand> ...``.

Exit status is 0 on success, 1 on usage errors and 2 on data errors.
Every subcommand computes all of its outputs before writing any file, so
a failing run leaves the file system untouched.
"""

from __future__ import annotations

import argparse
import os
import statistics
import sys
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

from . import __version__
from . import align, diversity, glexicon, mbr, nbest, smoothing
from .errors import DataError

STAGES = ("lexicon-build", "synth-ensemble", "mbr-combine", "score", "cwer", "smooth")
REPORT_HEADER = "metric\tsubject\tvalue"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


@dataclass
class Outcome:
    stdout: str = ""
    files: dict = field(default_factory=dict)  # Path -> str


def _read(path) -> str:
    try:
        with open(path, encoding="utf-8") as f:
            return f.read()
    except FileNotFoundError:
        raise DataError("no such file", path) from None
    except OSError as exc:
        raise DataError(exc.strerror or str(exc), path) from None


def _write_all(files: dict):
    for path, text in files.items():
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as f:
            f.write(text)
        os.replace(tmp, path)


def _floats(text, name):
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"{name}: expected comma-separated numbers, got {text!r}") from None


def _load_transcripts(path):
    return align.parse_transcripts(_read(path), path)


def _load_nbest(path):
    return nbest.parse_nbest(_read(path), Path(path).stem, path)


# --- subcommands ---------------------------------------------------------


def cmd_glex_build(args) -> Outcome:
    words = glexicon.read_word_list(_read(args.words))
    entries, rejected = glexicon.build_lexicon(words, not args.no_attributes)
    for r in rejected:
        print(f"rejected: {r.reason}", file=sys.stderr)
    if args.strict and rejected:
        raise DataError(f"{len(rejected)} word(s) rejected", args.words)
    text = glexicon.render_lexicon(entries)
    if args.out:
        return Outcome(files={args.out: text})
    return Outcome(stdout=text)


def cmd_glex_units(args) -> Outcome:
    entries = glexicon.parse_lexicon(_read(args.lexicon), args.lexicon)
    if not entries:
        raise DataError("lexicon is empty", args.lexicon)
    text = glexicon.render_inventory(glexicon.context_units(entries, args.context))
    if args.out:
        return Outcome(stdout=f"{args.context} units: {text.count(chr(10))}\n", files={args.out: text})
    return Outcome(stdout=text)


def cmd_score(args) -> Outcome:
    report = align.score_wer(
        _load_transcripts(args.hyp), _load_transcripts(args.ref), args.missing_empty
    )
    out = Outcome(stdout=report.summary_line() + "\n")
    if args.report:
        out.files[args.report] = report.render()
    elif args.verbose:
        out.stdout = report.render()
    return out


def _mbr_outcome(results, args) -> Outcome:
    out = Outcome(files={args.out: mbr.render_one_best(results)})
    if args.risks:
        out.files[args.risks] = mbr.render_risks(results)
    out.stdout = f"{args.action}d {len(results)} utterances\n"
    return out


def cmd_mbr_decode(args) -> Outcome:
    system = _load_nbest(args.nbest)
    results = mbr.combine_corpus([system], None, args.lm_scale, args.post_scale, jobs=args.jobs)
    return _mbr_outcome(results, args)


def cmd_mbr_combine(args) -> Outcome:
    systems = [_load_nbest(p) for p in args.nbest]
    lambdas = None
    if args.lambdas:
        values = _floats(args.lambdas, "--lambdas")
        if len(values) != len(systems):
            raise UsageError(f"--lambdas has {len(values)} values for {len(systems)} systems")
        try:
            lambdas = mbr.CombinationWeights(tuple(values))
        except ValueError as exc:
            raise UsageError(f"--lambdas: {exc}") from None
    results = mbr.combine_corpus(
        systems, lambdas, args.lm_scale, args.post_scale, args.intersect, args.jobs
    )
    return _mbr_outcome(results, args)


def cmd_cwer(args) -> Outcome:
    systems = [_load_transcripts(p) for p in args.hyp]
    value = diversity.cross_wer(systems)
    return Outcome(stdout=f"CWER={value:.1f} SYSTEMS={len(systems)} EXACT={value!r}\n")


def cmd_stats(args) -> Outcome:
    systems = [_load_transcripts(p) for p in args.hyp]
    stats = diversity.ensemble_stats(systems, _load_transcripts(args.ref), args.sample_std)
    lines = [f"{p}\tWER={w:.2f}" for p, w in zip(args.hyp, stats.wers)]
    kind = "sample" if args.sample_std else "population"
    lines.append(
        f"MEAN={stats.mean:.2f} STD={stats.std:.3f} ({kind}) CWER={stats.cwer:.1f}"
    )
    return Outcome(stdout="\n".join(lines) + "\n")


def cmd_smooth(args) -> Outcome:
    models = [smoothing.parse_bundle(_read(p), p) for p in args.bundle]
    X, y = smoothing.parse_dataset(_read(args.data), args.data)
    evaluator = smoothing.builtin_evaluator(X, y)
    if args.weights:
        weights = smoothing.parse_weights(_read(args.weights), args.weights)
        smoothed = smoothing.interpolate(models, weights)
        loss = evaluator(smoothed)
    else:
        weights, loss = smoothing.estimate_weights(
            models, evaluator, max_iters=args.max_iters, tol=args.tol
        )
        smoothed = smoothing.interpolate(models, weights)
    out = Outcome(files={args.out: smoothing.render_bundle(smoothed)})
    if args.weights_out:
        out.files[args.weights_out] = smoothing.render_weights(weights)
    singles = " ".join(f"{evaluator(m):.6f}" for m in models)
    out.stdout = f"LOSS={loss:.6f} SINGLE={singles}\n"
    return out


def cmd_checkpoints(args) -> Outcome:
    text = _read(args.available)
    try:
        available = sorted(int(tok) for tok in text.split())
    except ValueError as exc:
        raise DataError(str(exc), args.available) from None
    picked = smoothing.select_checkpoints(available, args.count, args.interval)
    return Outcome(stdout="".join(f"{i}\n" for i in picked))


def cmd_rfield(args) -> Outcome:
    rf = diversity.receptive_field(diversity.parse_layers(_read(args.layers), args.layers))
    return Outcome(stdout=f"LEFT={rf.left} RIGHT={rf.right}\n")


def cmd_synth(args) -> Outcome:
    out = Outcome()
    out_dir = Path(args.out_dir)
    if args.ref:
        refs = _load_transcripts(args.ref)
    else:
        refs = diversity.synth_references(args.ref_words, args.seed)
        out.files[out_dir / "ref.txt"] = align.render_transcripts(refs)
    systems = diversity.synth_ensemble(refs, args.systems, args.target_wer, args.seed)
    for s in systems:
        out.files[out_dir / f"{s.system_id}.nbest"] = nbest.render_nbest(s)
    out.stdout = f"wrote {len(systems)} systems over {len(refs)} utterances\n"
    return out


def cmd_pipeline(args) -> Outcome:
    config = {}
    base = Path(".")
    if args.config:
        config = parse_config(_read(args.config), args.config)
        base = Path(args.config).parent
    if args.seed is not None:
        config["seed"] = str(args.seed)
    report, files = run_pipeline(config, Path(args.out_dir), base)
    files[Path(args.out_dir) / "report.tsv"] = report
    return Outcome(stdout=report, files=files)


# --- pipeline ------------------------------------------------------------


def parse_config(text: str, path=None) -> dict:
    """``key = value`` lines; ``#`` starts a comment."""
    config = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep or not key.strip():
            raise DataError("expected 'key = value'", path, lineno)
        config[key.strip()] = value.strip()
    return config


class _Cfg:
    def __init__(self, config, base):
        self.config = config
        self.base = base

    def get(self, key, default=None, conv=str):
        if key not in self.config:
            return default
        try:
            return conv(self.config[key])
        except ValueError:
            raise DataError(f"bad value for {key}: {self.config[key]!r}") from None

    def path(self, key):
        value = self.config.get(key)
        return None if value is None else self.base / value

    def paths(self, key):
        value = self.config.get(key)
        if value is None:
            return None
        return [self.base / v.strip() for v in value.split(",") if v.strip()]


def _fmt(v) -> str:
    return f"{v:.6f}" if isinstance(v, float) else str(v)


def run_pipeline(config: dict, out_dir: Path, base: Path = Path(".")) -> tuple[str, dict]:
    """Run the configured stages in order and return (report, files)."""
    cfg = _Cfg(config, base)
    seed = cfg.get("seed", 0, int)
    stages = [s.strip() for s in cfg.get("stages", "synth-ensemble,mbr-combine,score,cwer").split(",")]
    unknown = [s for s in stages if s not in STAGES]
    if unknown:
        raise DataError(f"unknown pipeline stage(s): {', '.join(unknown)}")
    if len(set(stages)) != len(stages):
        raise DataError("pipeline stage names must be unique")

    files = {}
    rows = []
    refs = systems = combined = None

    for stage in stages:
        try:
            if stage == "lexicon-build":
                words_path = cfg.path("lexicon-build.words")
                if words_path is None:
                    raise DataError("lexicon-build.words is required")
                entries, rejected = glexicon.build_lexicon(
                    glexicon.read_word_list(_read(words_path)),
                    cfg.get("lexicon-build.attributes", "true") == "true",
                )
                files[out_dir / "lexicon.txt"] = glexicon.render_lexicon(entries)
                rows += [("lexicon_entries", "lexicon", len(entries)),
                         ("lexicon_rejected", "lexicon", len(rejected))]

            elif stage == "synth-ensemble":
                ref_path = cfg.path("synth-ensemble.refs")
                if ref_path is not None:
                    refs = _load_transcripts(ref_path)
                else:
                    refs = diversity.synth_references(
                        cfg.get("synth-ensemble.ref_words", 10000, int),
                        seed,
                        cfg.get("synth-ensemble.vocab_size", 500, int),
                    )
                files[out_dir / "ref.txt"] = align.render_transcripts(refs)
                systems = diversity.synth_ensemble(
                    refs,
                    cfg.get("synth-ensemble.systems", 3, int),
                    cfg.get("synth-ensemble.target_wer", 25.0, float),
                    seed,
                )
                for s in systems:
                    files[out_dir / f"{s.system_id}.nbest"] = nbest.render_nbest(s)

            elif stage == "mbr-combine":
                nb_paths = cfg.paths("mbr-combine.nbest")
                if nb_paths:
                    systems = [_load_nbest(p) for p in nb_paths]
                if not systems:
                    raise DataError("no systems: run synth-ensemble first or set mbr-combine.nbest")
                lam = cfg.get("mbr-combine.lambdas")
                lambdas = mbr.CombinationWeights(tuple(_floats(lam, "lambdas"))) if lam else None
                results = mbr.combine_corpus(
                    systems,
                    lambdas,
                    cfg.get("mbr-combine.lm_scale", 1.0, float),
                    cfg.get("mbr-combine.post_scale", 1.0, float),
                    cfg.get("mbr-combine.intersect", "false") == "true",
                    cfg.get("mbr-combine.jobs", 1, int),
                )
                combined = {u: r.chosen for u, r in results.items()}
                files[out_dir / "combined.txt"] = mbr.render_one_best(results)

            elif stage == "score":
                ref_path = cfg.path("score.ref")
                if ref_path is not None:
                    refs = _load_transcripts(ref_path)
                if refs is None or systems is None:
                    raise DataError("score needs references and systems")
                singles = []
                for s in systems:
                    wer = align.score_wer(s.one_best(), refs).wer
                    singles.append(wer)
                    rows.append(("wer", s.system_id, wer))
                rows.append(("wer_mean", "ensemble", sum(singles) / len(singles)))
                rows.append(("wer_std", "ensemble", statistics.pstdev(singles)))
                if combined is not None:
                    cwer_ = align.score_wer(combined, refs).wer
                    rows.append(("wer", "combined", cwer_))
                    rows.append(("rel_vs_best", "combined", align.relative_change(min(singles), cwer_)))

            elif stage == "cwer":
                if systems is None:
                    raise DataError("cwer needs systems")
                rows.append(("cwer", "ensemble", diversity.cross_wer([s.one_best() for s in systems])))

            elif stage == "smooth":
                bundle_paths = cfg.paths("smooth.bundles")
                data_path = cfg.path("smooth.data")
                if not bundle_paths or data_path is None:
                    raise DataError("smooth.bundles and smooth.data are required")
                models = [smoothing.parse_bundle(_read(p), p) for p in bundle_paths]
                evaluator = smoothing.builtin_evaluator(*smoothing.parse_dataset(_read(data_path), data_path))
                weights, loss = smoothing.estimate_weights(
                    models,
                    evaluator,
                    max_iters=cfg.get("smooth.max_iters", 200, int),
                    tol=cfg.get("smooth.tol", 1e-8, float),
                )
                files[out_dir / "smoothed.pb"] = smoothing.render_bundle(smoothing.interpolate(models, weights))
                files[out_dir / "smoothed.weights"] = smoothing.render_weights(weights)
                rows.append(("loss", "last_checkpoint", evaluator(models[-1])))
                rows.append(("loss", "smoothed", loss))
        except (DataError, ValueError) as exc:
            raise DataError(f"stage {stage} failed: {exc}") from exc

    report = REPORT_HEADER + "\n" + "".join(f"{m}\t{s}\t{_fmt(v)}\n" for m, s, v in rows)
    return report, files


# --- argument parsing ----------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="asrcomb", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"asrcomb {__version__}")
    sub = p.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True

    glex = sub.add_parser("glex", help="graphemic lexicon tools")
    gsub = glex.add_subparsers(dest="action", metavar="ACTION", parser_class=_Parser)
    gsub.required = True
    b = gsub.add_parser("build", help="build a graphemic lexicon from a word list")
    b.add_argument("--words", required=True)
    b.add_argument("--out")
    b.add_argument("--no-attributes", action="store_true", help="do not mark DA/DB attributes")
    b.add_argument("--strict", action="store_true", help="fail if any word is rejected")
    b.set_defaults(func=cmd_glex_build)
    u = gsub.add_parser("units", help="list context-dependent unit inventory")
    u.add_argument("--lexicon", required=True)
    u.add_argument("--context", choices=("mono", "left-bi"), default="mono")
    u.add_argument("--out")
    u.set_defaults(func=cmd_glex_units)

    s = sub.add_parser("score", help="WER of a 1-best file against references")
    s.add_argument("--hyp", required=True)
    s.add_argument("--ref", required=True)
    s.add_argument("--missing-empty", action="store_true", help="score missing hypotheses as empty")
    s.add_argument("--report", help="write per-utterance report here")
    s.add_argument("-v", "--verbose", action="store_true")
    s.set_defaults(func=cmd_score)

    m = sub.add_parser("mbr", help="N-best MBR decoding and combination")
    msub = m.add_subparsers(dest="action", metavar="ACTION", parser_class=_Parser)
    msub.required = True
    for name, func in (("decode", cmd_mbr_decode), ("combine", cmd_mbr_combine)):
        a = msub.add_parser(name)
        if name == "decode":
            a.add_argument("--nbest", required=True)
        else:
            a.add_argument("--nbest", required=True, action="append")
            a.add_argument("--lambdas", help="comma-separated system weights (default uniform)")
            a.add_argument("--intersect", action="store_true", help="combine common utterances only")
        a.add_argument("--lm-scale", type=float, default=1.0)
        a.add_argument("--post-scale", type=float, default=1.0)
        a.add_argument("--out", required=True)
        a.add_argument("--risks", help="dump per-candidate risks here")
        a.add_argument("--jobs", type=int, default=1)
        a.set_defaults(func=func)

    c = sub.add_parser("cwer", help="cross WER between system 1-best outputs")
    c.add_argument("--hyp", required=True, action="append")
    c.set_defaults(func=cmd_cwer)

    st = sub.add_parser("stats", help="per-system WER, mean, std and cross WER")
    st.add_argument("--hyp", required=True, action="append")
    st.add_argument("--ref", required=True)
    st.add_argument("--sample-std", action="store_true", help="use the sample standard deviation")
    st.set_defaults(func=cmd_stats)

    sm = sub.add_parser("smooth", help="layer-wise checkpoint smoothing")
    sm.add_argument("--bundle", required=True, action="append")
    sm.add_argument("--data", required=True)
    sm.add_argument("--out", required=True)
    sm.add_argument("--weights-out")
    sm.add_argument("--weights", help="apply these weights instead of estimating them")
    sm.add_argument("--max-iters", type=int, default=200)
    sm.add_argument("--tol", type=float, default=1e-8)
    sm.set_defaults(func=cmd_smooth)

    ck = sub.add_parser("checkpoints", help="select checkpoints for smoothing")
    ck.add_argument("--available", required=True, help="file of iteration numbers")
    ck.add_argument("--count", type=int, required=True)
    ck.add_argument("--interval", type=int, required=True)
    ck.set_defaults(func=cmd_checkpoints)

    rf = sub.add_parser("rfield", help="receptive field of a layer stack")
    rf.add_argument("--layers", required=True)
    rf.set_defaults(func=cmd_rfield)

    sy = sub.add_parser("synth", help="synthetic ensemble by corrupting references")
    sy.add_argument("--ref", help="reference file (default: generate random references)")
    sy.add_argument("--ref-words", type=int, default=10000)
    sy.add_argument("--systems", type=int, default=3)
    sy.add_argument("--target-wer", type=float, default=25.0)
    sy.add_argument("--seed", type=int, default=0)
    sy.add_argument("--out-dir", required=True)
    sy.set_defaults(func=cmd_synth)

    pl = sub.add_parser("pipeline", help="run a configured end-to-end pipeline")
    pl.add_argument("--config")
    pl.add_argument("--seed", type=int)
    pl.add_argument("--out-dir", required=True)
    pl.set_defaults(func=cmd_pipeline)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        outcome = args.func(args)
    except SystemExit as exc:  # --help / --version
        return exc.code or 0
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except DataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    _write_all(outcome.files)
    sys.stdout.write(outcome.stdout)
    return 0


if __name__ == "__main__":
    sys.exit(main())
