"""Command line: ``lupi-affect {generate,ingest,sweep,compare,report}``.

Exit codes: 0 success, 2 configuration error, 3 partial cell failure.
The runs root is ``$LUPI_RUNS_DIR`` (default ``./runs``).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import __version__
from .corpus import corpus_hash, validate_corpus
from .errors import ConfigurationError, CorpusFormatError
from .experiment.config import load_config, load_generator_config, schema_text
from .experiment.report import build_report
from .experiment.runner import RUNS_ENV, run_compare, run_dir, run_sweep
from .synthetic import generate_corpus

EXIT_OK, EXIT_CONFIG, EXIT_PARTIAL = 0, 2, 3

log = logging.getLogger("lupi_affect")


def cmd_generate(args):
    cfg = load_generator_config(args.config)
    try:
        generate_corpus(cfg, args.out, overwrite=args.overwrite)
    except FileExistsError as exc:
        raise ConfigurationError(str(exc)) from None
    print(f"corpus {args.out} ({cfg.n_participants} sessions) hash {corpus_hash(args.out)}")
    return EXIT_OK


def cmd_ingest(args):
    report = validate_corpus(args.corpus, dimension=args.dimension)
    text = json.dumps(report, indent=2, sort_keys=True) + "\n"
    if args.report:
        Path(args.report).write_text(text)
    else:
        sys.stdout.write(text)
    print(f"ok: {len(report['sessions'])} sessions, hash {report['hash']}", file=sys.stderr)
    return EXIT_OK


def _finish(outcome, phase):
    print(f"{phase}: {len(outcome.trained)} cells trained, "
          f"{len(outcome.status) - len(outcome.trained) - len(outcome.failed)} reused, {len(outcome.failed)} failed")
    for key in outcome.failed:
        print(f"  failed: {key}: {outcome.status[key][1]}", file=sys.stderr)
    return EXIT_PARTIAL if outcome.failed else EXIT_OK


def cmd_sweep(args):
    cfg = load_config(args.config)
    outcome = run_sweep(cfg, root=args.run_dir, resume=args.resume, jobs=args.jobs)
    return _finish(outcome, "sweep")


def cmd_compare(args):
    cfg = load_config(args.config)
    outcome = run_compare(cfg, root=args.run_dir, jobs=args.jobs)
    return _finish(outcome, "compare")


def cmd_report(args):
    cfg = load_config(args.config)
    root = Path(args.run_dir) if args.run_dir else run_dir(cfg)
    gaps = build_report(cfg, root)
    print(f"report written to {root / 'report'}")
    for g in gaps:
        print(f"  gap: {g}", file=sys.stderr)
    return EXIT_OK


def build_parser():
    p = argparse.ArgumentParser(prog="lupi-affect", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("--print-schema", action="store_true", help="print the experiment config schema and exit")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command")

    g = sub.add_parser("generate", help="write a synthetic corpus")
    g.add_argument("config", help="generator config (YAML/JSON; bare or under a 'generator' key)")
    g.add_argument("out", help="output corpus directory")
    g.add_argument("--overwrite", action="store_true", help="replace a non-empty output directory")
    g.set_defaults(func=cmd_generate)

    i = sub.add_parser("ingest", help="validate a corpus directory")
    i.add_argument("corpus")
    i.add_argument("--dimension", choices=("arousal", "valence"))
    i.add_argument("--report", help="write the validation report here instead of stdout")
    i.set_defaults(func=cmd_ingest)

    for name, func, help_ in (("sweep", cmd_sweep, "alpha sweep over teachers and window lengths"),
                              ("compare", cmd_compare, "repeated CV of best-alpha students against baselines"),
                              ("report", cmd_report, "tables and plots from existing results")):
        s = sub.add_parser(name, help=help_)
        s.add_argument("config")
        s.add_argument("--run-dir", help=f"results directory (default ${RUNS_ENV}/<name>)")
        if name != "report":
            s.add_argument("--jobs", type=int, help="parallel worker processes (overrides the config)")
        if name == "sweep":
            s.add_argument("--resume", action="store_true", help="skip cells whose result matches their hash")
        s.set_defaults(func=func)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s")
    if args.print_schema:
        sys.stdout.write(schema_text())
        return EXIT_OK
    if not args.command:
        parser.print_usage(sys.stderr)
        return EXIT_CONFIG
    try:
        return args.func(args)
    except CorpusFormatError as exc:
        print("corpus rejected:", file=sys.stderr)
        for d in exc.diagnostics:
            print(f"  {d}", file=sys.stderr)
        return EXIT_CONFIG
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
