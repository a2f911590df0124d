"""Command-line entry point.

Subcommands: run, sweep, compare, estimate-k, export-corpus. Configs are JSON
files with nested sections; any field can be overridden with repeated
``--set section.field=value`` flags. Exit codes: 0 success, 2 configuration
error, 3 runtime failure (completed stage checkpoints are kept).
"""

import argparse
import os
import sys

from .config import apply_overrides, load_config, preset
from .data import build_cgid_split, export_corpus
from .errors import CgidError, ConfigurationError
from .network import encoder_forward
from .report import compare_reports
from .runner import build_corpus, run_experiment, run_single, sweep, _step_seed
from .cluster import estimate_num_classes


def _add_config_args(p):
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--preset", help="named preset (e.g. desk-banking-like)")
    p.add_argument("--set", dest="overrides", action="append", default=[],
                   metavar="KEY=VALUE", help="override a config field by "
                   "dotted path; repeatable")


def _resolve_config(args):
    if args.config and args.preset:
        raise ConfigurationError("give either --config or --preset, not both")
    if args.config:
        config = load_config(args.config)
    elif args.preset:
        config = preset(args.preset)
    else:
        raise ConfigurationError("one of --config or --preset is required")
    if getattr(args, "method", None):
        config = apply_overrides(config, [f"method={args.method}"])
    if getattr(args, "seeds", None):
        config = apply_overrides(config, [f"seeds=[{args.seeds}]"])
    if args.overrides:
        config = apply_overrides(config, args.overrides)
    return config


def _cmd_run(args):
    config = _resolve_config(args)
    run_experiment(config, args.out, resume=args.resume)
    print(f"wrote {os.path.join(args.out, 'report.tsv')}")
    return 0


def _cmd_sweep(args):
    config = _resolve_config(args)
    methods = args.methods.split(",") if args.methods else None
    ratios = ([float(r) for r in args.ratios.split(",")]
              if args.ratios else None)
    seeds = ([int(s) for s in args.seeds.split(",")]
             if args.seeds else None)
    workers = args.workers or int(os.environ.get("CGID_WORKERS", "1"))
    dirs = sweep(config, args.out, methods=methods, ratios=ratios,
                 seeds=seeds, workers=workers)
    print("\n".join(dirs))
    return 0


def _cmd_compare(args):
    _, text = compare_reports(args.reports)
    print(text, end="")
    return 0


def _cmd_estimate_k(args):
    config = _resolve_config(args)
    seed = config.seeds[0]
    corpus = build_corpus(config, seed)
    split = build_cgid_split(corpus, config.split.ood_ratio,
                             config.split.num_stages, seed=seed)
    if args.raw_features:
        extract = lambda x: x
    else:
        outcome = run_single(config, seed)
        encoder = outcome.model.encoder
        extract = lambda x: encoder_forward(encoder, x, 0.0, 0)[0]
    print("stage\ttrue_k\tk_prime\testimate")
    for t in range(1, split.num_stages + 1):
        true_k = split.stage_size(t)
        k_prime = config.k.k_prime or 2 * true_k
        feats = extract(split.ood_train[t])
        k_hat = estimate_num_classes(feats, k_prime,
                                     seed=_step_seed(seed, t, 0x52))
        print(f"{t}\t{true_k}\t{k_prime}\t{k_hat}")
    return 0


def _cmd_export_corpus(args):
    config = _resolve_config(args)
    corpus = build_corpus(config, config.seeds[0])
    export_corpus(corpus, args.out)
    print(f"wrote {args.out} ({len(corpus.labels)} rows, "
          f"{corpus.num_classes} classes)")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="cgid",
        description="Continual discovery of new classes from unlabeled "
                    "streams: staged experiments, baselines, and reports.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run one experiment config")
    _add_config_args(p)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--method", choices=["plrd", "kmeans", "deepaligned",
                                        "e2e"])
    p.add_argument("--seeds", help="comma-separated seed list")
    p.add_argument("--resume", action="store_true",
                   help="continue from the latest stage checkpoint")
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("sweep", help="grid over methods/ratios/seeds")
    _add_config_args(p)
    p.add_argument("--out", required=True)
    p.add_argument("--methods", help="comma-separated method list")
    p.add_argument("--ratios", help="comma-separated OOD ratios")
    p.add_argument("--seeds", help="comma-separated seed list")
    p.add_argument("--workers", type=int,
                   help="parallel workers (default $CGID_WORKERS or 1)")
    p.set_defaults(func=_cmd_sweep)

    p = sub.add_parser("compare", help="side-by-side medians of reports")
    p.add_argument("reports", nargs="+", help="report.jsonl paths")
    p.set_defaults(func=_cmd_compare)

    p = sub.add_parser("estimate-k", help="per-stage class-count estimates")
    _add_config_args(p)
    p.add_argument("--raw-features", action="store_true",
                   help="estimate on raw inputs instead of a trained encoder")
    p.set_defaults(func=_cmd_estimate_k)

    p = sub.add_parser("export-corpus", help="write a generated corpus "
                       "in the embedding file format")
    _add_config_args(p)
    p.add_argument("--out", required=True, help="output file")
    p.set_defaults(func=_cmd_export_corpus)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except CgidError as exc:
        print(f"run failed: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
