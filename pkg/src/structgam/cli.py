"""Command-line front end.

Subcommands: ``fit`` (dataset + formula -> model JSON), ``predict``,
``terms`` (plot-ready long tables, optionally rendering figures),
``sample`` (raw posterior draws), and ``simulate`` (synthetic fixtures with
a ground-truth file).  Exit codes: 0 success, 2 fit failure, 3 input error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

from . import model_io, report
from .data import ingest
from .errors import FitError, StructgamError
from .fit import FitOptions, fit as fit_model

EXIT_OK = 0
EXIT_FIT = 2
EXIT_INPUT = 3


def _add_data_args(p):
    p.add_argument("--data", required=True, help="CSV file")
    p.add_argument("--schema", required=True, help="schema JSON file")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="structgam",
        description="penalized-spline additive models with structured-"
                    "covariate terms",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="fit a model and write a model file")
    _add_data_args(p)
    p.add_argument("--formula", required=True)
    p.add_argument("--family", default="gaussian",
                   choices=["gaussian", "poisson", "negbin"])
    p.add_argument("--out", required=True, help="output model JSON path")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--gamma", type=float, default=1.0,
                   help="GCV degrees-of-freedom inflation (default 1.0)")
    p.add_argument("--kappa", type=float, default=None,
                   help="fix the negbin dispersion instead of estimating it")

    p = sub.add_parser("predict", help="predict from a model file")
    p.add_argument("--model", required=True)
    _add_data_args(p)
    p.add_argument("--out", required=True, help="output CSV path")
    p.add_argument("--scale", default="link",
                   choices=["link", "response", "terms"])

    p = sub.add_parser(
        "terms",
        help="export plot-ready term tables (and optionally figures)")
    p.add_argument("--model", required=True)
    _add_data_args(p)
    p.add_argument("--out", required=True, help="output CSV path")
    p.add_argument("--term", action="append", default=None,
                   help="term label (repeatable; default: all smooth terms)")
    p.add_argument("--grid", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--samples", type=int, default=1000,
                   help="posterior draws for sampled uncertainty bands")
    p.add_argument("--plot-dir", default=None,
                   help="also render one PNG figure per term into this "
                        "directory")

    p = sub.add_parser("sample", help="write raw posterior coefficient draws")
    p.add_argument("--model", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("simulate", help="generate a synthetic dataset + truth")
    p.add_argument("--kind", required=True, choices=["vcm", "sofr", "dlm"])
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--t", type=int, default=None, help="matrix width T")
    p.add_argument("--sigma", type=float, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-prefix", required=True,
                   help="writes <prefix>.csv, <prefix>_schema.json, "
                        "<prefix>_truth.json")
    return parser


def _load_checked(args):
    dataset = ingest(args.data, args.schema)
    model = model_io.load_model(args.model)
    got = dataset.schema.hash()
    if got != model.schema_hash:
        raise StructgamError(
            f"schema hash mismatch: the model was fitted against schema "
            f"{model.schema_hash[:12]}... but {args.schema} hashes to "
            f"{got[:12]}...; refusing to reuse it (the schema was edited or "
            "belongs to a different dataset)"
        )
    return dataset, model


def cmd_fit(args) -> int:
    dataset = ingest(args.data, args.schema)
    options = FitOptions(gamma=args.gamma, kappa=args.kappa, seed=args.seed)
    model = fit_model(dataset, args.formula, family=args.family,
                      options=options)
    model_io.save_model(model, args.out)
    print(f"wrote {args.out} (deviance {model.deviance:.6g}, "
          f"total EDF {model.edf_total:.3f}, AIC {model.aic:.6g})")
    return EXIT_OK


def cmd_predict(args) -> int:
    dataset, model = _load_checked(args)
    report.write_predictions_csv(model, dataset, args.out, scale=args.scale)
    print(f"wrote {args.out}")
    return EXIT_OK


def cmd_terms(args) -> int:
    dataset, model = _load_checked(args)
    report.write_terms_csv(model, dataset, args.out, terms=args.term,
                           n_grid=args.grid, seed=args.seed,
                           n_samples=args.samples)
    print(f"wrote {args.out}")
    if args.plot_dir:
        from .plots import render_all_terms

        written = render_all_terms(model, dataset, args.plot_dir,
                                   n_grid=args.grid, seed=args.seed,
                                   n_samples=args.samples)
        for path in written:
            print(f"wrote {path}")
    return EXIT_OK


def cmd_sample(args) -> int:
    model = model_io.load_model(args.model)
    report.write_samples_csv(model, args.out, n_samples=args.n,
                             seed=args.seed)
    print(f"wrote {args.out}")
    return EXIT_OK


def cmd_simulate(args) -> int:
    from .data import write_csv, write_schema
    from .simulate import simulate

    dataset, truth = simulate(args.kind, n=args.n, T=args.t, seed=args.seed,
                              sigma=args.sigma)
    csv_path = f"{args.out_prefix}.csv"
    schema_path = f"{args.out_prefix}_schema.json"
    truth_path = f"{args.out_prefix}_truth.json"
    write_csv(dataset, csv_path)
    write_schema(dataset.schema, schema_path)
    truth = {"format_version": 1, "seed": args.seed, **truth}
    with open(truth_path, "w", encoding="utf-8") as fh:
        json.dump(truth, fh, sort_keys=True, separators=(",", ":"))
        fh.write("\n")
    for path in (csv_path, schema_path, truth_path):
        print(f"wrote {path}")
    return EXIT_OK


_COMMANDS = {
    "fit": cmd_fit,
    "predict": cmd_predict,
    "terms": cmd_terms,
    "sample": cmd_sample,
    "simulate": cmd_simulate,
}


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    args = build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except FitError as exc:
        print(f"fit error: {exc}", file=sys.stderr)
        return EXIT_FIT
    except StructgamError as exc:
        print(f"error [{args.command}]: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except OSError as exc:
        print(f"error [{args.command}]: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
