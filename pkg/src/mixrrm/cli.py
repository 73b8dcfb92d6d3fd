"""Command-line front end: fit, predict, betas, lognormal, reshape.

Results go to stdout, diagnostics to stderr.  Exit codes: 0 success,
1 usage or data error, 2 non-convergence (results are still emitted).
Flag names mirror the estimation options this toolkit descends from
(--id, --group, --alternatives, --rand, --ln, --nrep, --burn, ...), and no
command uses any source of randomness, so identical invocations produce
identical outputs.

Any numeric-heavy import happens after ``--threads`` is applied, so the
flag can cap the linear-algebra worker threads.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

from .errors import Error


class _Parser(argparse.ArgumentParser):
    """argparse exits with status 2 on usage errors; the contract wants 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _add_data_arguments(parser, with_model=False):
    parser.add_argument("data", help="long-format CSV file")
    parser.add_argument("--choice", default="choice",
                        help="0/1 chosen-alternative column (default: choice)")
    parser.add_argument("--id", default="id", dest="id_col",
                        help="individual identifier column (default: id)")
    parser.add_argument("--group", default="cs",
                        help="choice-situation identifier column (default: cs)")
    parser.add_argument("--alternatives", default="altern",
                        help="alternative identifier column (default: altern)")
    if with_model:
        parser.add_argument("--fixed", nargs="*", default=[],
                            help="attributes with fixed coefficients")
        parser.add_argument("--rand", nargs="*", default=[],
                            help="attributes with random coefficients")
        parser.add_argument("--ln", type=int, default=0,
                            help="last # of --rand coefficients are log-normal")


def _add_draw_arguments(parser):
    parser.add_argument("--nrep", type=int, default=None,
                        help="number of Halton draws")
    parser.add_argument("--burn", type=int, default=None,
                        help="initial Halton elements to drop")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="mixrrm",
                     description="Random regret minimization models, classical "
                                 "and mixed, by maximum simulated likelihood.")
    parser.add_argument("--threads", type=int, default=None,
                        help="cap numeric worker threads (default: hardware)")
    sub = parser.add_subparsers(dest="command", required=True)

    fit = sub.add_parser("fit", help="estimate a classical or mixed regret model")
    _add_data_arguments(fit, with_model=True)
    fit.add_argument("--nrep", type=int, default=50,
                     help="Halton draws for the simulation (default: 50)")
    fit.add_argument("--burn", type=int, default=15,
                     help="initial Halton elements to drop (default: 15)")
    fit.add_argument("--noconstant", action="store_true",
                     help="suppress alternative-specific constants")
    fit.add_argument("--basealternative", type=int, default=None,
                     help="alternative whose constant is fixed to 0")
    fit.add_argument("--cluster", default=None,
                     help="cluster column for sandwich standard errors")
    fit.add_argument("--robust", action="store_true",
                     help="robust (singleton-cluster) standard errors")
    fit.add_argument("--level", type=float, default=95.0,
                     help="confidence level in percent (default: 95)")
    fit.add_argument("--from", dest="start", default=None,
                     help="JSON vector of starting values in packing order "
                          "[fixed | location | scale | asc]")
    fit.add_argument("--maxiter", type=int, default=200,
                     help="optimizer iteration cap (default: 200)")
    fit.add_argument("--gtol", type=float, default=1e-6,
                     help="gradient sup-norm tolerance (default: 1e-6)")
    fit.add_argument("--out", default=None, help="write the fit as JSON here")
    fit.add_argument("--threads", type=int, default=None, help=argparse.SUPPRESS)
    fit.set_defaults(handler=cmd_fit)

    pred = sub.add_parser("predict",
                          help="append simulated choice probabilities to a CSV")
    _add_data_arguments(pred)
    pred.add_argument("--fit", required=True, help="fit JSON from `mixrrm fit`")
    pred.add_argument("--out", required=True, help="output CSV path")
    _add_draw_arguments(pred)
    pred.add_argument("--threads", type=int, default=None, help=argparse.SUPPRESS)
    pred.set_defaults(handler=cmd_predict)

    betas = sub.add_parser("betas",
                           help="individual-level conditional coefficients")
    _add_data_arguments(betas)
    betas.add_argument("--fit", required=True, help="fit JSON from `mixrrm fit`")
    betas.add_argument("--saving", required=True, help="output CSV path")
    betas.add_argument("--replace", action="store_true",
                       help="overwrite the output file if it exists")
    betas.add_argument("--plot", action="store_true",
                       help="write an SVG histogram per attribute")
    betas.add_argument("--attrs", nargs="*", default=None,
                       help="random attributes to keep (default: all)")
    _add_draw_arguments(betas)
    betas.add_argument("--threads", type=int, default=None, help=argparse.SUPPRESS)
    betas.set_defaults(handler=cmd_betas)

    logn = sub.add_parser("lognormal",
                          help="coefficient-scale summary of a log-normal "
                               "coefficient")
    logn.add_argument("--fit", required=True, help="fit JSON from `mixrrm fit`")
    logn.add_argument("--attr", required=True, help="log-normal attribute name")
    logn.add_argument("--negate", action="store_true",
                      help="report with the pre-estimation sign flip undone")
    logn.add_argument("--json", action="store_true", dest="as_json",
                      help="emit machine-readable JSON instead of a table")
    logn.set_defaults(handler=cmd_lognormal)

    reshape = sub.add_parser("reshape",
                             help="wide (one row per situation) to long CSV")
    reshape.add_argument("data", help="wide-format CSV file")
    reshape.add_argument("--out", required=True, help="long-format output path")
    reshape.add_argument("--stubs", nargs="+", required=True,
                         metavar="PREFIX=NAME",
                         help="wide prefix and long column name, e.g. tt=total_time")
    reshape.add_argument("--ids", nargs="+", required=True,
                         help="columns copied through unchanged (e.g. id cs)")
    reshape.add_argument("--alt-count", type=int, required=True,
                         help="alternatives per choice situation")
    reshape.add_argument("--choice", default="choice",
                         help="wide column holding the chosen alternative "
                              "number (default: choice)")
    reshape.set_defaults(handler=cmd_reshape)

    return parser


def _apply_thread_cap(argv):
    threads = None
    for i, arg in enumerate(argv):
        if arg == "--threads" and i + 1 < len(argv):
            threads = argv[i + 1]
        elif arg.startswith("--threads="):
            threads = arg.split("=", 1)[1]
    if threads is None or not threads.isdigit():
        return
    if "numpy" in sys.modules:
        return
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS",
                "MKL_NUM_THREADS", "NUMEXPR_NUM_THREADS"):
        os.environ[var] = threads


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    _apply_thread_cap(argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.handler(args)
    except Error as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    except (OSError, json.JSONDecodeError, KeyError, ValueError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


def _load_dataset(args, cluster_col=None, attr_cols=None):
    from .dataset import load_long_csv

    if attr_cols is None and getattr(args, "fixed", None) is not None:
        used = list(dict.fromkeys([*args.fixed, *args.rand]))
        attr_cols = used or None
    return load_long_csv(
        args.data,
        id_col=args.id_col,
        group_col=args.group,
        alt_col=args.alternatives,
        choice_col=args.choice,
        attr_cols=attr_cols,
        cluster_col=cluster_col,
    )


def _fit_attr_cols(fit):
    return list(dict.fromkeys([*fit.spec.fixed_attrs, *fit.spec.random_attrs]))


def _print_fit(fit, stream=None):
    stream = stream or sys.stdout
    kind = "Mixed" if fit.spec.n_random else "Classical"
    print(f"{kind} random regret minimization fit", file=stream)
    print(
        f"  individuals: {fit.n_individuals}   situations: {fit.n_situations}"
        f"   parameters: {fit.n_parameters}",
        file=stream,
    )
    print(f"  log-likelihood: {fit.loglik:.6f}", file=stream)
    if fit.spec.n_random:
        print(f"  draws: nrep={fit.nrep} burn={fit.burn} (Halton)", file=stream)
    print(
        f"  covariance: {fit.covariance_kind}   "
        f"converged: {'yes' if fit.converged else 'NO'} "
        f"({fit.iterations} iterations)",
        file=stream,
    )
    low = (100.0 - fit.level) / 2.0
    high = 100.0 - low
    print("", file=stream)
    header = (f"{'parameter':<16}{'coef':>12}{'std err':>12}{'z':>9}"
              f"{'P>|z|':>9}{f'[{low:g}%':>12}{f'{high:g}%]':>12}")
    print(header, file=stream)
    print("-" * len(header), file=stream)
    for i, name in enumerate(fit.param_names):
        z = fit.z_stats[i]
        p = fit.p_values[i]
        print(
            f"{name:<16}{fit.estimates[i]:>12.4f}{fit.std_errors[i]:>12.4f}"
            f"{z:>9.3f}{p:>9.4f}{fit.ci_lower[i]:>12.4f}{fit.ci_upper[i]:>12.4f}",
            file=stream,
        )


def cmd_fit(args) -> int:
    from .dataset import cluster_index
    from .errors import NonConvergence
    from .estimation import FitOptions, fit_classical, fit_mixed, save_fit_json
    from .regret import ModelSpec

    if not args.fixed and not args.rand:
        print("error: give at least one attribute via --fixed or --rand",
              file=sys.stderr)
        return 1
    ds = _load_dataset(args, cluster_col=args.cluster)
    spec = ModelSpec(
        fixed_attrs=tuple(args.fixed),
        random_attrs=tuple(args.rand),
        ln_count=args.ln,
        use_asc=not args.noconstant,
        base_alternative=args.basealternative,
    )
    covariance = "hessian"
    cluster_map = None
    if args.cluster:
        covariance = "cluster"
        cluster_map = cluster_index(ds, args.cluster)
    elif args.robust:
        covariance = "robust"
    start = None
    if args.start is not None:
        start = json.loads(args.start)
    opts = FitOptions(
        maxiter=args.maxiter,
        gtol=args.gtol,
        start=start,
        level=args.level,
        covariance=covariance,
        cluster=cluster_map,
        nrep=args.nrep,
        burn=args.burn,
    )

    exit_code = 0
    try:
        if spec.n_random:
            fit = fit_mixed(ds, spec, opts)
        else:
            fit = fit_classical(ds, spec, opts)
    except NonConvergence as err:
        print(f"warning: {err}", file=sys.stderr)
        fit = err.result
        exit_code = 2

    _print_fit(fit)
    if args.out:
        save_fit_json(fit, args.out)
        print(f"  fit written to {args.out}", file=sys.stderr)
    return exit_code


def cmd_predict(args) -> int:
    import csv

    from .estimation import load_fit_json
    from .postestimation import predict_rows

    fit = load_fit_json(args.fit)
    ds = _load_dataset(args, attr_cols=_fit_attr_cols(fit))
    rows = predict_rows(ds, fit, nrep=args.nrep, burn=args.burn)
    lookup = {key: prob for key, prob in rows}

    with open(args.data, newline="", encoding="utf-8") as handle:
        reader = csv.reader(handle)
        header = next(reader)
        data_rows = list(reader)
    pos = {name: i for i, name in enumerate(header)}
    for col in (args.id_col, args.group, args.alternatives):
        if col not in pos:
            from .errors import MissingColumn

            raise MissingColumn(col)

    with open(args.out, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(header + ["pred_p"])
        for row in data_rows:
            key = (
                int(float(row[pos[args.id_col]])),
                int(float(row[pos[args.group]])),
                int(float(row[pos[args.alternatives]])),
            )
            writer.writerow(row + [repr(float(lookup[key]))])
    print(f"predictions written to {args.out}", file=sys.stderr)
    return 0


def cmd_betas(args) -> int:
    from .estimation import load_fit_json
    from .postestimation import histogram_svg, individual_betas, write_beta_file

    fit = load_fit_json(args.fit)
    if fit.spec.n_random < 1:
        print("error: fit has no random coefficients", file=sys.stderr)
        return 1
    ds = _load_dataset(args, attr_cols=_fit_attr_cols(fit))
    table = individual_betas(ds, fit, nrep=args.nrep, burn=args.burn)

    keep = args.attrs if args.attrs else list(table.attrs)
    for attr in keep:
        if attr not in table.attrs:
            print(f"error: {attr!r} is not a random attribute of this fit",
                  file=sys.stderr)
            return 1
    if tuple(keep) != table.attrs:
        cols = [table.attrs.index(a) for a in keep]
        table = type(table)(
            attrs=tuple(keep), ids=table.ids, values=table.values[:, cols]
        )

    write_beta_file(table, args.saving, replace=args.replace)
    print(f"individual coefficients written to {args.saving}", file=sys.stderr)
    if args.plot:
        out_dir = os.path.dirname(os.path.abspath(args.saving))
        for attr in table.attrs:
            svg_path = os.path.join(out_dir, f"{attr}_hist.svg")
            col = table.values[:, table.attrs.index(attr)]
            histogram_svg(col, f"Distribution of {attr} coefficient", svg_path)
            print(f"plot written to {svg_path}", file=sys.stderr)
    return 0


def cmd_lognormal(args) -> int:
    from .estimation import load_fit_json
    from .postestimation import lognormal_summary

    fit = load_fit_json(args.fit)
    summary = lognormal_summary(fit, args.attr, sign=-1 if args.negate else 1)
    if args.as_json:
        print(json.dumps({
            "attr": summary.attr,
            "sign": summary.sign,
            "median": summary.median, "median_se": summary.median_se,
            "mean": summary.mean, "mean_se": summary.mean_se,
            "sd": summary.sd, "sd_se": summary.sd_se,
        }, sort_keys=True))
        return 0
    print(f"log-normal coefficient summary: {summary.attr} "
          f"(sign {'+' if summary.sign > 0 else '-'}1)")
    print(f"{'':<8}{'value':>14}{'std err':>14}")
    print(f"{'median':<8}{summary.median:>14.6f}{summary.median_se:>14.6f}")
    print(f"{'mean':<8}{summary.mean:>14.6f}{summary.mean_se:>14.6f}")
    print(f"{'sd':<8}{summary.sd:>14.6f}{summary.sd_se:>14.6f}")
    return 0


def cmd_reshape(args) -> int:
    from .dataset import reshape_wide_to_long

    stub_specs = []
    for item in args.stubs:
        if "=" not in item:
            print(f"error: stub {item!r} must look like PREFIX=NAME",
                  file=sys.stderr)
            return 1
        prefix, long_name = item.split("=", 1)
        stub_specs.append((long_name, prefix))
    reshape_wide_to_long(
        args.data,
        stub_specs=stub_specs,
        id_cols=args.ids,
        alt_count=args.alt_count,
        choice_col=args.choice,
        out_path=args.out,
    )
    print(f"long-format data written to {args.out}", file=sys.stderr)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
