"""Command-line interface: ``shiftdecomp {decompose,weights,compare-schemes,simulate}``.

Exit codes: 0 success, 2 bad input or schema, 3 estimation failure,
4 internal invariant violation.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .dataset import TARGET_Q, TRAIN_P, LossSpec, PooledDataset, pool, read_frame, sample_from_frame
from .decomposition import ANCHORS, TERMS, DecompositionReport
from .estimator import PRECOMPUTED_KEY, ShiftDecomposition
from .exceptions import EstimationError, InvariantError, SchemaError
from .report import write_svg
from .simulate import SCENARIOS, make_scenario
from .weights import WeightScheme

EXIT_OK = 0
EXIT_SCHEMA = 2
EXIT_ESTIMATION = 3
EXIT_INVARIANT = 4

SCHEMES = ("harmonic", "min", "truncated")
# execution details that never change results; left out of the echoed config
# so reports stay byte-identical across thread counts
_NOT_ECHOED = ("n_jobs", "func")


def _split(text: str | None) -> list[str]:
    if not text:
        return []
    return [c.strip() for c in text.split(",") if c.strip()]


# --------------------------------------------------------------------------
# argument parsing


def _add_input_args(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("input")
    g.add_argument("--train", help="CSV of training-distribution examples")
    g.add_argument("--target", help="CSV of target-distribution examples")
    g.add_argument("--data", help="single pooled CSV; needs --domain-col")
    g.add_argument("--domain-col", help="column in --data holding train/target (or 0/1)")
    g.add_argument("--features", required=True,
                   help="comma-separated decomposition feature columns")
    g.add_argument("--one-hot", default="", help="comma-separated string columns to one-hot encode")
    g.add_argument("--loss-col", help="column holding precomputed per-example losses")
    g.add_argument("--loss", choices=("zero_one", "squared", "log_loss"),
                   help="compute the loss from label and prediction columns")
    g.add_argument("--label-col")
    g.add_argument("--pred-col")
    g.add_argument("--prob-col", help="predicted probability column for log_loss")
    g.add_argument("--na-policy", choices=("error", "drop-row"), default="error")


def _add_model_args(p: argparse.ArgumentParser, scheme: bool = True) -> None:
    g = p.add_argument_group("estimation")
    g.add_argument("--classifier", default="logistic",
                   help="logistic, kernel or precomputed:<column> (default logistic)")
    g.add_argument("--clip", type=float, default=1e-3)
    g.add_argument("--kernel-order", type=int)
    g.add_argument("--kernel-exponent", type=float)
    g.add_argument("--kernel-scale", type=float, default=1.0)
    g.add_argument("--folds", type=int, default=3)
    if scheme:
        g.add_argument("--scheme", choices=SCHEMES, default="harmonic")
    g.add_argument("--truncation-eps", type=float, default=0.1)
    g.add_argument("--seed", type=int, default=0)


def _add_se_args(p: argparse.ArgumentParser, default: str = "all") -> None:
    g = p.add_argument_group("inference")
    g.add_argument("--se", default=default,
                   help="if, half, np, all, none, or a comma-separated list (default %(default)s)")
    g.add_argument("--replicates", type=int, default=500)
    g.add_argument("--level", type=float, default=0.95)
    g.add_argument("--reuse-nuisance", action="store_true",
                   help="skip refitting the classifier inside bootstrap replicates")
    g.add_argument("--stratified-bootstrap", action="store_true")
    g.add_argument("--n-jobs", type=int, default=1, help="threads for bootstrap replicates")


def _add_output_args(p: argparse.ArgumentParser, svg: bool = True) -> None:
    g = p.add_argument_group("output")
    g.add_argument("--out", help="output path (default: stdout)")
    if svg:
        g.add_argument("--svg", help="also write an SVG chart here")
    g.add_argument("--json-indent", type=int, default=2)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="shiftdecomp",
        description="Split a change in mean loss between a train and a target sample into "
                    "covariate-shift and conditional-shift terms.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("decompose", help="estimate the decomposition with standard errors")
    _add_input_args(p)
    _add_model_args(p)
    _add_se_args(p)
    _add_output_args(p)
    p.set_defaults(func=cmd_decompose)

    p = sub.add_parser("weights", help="export per-example class probabilities and weights")
    _add_input_args(p)
    _add_model_args(p)
    g = p.add_argument_group("output")
    g.add_argument("--out", help="CSV output path (default: stdout)")
    p.set_defaults(func=cmd_weights)

    p = sub.add_parser("compare-schemes", help="decompose under every shared-distribution scheme")
    _add_input_args(p)
    _add_model_args(p, scheme=False)
    _add_se_args(p)
    _add_output_args(p, svg=False)
    p.set_defaults(func=cmd_compare_schemes)

    p = sub.add_parser("simulate", help="run a synthetic scenario with a known decomposition")
    p.add_argument("--scenario", choices=sorted(SCENARIOS), required=True)
    p.add_argument("--n-p", type=int, default=2000)
    p.add_argument("--n-q", type=int, default=2000)
    p.add_argument("--reps", type=int, default=0, help="Monte Carlo repetitions of the estimator")
    p.add_argument("--csv-dir", help="write train.csv and target.csv for the first draw here")
    _add_model_args(p)
    _add_se_args(p, default="none")
    _add_output_args(p, svg=False)
    p.set_defaults(func=cmd_simulate)
    return parser


# --------------------------------------------------------------------------
# helpers


def run_config(args: argparse.Namespace) -> dict:
    cfg = {k: v for k, v in sorted(vars(args).items()) if k not in _NOT_ECHOED}
    cfg["subcommand"] = cfg.pop("command")
    return cfg


def _loss_spec(args) -> LossSpec:
    if args.loss_col and args.loss:
        raise SchemaError("give either --loss-col or --loss, not both")
    if args.loss_col:
        return LossSpec.precomputed(args.loss_col)
    if not args.loss:
        raise SchemaError("a loss is required: --loss-col COLUMN or --loss KIND with its columns")
    if not args.label_col:
        raise SchemaError(f"--loss {args.loss} needs --label-col")
    if args.loss == "log_loss":
        if not args.prob_col:
            raise SchemaError("--loss log_loss needs --prob-col")
        return LossSpec.log_loss(args.label_col, args.prob_col)
    if not args.pred_col:
        raise SchemaError(f"--loss {args.loss} needs --pred-col")
    return LossSpec.zero_one(args.label_col, args.pred_col) if args.loss == "zero_one" \
        else LossSpec.squared(args.label_col, args.pred_col)


def _classifier(args) -> tuple[str, str | None]:
    c = args.classifier
    if c in ("logistic", "kernel"):
        return c, None
    if c.startswith("precomputed:") and c.split(":", 1)[1]:
        return "precomputed", c.split(":", 1)[1]
    raise SchemaError(f"unknown classifier {c!r}; use logistic, kernel or precomputed:<column>")


def _domain_frames(args):
    if args.data:
        if args.train or args.target:
            raise SchemaError("use either --data or --train/--target, not both")
        if not args.domain_col:
            raise SchemaError("--data needs --domain-col")
        frame = read_frame(args.data)
        if args.domain_col not in frame.columns:
            raise SchemaError(f"{args.data}: missing column {args.domain_col!r}")
        tag = frame[args.domain_col].str.strip().str.lower()
        codes = tag.map({"0": TRAIN_P, "train": TRAIN_P, "p": TRAIN_P,
                         "1": TARGET_Q, "target": TARGET_Q, "q": TARGET_Q})
        if codes.isna().any():
            i = int(np.flatnonzero(codes.isna().to_numpy())[0])
            raise SchemaError(f"{args.data}: column {args.domain_col!r}, row {i + 1}: "
                              f"unknown domain {frame[args.domain_col].iloc[i]!r}")
        return ([frame[codes == TRAIN_P].reset_index(drop=True),
                 frame[codes == TARGET_Q].reset_index(drop=True)],
                [f"{args.data}[train]", f"{args.data}[target]"])
    if not (args.train and args.target):
        raise SchemaError("need --train and --target (or --data with --domain-col)")
    return [read_frame(args.train), read_frame(args.target)], [args.train, args.target]


def load_pooled(args) -> tuple[PooledDataset, LossSpec]:
    """Read the inputs named on the command line into a pooled dataset."""
    from .dataset import one_hot_encode

    spec = _loss_spec(args)
    _, pi_col = _classifier(args)
    frames, sources = _domain_frames(args)
    features = _split(args.features)
    one_hot = _split(args.one_hot)
    if one_hot:
        frames, encoded = one_hot_encode(frames, one_hot)
        features = [f for f in features if f not in one_hot] + encoded
    extra = [pi_col] if pi_col else []
    samples = [sample_from_frame(f, features, spec, d, args.na_policy, extra, src)
               for f, d, src in zip(frames, (TRAIN_P, TARGET_Q), sources)]
    pooled = pool(samples[0], samples[1], args.folds, args.seed)
    if pi_col:
        pooled = PooledDataset(pooled.features, pooled.loss, pooled.domain, pooled.fold_id,
                               pooled.n_folds, pooled.feature_names,
                               {PRECOMPUTED_KEY: pooled.extra[pi_col]})
    return pooled, spec


def _se_param(text: str):
    parts = _split(text)
    if len(parts) == 1:
        return parts[0]
    return tuple(parts)


def make_estimator(args, scheme: str | None = None) -> ShiftDecomposition:
    kind, _ = _classifier(args)
    return ShiftDecomposition(
        classifier=kind, scheme=scheme or args.scheme, truncation_eps=args.truncation_eps,
        n_folds=args.folds, clip=args.clip, kernel_order=args.kernel_order,
        kernel_exponent=args.kernel_exponent, kernel_scale=args.kernel_scale,
        se=_se_param(args.se), n_replicates=args.replicates, level=args.level,
        stratified_bootstrap=args.stratified_bootstrap, reuse_nuisance=args.reuse_nuisance,
        random_state=args.seed, n_jobs=args.n_jobs)


def _clean_estimator_config(config: dict) -> dict:
    return {k: v for k, v in config.items() if k not in _NOT_ECHOED}


def _attach(report: DecompositionReport, args, spec: LossSpec) -> DecompositionReport:
    report.config = {"estimator": _clean_estimator_config(report.config),
                     "run": run_config(args), "loss": spec.to_dict()}
    return report


def _emit_text(text: str, out: str | None) -> None:
    if out:
        Path(out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def _summary(report: DecompositionReport) -> str:
    buf = io.StringIO()
    for k in ANCHORS:
        buf.write(f"{k:>16s}  {report.anchors[k]: .6f}\n")
    for k in TERMS:
        line = f"{k:>16s}  {report.terms[k]: .6f}"
        for m in sorted(report.se):
            line += f"  {m}: se={report.se[m][k].se:.6f}"
        buf.write(line + "\n")
    return buf.getvalue()


# --------------------------------------------------------------------------
# commands


def cmd_decompose(args) -> int:
    pooled, spec = load_pooled(args)
    report = make_estimator(args).fit_pooled(pooled).report_
    _attach(report, args, spec)
    text = report.to_json(args.json_indent) + "\n"
    _emit_text(text, args.out)
    if args.svg:
        write_svg(report, args.svg)
    if args.out:
        sys.stdout.write(_summary(report))
    return EXIT_OK


def cmd_weights(args) -> int:
    pooled, _ = load_pooled(args)
    args.se = "none"
    args.replicates, args.level, args.reuse_nuisance = 500, 0.95, False
    args.stratified_bootstrap, args.n_jobs = False, 1
    est = make_estimator(args).fit_pooled(pooled)
    cf = est.cross_fit_
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["index", "domain", "pi_hat", "weight", "clipped"])
    for i in range(pooled.n):
        w.writerow([i, "train" if pooled.domain[i] == TRAIN_P else "target",
                    repr(float(cf.pi[i])), repr(float(est.weights_[i])),
                    "true" if cf.clipped[i] else "false"])
    _emit_text(buf.getvalue(), args.out)
    return EXIT_OK


def cmd_compare_schemes(args) -> int:
    pooled, spec = load_pooled(args)
    blocks, dominant = {}, {}
    for scheme in SCHEMES:
        try:
            report = make_estimator(args, scheme).fit_pooled(pooled).report_
        except EstimationError as exc:
            blocks[scheme] = {"error": str(exc)}
            continue
        report.config = _clean_estimator_config(report.config)
        blocks[scheme] = report.to_dict()
        dominant[scheme] = report.dominant_term()
    cfg = run_config(args)
    out = {"version": __version__, "config": {"run": cfg, "loss": spec.to_dict()},
           "schemes": blocks, "dominant_term": dominant}
    if not dominant:
        raise EstimationError("every scheme failed: " + "; ".join(b["error"] for b in blocks.values()))
    _emit_text(json.dumps(out, indent=args.json_indent, sort_keys=True, allow_nan=False) + "\n", args.out)
    return EXIT_OK


def _write_csvs(scenario, directory: str) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    for sample, name in zip(scenario.generate(), ("train.csv", "target.csv")):
        with open(d / name, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow([*sample.feature_names, "loss", "pi_true"])
            for row, loss, pi in zip(sample.features, sample.loss, sample.extra["pi_true"]):
                w.writerow([*(repr(float(v)) for v in row), repr(float(loss)), repr(float(pi))])


def cmd_simulate(args) -> int:
    scenario = make_scenario(args.scenario, n_p=args.n_p, n_q=args.n_q, seed=args.seed)
    scheme = WeightScheme.coerce(args.scheme, args.truncation_eps)
    truth = scenario.exact_decomposition(scheme)
    out = {"version": __version__, "config": {"run": run_config(args)},
           "scenario": scenario.describe(), "truth": truth}
    if args.csv_dir:
        _write_csvs(scenario, args.csv_dir)
    if args.reps > 0:
        kind, pi_col = _classifier(args)
        if pi_col is not None and pi_col != "pi_true":
            raise SchemaError("simulated data only carries the precomputed column 'pi_true'")
        est = make_estimator(args).set_params(classifier=kind)
        estimates = {q: [] for q in (*ANCHORS, *TERMS)}
        methods = () if args.se == "none" else None
        hits: dict = {}
        target = {**truth["anchors"], **truth["terms"]}
        for rep in range(args.reps):
            rep_seed = int(np.random.default_rng([args.seed, rep]).integers(2**31))
            pooled = scenario.with_seed(rep_seed).pooled(args.folds, rep_seed)
            if kind == "precomputed":
                pooled = PooledDataset(pooled.features, pooled.loss, pooled.domain, pooled.fold_id,
                                       pooled.n_folds, pooled.feature_names,
                                       {PRECOMPUTED_KEY: pooled.extra["pi_true"]})
            report = est.set_params(random_state=rep_seed).fit_pooled(pooled).report_
            for q in estimates:
                estimates[q].append(report.anchors[q] if q in report.anchors else report.terms[q])
            if methods is None:
                methods = tuple(sorted(report.se))
            for m in methods:
                for q in TERMS:
                    hits.setdefault(m, {}).setdefault(q, 0)
                    hits[m][q] += bool(report.se[m][q].covers(target[q]))
        out["monte_carlo"] = {
            "reps": args.reps,
            "mean": {q: float(np.mean(v)) for q, v in estimates.items()},
            "sd": {q: float(np.std(v, ddof=1)) if len(v) > 1 else 0.0 for q, v in estimates.items()},
            "bias": {q: float(np.mean(v) - target[q]) for q, v in estimates.items()},
        }
        if hits:
            out["monte_carlo"]["coverage"] = {m: {q: c / args.reps for q, c in block.items()}
                                              for m, block in hits.items()}
    _emit_text(json.dumps(out, indent=args.json_indent, sort_keys=True, allow_nan=False) + "\n", args.out)
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except SchemaError as exc:
        print(f"shiftdecomp: input error: {exc}", file=sys.stderr)
        return EXIT_SCHEMA
    except InvariantError as exc:
        print(f"shiftdecomp: internal invariant violated: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    except EstimationError as exc:
        print(f"shiftdecomp: estimation error: {exc}", file=sys.stderr)
        return EXIT_ESTIMATION
    except ValueError as exc:
        print(f"shiftdecomp: invalid argument: {exc}", file=sys.stderr)
        return EXIT_SCHEMA


if __name__ == "__main__":
    sys.exit(main())
