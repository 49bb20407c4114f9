"""Command-line driver: ``npgap <command> [flags]``.

Exit codes: 0 success, 1 computation failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import os
import sys
import time

from . import amortization as am
from .errors import CheckpointError, NumericalError, ParameterError
from .experiments import (
    alignment_experiment,
    contamination_experiment,
    contamination_slopes,
    evaluate_bounds,
)
from .kernel import KernelSpec, NoiseModel
from .lnp_analytic import BoundConstants
from .mercer import MercerBasis
from .nn import TrainConfig, load_checkpoint, save_checkpoint, train
from .reporting import ExperimentReport, rows_to_csv, write_csv, write_manifest

MC_COMMANDS = {"scalar-gap", "correlation", "agg-compare", "dim-scan", "contamination", "alignment", "suite"}
SUITE = ("scalar-gap", "pathology", "correlation", "agg-compare", "dim-scan", "bounds")
SUITE_FILES = {
    "scalar-gap": "scalar_gap.csv",
    "correlation": "correlation.csv",
    "pathology": "pathology.csv",
    "agg-compare": "agg_compare.csv",
    "dim-scan": "dim_scan.csv",
    "bounds": "bounds.csv",
}


class UsageError(Exception):
    pass


# --- argument parsing ----------------------------------------------------------


def _int_list(s: str) -> list[int]:
    try:
        out = [int(v) for v in str(s).split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {s!r}")
    if not out:
        raise argparse.ArgumentTypeError("empty list")
    return out


def _bool(s) -> bool:
    if isinstance(s, bool):
        return s
    v = str(s).strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {s!r}")


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=None, help="master seed (required for Monte Carlo commands)")
    p.add_argument("--out", default=None, help="output CSV path (directory for suite)")
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--fast", action="store_true", help="divide Monte Carlo draw counts by 10")
    p.add_argument("--config", default=None, help="key=value file; command-line flags take precedence")


def _model_flags(p: argparse.ArgumentParser, lengthscale: float) -> None:
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--train", action="store_true", help="train a model in-process")
    p.add_argument("--steps", type=int, default=4000)
    p.add_argument("--save-checkpoint", default=None)
    p.add_argument("--lengthscale", type=float, default=lengthscale)
    p.add_argument("--sigma-eps-sq", type=float, default=0.05)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="npgap", description="GP vs latent NP variance-gap experiments")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("scalar-gap", help="closed-form vs Monte Carlo scalar amortization gap")
    _common(p)
    p.add_argument("--n", type=_int_list, default=[5, 10, 20, 50, 100, 500, 2000])
    p.add_argument("--lengthscale", type=float, default=0.3)
    p.add_argument("--sigma-d-sq", type=float, default=1.0)
    p.add_argument("--draws", type=int, default=100_000)

    p = sub.add_parser("correlation", help="variance of v_hat and its correlation with e_bar")
    _common(p)
    p.add_argument("--n", type=_int_list, default=[10, 50, 100, 500, 1000])
    p.add_argument("--draws", type=int, default=100_000)

    p = sub.add_parser("pathology", help="two-point contexts with zero mean representation")
    _common(p)
    p.add_argument("--lengthscale", type=float, default=0.3)
    p.add_argument("--sigma-d-sq", type=float, default=1.0)

    p = sub.add_parser("agg-compare", help="mean vs second-order aggregation gap over n")
    _common(p)
    p.add_argument("--n", type=_int_list, default=[10, 50, 100, 200, 500])
    p.add_argument("--d", type=int, default=3)
    p.add_argument("--contexts", type=int, default=2000)
    p.add_argument("--lengthscale", type=float, default=0.3)

    p = sub.add_parser("dim-scan", help="aggregation gap over representation dimension")
    _common(p)
    p.add_argument("--d", type=_int_list, default=[1, 2, 3, 5, 8])
    p.add_argument("--n", type=int, default=50)
    p.add_argument("--contexts", type=int, default=2000)
    p.add_argument("--lengthscale", type=float, default=0.3)

    p = sub.add_parser("bounds", help="computable terms of the combined KL bound")
    _common(p)
    p.add_argument("--n", type=_int_list, default=[100, 10_000, 1_000_000])
    p.add_argument("--d", type=int, default=3)
    p.add_argument("--x-star", type=float, default=0.5)
    p.add_argument("--lengthscale", type=float, default=0.3)
    p.add_argument("--sigma-eps-sq", type=float, default=0.05)
    for name in ("L-mu", "L-sigma", "B-w", "B-phi", "B-psi"):
        p.add_argument(f"--{name}", type=float, default=1.0)

    p = sub.add_parser("contamination", help="label-contamination protocols on a trained LNP")
    _common(p)
    _model_flags(p, 0.2)
    p.add_argument("--n", type=_int_list, default=[5, 10, 20, 50, 100, 200, 500, 1000])
    p.add_argument("--resamples", type=int, default=400)
    p.add_argument("--sets", type=int, default=30)
    p.add_argument("--x-star", type=float, default=0.5)

    p = sub.add_parser("alignment", help="Mercer alignment of a trained encoder")
    _common(p)
    _model_flags(p, 0.5)
    p.add_argument("--mode", choices=["y-zero", "marginal"], default="y-zero")
    p.add_argument("--gp-samples", type=int, default=200)
    p.add_argument("--grid", type=int, default=2000)
    p.add_argument("--J", type=int, default=16)

    p = sub.add_parser("suite", help="every analytic and Monte Carlo table plus the bound terms")
    _common(p)
    return parser


def _read_config(path: str) -> dict[str, str]:
    out = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise UsageError(f"{path}:{lineno}: expected key=value")
            k, v = line.split("=", 1)
            out[k.strip().lstrip("-").replace("-", "_")] = v.strip()
    return out


def parse_args(argv) -> argparse.Namespace:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        try:
            cfg = _read_config(args.config)
        except OSError as exc:
            parser.error(f"cannot read config file: {exc}")
        except UsageError as exc:
            parser.error(str(exc))
        sub = parser._subparsers._group_actions[0].choices[args.command]  # noqa: SLF001
        actions = {a.dest: a for a in sub._actions}  # noqa: SLF001
        defaults = {}
        for k, v in cfg.items():
            if k not in actions or k in ("config", "help"):
                parser.error(f"unknown config key {k!r} for {args.command}")
            a = actions[k]
            try:
                if isinstance(a, argparse._StoreTrueAction):  # noqa: SLF001
                    defaults[k] = _bool(v)
                else:
                    defaults[k] = a.type(v) if a.type else v
            except (argparse.ArgumentTypeError, ValueError) as exc:
                parser.error(f"config key {k!r}: {exc}")
        sub.set_defaults(**defaults)
        args = parser.parse_args(argv)
    _validate(parser, args)
    return args


def _validate(parser, args) -> None:
    if args.command in MC_COMMANDS and args.seed is None:
        parser.error(f"{args.command} needs --seed")
    if args.seed is None:
        args.seed = 0
    if args.threads < 1:
        parser.error("--threads must be >= 1")
    for name in ("draws", "contexts", "resamples", "sets", "gp_samples", "grid", "J"):
        v = getattr(args, name, None)
        if v is not None and v < 1:
            parser.error(f"--{name.replace('_', '-')} must be positive")
    if args.command in ("scalar-gap",) and args.draws < 1000 * (10 if args.fast else 1):
        parser.error("--draws must be at least 1000 (10000 with --fast)")
    if args.command == "correlation" and args.draws < 10_000 * (10 if args.fast else 1):
        parser.error("--draws must be at least 10000 (100000 with --fast)")
    if args.command in ("contamination", "alignment"):
        if not args.train and not args.checkpoint:
            parser.error(f"{args.command} needs --checkpoint or --train")
        if args.train and args.checkpoint:
            parser.error("--train and --checkpoint are mutually exclusive")
        if args.steps < 0:
            parser.error("--steps must be >= 0")
    if args.command == "contamination" and args.resamples < 2:
        parser.error("--resamples must be >= 2")


# --- commands -----------------------------------------------------------------


def _scale(args, count: int, floor: int = 1) -> int:
    return max(count // 10, floor) if args.fast else count


def cmd_scalar_gap(args) -> ExperimentReport:
    draws = _scale(args, args.draws)
    rows = []
    for n in args.n:
        inp = am.ScalarGapInputs.from_lengthscale(n, args.lengthscale, args.sigma_d_sq)
        est = am.mc_scalar_gap(inp, draws, args.seed, args.threads)
        f = am.scalar_gap_formula(inp)
        rows.append({"n": n, "alpha": inp.alpha, "mc_gap": est.value, "formula": f,
                     "ratio": est.value / f if f > 0 else float("nan"), "std_err": est.std_err, "draws": draws})
    return ExperimentReport("scalar-gap", {"n": args.n, "lengthscale": args.lengthscale, "draws": draws}, rows, args.seed)


def cmd_correlation(args) -> ExperimentReport:
    draws = _scale(args, args.draws)
    rows = []
    for n in args.n:
        r = am.correlation_test(n, draws, args.seed, args.threads)
        rows.append({"n": n, "var_vhat": r.var_vhat, "var_vhat_predicted": r.predicted, "corr": r.corr, "draws": draws})
    return ExperimentReport("correlation", {"n": args.n, "draws": draws}, rows, args.seed)


def cmd_pathology(args) -> ExperimentReport:
    rows = am.pathology_table(am.SYMMETRIC_PAIRS, args.lengthscale, args.sigma_d_sq)
    return ExperimentReport("pathology", {"lengthscale": args.lengthscale}, rows, args.seed)


def cmd_agg_compare(args) -> ExperimentReport:
    contexts = _scale(args, args.contexts, 10 * args.d * (args.d + 1) // 2)
    rows = am.aggregation_comparison(args.n, args.d, contexts, args.seed, args.lengthscale)
    ns = [r["n"] for r in rows]
    extras = {}
    if len(ns) >= 3:
        extras = {"slope_mean": am.power_law_fit(ns, [r["gap_mean"] for r in rows]),
                  "slope_second_order": am.power_law_fit(ns, [r["gap_second_order"] for r in rows])}
    return ExperimentReport("agg-compare", {"n": args.n, "d": args.d, "contexts": contexts}, rows, args.seed, extras=extras)


def cmd_dim_scan(args) -> ExperimentReport:
    dmax = max(args.d)
    contexts = _scale(args, args.contexts, 10 * dmax * (dmax + 1) // 2)
    rows = am.dimension_scan(args.d, args.n, contexts, args.seed, args.lengthscale)
    return ExperimentReport("dim-scan", {"d": args.d, "n": args.n, "contexts": contexts}, rows, args.seed)


def cmd_bounds(args) -> ExperimentReport:
    consts = BoundConstants(args.L_mu, args.L_sigma, args.B_w, args.B_phi, args.B_psi)
    spec = KernelSpec.se(args.lengthscale)
    noise = NoiseModel(args.sigma_eps_sq)
    basis = MercerBasis.cosine(args.lengthscale)
    rows = []
    for n in args.n:
        rep = evaluate_bounds(consts, spec, noise, basis, args.d, n, args.x_star)
        rows.append({"n": n, "d": args.d, "x_star": args.x_star, "Lambda": consts.Lambda, **rep.as_dict()})
    return ExperimentReport("bounds", {"n": args.n, "d": args.d, "x_star": args.x_star}, rows, args.seed)


def _model(args):
    spec = KernelSpec.se(args.lengthscale)
    noise = NoiseModel(args.sigma_eps_sq)
    if args.checkpoint:
        model = load_checkpoint(args.checkpoint)
        if model.kernel:
            spec = KernelSpec.se(model.kernel["lengthscale"], model.kernel.get("signal_variance", 1.0))
            noise = NoiseModel(model.kernel.get("sigma_eps_sq", args.sigma_eps_sq))
        source = os.path.abspath(args.checkpoint)
    else:
        model = train(TrainConfig(steps=args.steps), spec, noise, args.seed)
        source = "trained in-process"
        if args.save_checkpoint:
            save_checkpoint(model, args.save_checkpoint)
            source = os.path.abspath(args.save_checkpoint)
    return model, spec, noise, source


def cmd_contamination(args) -> ExperimentReport:
    model, spec, noise, source = _model(args)
    R = _scale(args, args.resamples, 2)
    rows, results = [], []
    for n in args.n:
        r = contamination_experiment(model, spec, noise, n, R, args.sets, args.x_star, args.seed, threads=args.threads)
        results.append(r)
        rows.append({"n": n, "var_full": r.var_full, "var_noise": r.var_noise, "floor_noise_ratio": r.floor_noise_ratio,
                     "resamples": R, "location_sets": r.location_sets})
    extras = {"checkpoint": source, "lengthscale": spec.lengthscale}
    try:
        extras["slope_noise"], extras["slope_full"] = contamination_slopes(results)
    except ParameterError:
        pass
    params = {"n": args.n, "resamples": R, "sets": args.sets, "x_star": args.x_star, "checkpoint": source}
    return ExperimentReport("contamination", params, rows, args.seed, extras=extras)


def cmd_alignment(args) -> ExperimentReport:
    model, spec, noise, source = _model(args)
    res = alignment_experiment(model, spec, args.grid, args.J, args.mode, args.seed, noise, args.gp_samples)
    rows = []
    for (j, lam, r2), (d, cos) in zip(res.per_axis_r2, res.min_cosines):
        rows.append({"j": j, "lambda_j": lam, "r2_j": r2, "d": d, "cos_theta_min": cos, "mode": res.mode, "rank": res.rank})
    params = {"mode": args.mode, "grid": args.grid, "J": args.J, "lengthscale": spec.lengthscale, "checkpoint": source}
    return ExperimentReport("alignment", params, rows, args.seed, extras={"checkpoint": source})


COMMANDS = {
    "scalar-gap": cmd_scalar_gap,
    "correlation": cmd_correlation,
    "pathology": cmd_pathology,
    "agg-compare": cmd_agg_compare,
    "dim-scan": cmd_dim_scan,
    "bounds": cmd_bounds,
    "contamination": cmd_contamination,
    "alignment": cmd_alignment,
}

FAILURES = (NumericalError, ParameterError, CheckpointError, OSError, ValueError, ArithmeticError)


def _run(fn, args) -> ExperimentReport:
    t0 = time.perf_counter()
    rep = fn(args)
    rep.wall_time_s = time.perf_counter() - t0
    return rep


def _manifest_path(out: str) -> str:
    root, _ = os.path.splitext(out)
    return root + ".manifest.json"


def run_single(args) -> int:
    try:
        rep = _run(COMMANDS[args.command], args)
    except FAILURES as exc:
        print(f"npgap {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    if args.out is None:
        sys.stdout.write(rows_to_csv(rep.rows))
        return 0
    try:
        write_csv(args.out, rep.rows)
        write_manifest(_manifest_path(args.out), [rep.manifest_entry("ok", os.path.basename(args.out))])
    except OSError as exc:
        print(f"npgap {args.command}: cannot write output: {exc}", file=sys.stderr)
        return 1
    return 0


def _defaults_for(command: str, args) -> argparse.Namespace:
    sub = build_parser().parse_args([command, "--seed", str(args.seed)])
    sub.threads, sub.fast = args.threads, args.fast
    return sub


def run_suite(args) -> int:
    outdir = args.out or "npgap-suite"
    try:
        os.makedirs(outdir, exist_ok=True)
    except OSError as exc:
        print(f"npgap suite: cannot create {outdir}: {exc}", file=sys.stderr)
        return 1
    entries, failed = [], False
    for name in SUITE:
        sub = _defaults_for(name, args)
        fname = SUITE_FILES[name]
        try:
            rep = _run(COMMANDS[name], sub)
            write_csv(os.path.join(outdir, fname), rep.rows)
            entries.append(rep.manifest_entry("ok", fname))
        except FAILURES as exc:
            failed = True
            entries.append({"command": name, "status": "failed", "seed": args.seed, "error": f"{type(exc).__name__}: {exc}"})
            print(f"npgap suite: {name} failed: {exc}", file=sys.stderr)
    try:
        write_manifest(os.path.join(outdir, "manifest.json"), entries, {"suite_seed": args.seed, "fast": args.fast})
    except OSError as exc:
        print(f"npgap suite: cannot write manifest: {exc}", file=sys.stderr)
        return 1
    return 1 if failed else 0


def main(argv=None) -> int:
    args = parse_args(sys.argv[1:] if argv is None else argv)
    if args.command == "suite":
        return run_suite(args)
    return run_single(args)


if __name__ == "__main__":
    sys.exit(main())
