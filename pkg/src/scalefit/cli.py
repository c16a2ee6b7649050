"""Command-line surface: fit, diagnose, plan, and simulate scaling-law studies.

Exit codes: 0 success, 1 usage error, 2 data error, 3 infeasible design
(from ``plan`` or a failing ``check-design``).  Reports are JSON (datasets
and curve tables are CSV) written to ``--out``, with ``-`` streaming to
standard output.  Every command that draws random numbers takes explicit
seeds, so identical invocations produce byte-identical outputs.
"""

from __future__ import annotations

import argparse
import sys

import numpy as np

from . import conditioning, evaluation, fitter, io, laws, planner
from .dataset import ExperimentDataset, NoiseModel, Split, generate_collinear, generate_grid, mark_holdout, merge
from .errors import (
    InfeasibleDesignError,
    InsufficientGridError,
    ScalefitError,
    UsageError,
)
from .fitter import FitConfig, SeedProtocol
from .laws import LawKind, LawParams

_LAW_NAMES = {kind.value: kind for kind in LawKind}
_PROTOCOLS = {p.value: p for p in SeedProtocol}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _parse_values(text: str) -> list[float]:
    """Comma list of floats, or ``log:lo:hi:count`` for a log-spaced grid."""
    text = text.strip()
    if text.startswith("log:"):
        parts = text.split(":")
        if len(parts) != 4:
            raise UsageError(f"grid spec must be log:lo:hi:count, got {text!r}")
        try:
            lo, hi, count = float(parts[1]), float(parts[2]), int(parts[3])
        except ValueError:
            raise UsageError(f"malformed grid spec {text!r}")
        if count < 1 or lo <= 0 or hi < lo:
            raise UsageError(f"grid spec out of range: {text!r}")
        if count == 1:
            return [float(np.sqrt(lo * hi))]
        return [float(x) for x in np.exp(np.linspace(np.log(lo), np.log(hi), count))]
    try:
        return [float(tok) for tok in text.split(",") if tok.strip()]
    except ValueError:
        raise UsageError(f"malformed number list {text!r}")


def _parse_truth(kind: LawKind, text: str) -> LawParams:
    names = laws.PARAM_NAMES[kind]
    text = text.strip()
    if "=" in text:
        values = {}
        for token in text.split(","):
            if not token.strip():
                continue
            key, _, raw = token.partition("=")
            key = key.strip()
            if key not in names:
                raise UsageError(f"{kind.value} has no parameter {key!r}; use {names}")
            try:
                values[key] = float(raw)
            except ValueError:
                raise UsageError(f"malformed value for {key!r}: {raw!r}")
        missing = set(names) - set(values)
        if missing:
            raise UsageError(f"missing parameters {sorted(missing)} for {kind.value}")
        return LawParams.from_named(kind, **values)
    values = _parse_values(text)
    if len(values) != len(names):
        raise UsageError(
            f"{kind.value} takes {len(names)} ordered values {names}, got {len(values)}"
        )
    return LawParams.make(kind, values)


def _parse_range(text: str) -> tuple[float, float]:
    parts = text.split(":")
    if len(parts) != 2:
        raise UsageError(f"range must be lo:hi, got {text!r}")
    try:
        lo, hi = float(parts[0]), float(parts[1])
    except ValueError:
        raise UsageError(f"malformed range {text!r}")
    return lo, hi


def _write(text: str, out: str) -> None:
    if out == "-":
        sys.stdout.write(text)
    else:
        with open(out, "w", newline="") as handle:
            handle.write(text)


def _law(args) -> LawKind:
    return _LAW_NAMES[args.law]


def _config(args) -> FitConfig:
    loss = None
    if getattr(args, "huber_delta", None) is not None:
        loss = fitter.Huber(args.huber_delta)
    return FitConfig(
        restarts=args.restarts,
        seed_protocol=_PROTOCOLS[args.seed_protocol],
        loss=loss,
    )


def _resolved_config(args, command: str) -> dict:
    resolved = {"command": command}
    for key, value in sorted(vars(args).items()):
        if key in ("func",):
            continue
        if isinstance(value, (str, int, float, bool)) or value is None:
            resolved[key] = value
        else:
            resolved[key] = str(value)
    return resolved


def _add_common(p: _Parser, *, law=True, fit_flags=False) -> None:
    if law:
        p.add_argument("--law", choices=sorted(_LAW_NAMES), default="chinchilla")
    if fit_flags:
        p.add_argument("--restarts", type=int, default=100)
        p.add_argument("--seed-protocol", choices=sorted(_PROTOCOLS), default="stride1")
        p.add_argument("--huber-delta", type=float, default=None)
        p.add_argument("--unique-tokens", type=float, default=None)
        p.add_argument("--unique-params", type=float, default=None)
    p.add_argument("--output", choices=["json", "csv"], default=None)
    p.add_argument("--out", default="-")


def _fit_from_args(args, ds: ExperimentDataset):
    return fitter.fit(
        ds,
        _law(args),
        _config(args),
        unique_tokens=args.unique_tokens,
        unique_params=args.unique_params,
    )


def _fit_or_params(args, ds: ExperimentDataset):
    """FitResult from --params when given (no optimization), else a real fit."""
    if getattr(args, "params", None):
        params = _parse_truth(_law(args), args.params)
        n, d, losses = ds.arrays(Split.TRAIN)
        pred = laws.evaluate(
            params, n, d,
            unique_tokens=args.unique_tokens, unique_params=args.unique_params,
        )
        residuals = losses - pred
        return fitter.FitResult(
            params=params,
            objective=0.5 * float(residuals @ residuals),
            residuals=residuals,
            jacobian=laws.jacobian(
                params, n, d,
                unique_tokens=args.unique_tokens, unique_params=args.unique_params,
            ),
            restart_index=-1,
            converged=True,
            restart_objectives=np.array([]),
            restart_params=np.empty((0, params.size)),
            unique_tokens=args.unique_tokens,
            unique_params=args.unique_params,
        )
    return _fit_from_args(args, ds)


# Commands -------------------------------------------------------------------

def _cmd_simulate(args) -> int:
    kind = _law(args)
    truth = _parse_truth(kind, args.truth)
    sizes = _parse_values(args.sizes)
    noise = NoiseModel(args.sigma, args.seed)
    if args.design == "collinear":
        if not args.ratios:
            raise UsageError("collinear designs need --ratios")
        ds = generate_collinear(truth, sizes, _parse_values(args.ratios), noise)
    else:
        if not args.tokens:
            raise UsageError("grid designs need --tokens")
        ds = generate_grid(truth, sizes, _parse_values(args.tokens), noise)
    if args.ratio_cut is not None or args.token_cut is not None:
        ds = mark_holdout(
            ds,
            args.ratio_cut if args.ratio_cut is not None else float("inf"),
            args.token_cut if args.token_cut is not None else float("inf"),
        )
    _write(io.dumps_dataset(ds), args.out)
    return 0


def _cmd_fit(args) -> int:
    ds = io.parse_dataset(args.data)
    result = _fit_from_args(args, ds)
    report = io.report_skeleton(_resolved_config(args, "fit"))
    report["fit"] = io.fit_section(result)
    _write(io.dumps_report(report), args.out)
    return 0


def _cmd_diagnose(args) -> int:
    ds = io.parse_dataset(args.data)
    result = _fit_or_params(args, ds)
    diag = conditioning.diagnose(result.jacobian, result.params)
    ci = None
    if args.sigma is not None:
        paired = None
        if ds.is_single_ray and result.params.kind is LawKind.CHINCHILLA:
            paired = fitter.reduced_counterpart(result, ds)
        ci = conditioning.ci_report(result, args.sigma, paired)
    report = io.report_skeleton(_resolved_config(args, "diagnose"))
    report["fit"] = io.fit_section(result)
    report["diagnostics"] = io.diagnostics_section(diag, ci)
    _write(io.dumps_report(report), args.out)
    return 0


def _cmd_evaluate(args) -> int:
    ds = io.parse_dataset(args.data)
    result = _fit_or_params(args, ds)
    metrics = []
    for selector in (Split.TRAIN, Split.HOLDOUT_COLLINEAR, Split.HOLDOUT_NONCOLLINEAR, "holdout"):
        try:
            metrics.append(evaluation.holdout_metrics(result, ds, selector))
        except ScalefitError:
            continue
    report = io.report_skeleton(_resolved_config(args, "evaluate"))
    report["fit"] = io.fit_section(result)
    report["evaluation"] = io.evaluation_section(metrics)
    _write(io.dumps_report(report), args.out)
    return 0


def _cmd_isoflop(args) -> int:
    ds = io.parse_dataset(args.data)
    result = _fit_or_params(args, ds)
    holdout_obs = tuple(
        o for o in ds.observations
        if o.split in (Split.HOLDOUT_COLLINEAR, Split.HOLDOUT_NONCOLLINEAR)
    )
    holdout = ExperimentDataset(holdout_obs) if holdout_obs else ds
    curves = evaluation.isoflop_curves(result, holdout, args.samples)
    lines = ["curve,n_params,predicted_loss,compute"]
    for idx, curve in enumerate(curves):
        for n, loss in zip(curve.ns, curve.losses):
            lines.append(f"{idx},{float(n)!r},{float(loss)!r},{float(curve.compute)!r}")
    _write("\n".join(lines) + "\n", args.out)
    return 0


def _cmd_check_design(args) -> int:
    report_obj = planner.diversity_check(
        _parse_values(args.ratios), args.beta_eff, args.kappa_target
    )
    regime = planner.Regime.B if report_obj.passes else planner.Regime.A
    report = io.report_skeleton(_resolved_config(args, "check-design"))
    report["design"] = io.design_section(diversity=report_obj, regime=regime)
    verdict = (
        f"diversity v_k = {report_obj.v_k:.6g} "
        f"{'>=' if report_obj.passes else '<'} threshold tau_k = {report_obj.tau_k:.6g} "
        f"at kappa_target = {report_obj.kappa_target:g}: "
        f"{'passes' if report_obj.passes else 'fails'}"
    )
    report["design"]["verdict"] = verdict
    _write(io.dumps_report(report), args.out)
    if not report_obj.passes:
        print(verdict, file=sys.stderr)
        return 3
    return 0


def _cmd_plan(args) -> int:
    if args.epsilon is None:
        raise UsageError("plan requires --epsilon (expected exponent gap prior)")
    priors = planner.Priors(args.epsilon, args.beta_eff, uncertain=args.uncertain)
    plan = planner.plan_design(
        args.budget,
        _parse_range(args.k_range),
        _parse_range(args.n_range),
        K=args.rays,
        kappa_target=args.kappa_target,
        priors=priors,
        kappa_one=args.kappa_one,
    )
    report = io.report_skeleton(_resolved_config(args, "plan"))
    report["design"] = io.design_section(plan=plan)
    table = _plan_table(plan)
    if args.out == "-":
        print(table, file=sys.stderr)
    else:
        print(table)
    _write(io.dumps_report(report), args.out)
    return 0 if plan.feasible else 3


def _plan_table(plan) -> str:
    rows = [
        "ray   tokens/param   runs   sizes",
        "---   ------------   ----   -----",
    ]
    for idx, (k, m, sizes) in enumerate(
        zip(plan.ratios, plan.allocation, plan.per_ray_sizes), start=1
    ):
        span = f"{sizes[0]:.3g} .. {sizes[-1]:.3g}" if len(sizes) > 1 else f"{sizes[0]:.3g}"
        rows.append(f"{idx:<5d} {k:<14.6g} {m:<6d} {span}")
    rows.append(
        f"minimum spread {plan.r_min:.4g} ({'feasible' if plan.feasible else 'infeasible'}); "
        f"predicted kappa {plan.predicted_kappa:.4g}, expected-Jacobian kappa "
        f"{plan.measured_kappa:.4g}; verification "
        f"{'passed' if plan.verification_passed else 'failed'}"
    )
    return "\n".join(rows)


def _cmd_subset_sweep(args) -> int:
    kind = _law(args)
    truth = _parse_truth(kind, args.truth)
    sizes = _parse_values(args.sizes)
    pool = _parse_values(args.ratio_pool)
    tokens = _parse_values(args.tokens)
    if args.holdout_data:
        holdout = io.parse_dataset(args.holdout_data)
    else:
        parts = []
        if args.holdout_ratios:
            parts.append(
                generate_collinear(
                    truth, sizes, _parse_values(args.holdout_ratios),
                    NoiseModel(args.sigma, args.seed + 104729),
                    split=Split.HOLDOUT_COLLINEAR,
                )
            )
        if args.holdout_tokens:
            parts.append(
                generate_grid(
                    truth, sizes, _parse_values(args.holdout_tokens),
                    NoiseModel(args.sigma, args.seed + 224737),
                    split=Split.HOLDOUT_NONCOLLINEAR,
                )
            )
        if not parts:
            raise UsageError(
                "subset-sweep needs --holdout-data, --holdout-ratios, or --holdout-tokens"
            )
        holdout = merge(*parts)
    seeds = [args.seed + g for g in range(args.seeds)]
    records = evaluation.regime_a_sweep(
        truth,
        pool,
        holdout,
        [args.kappa_target],
        seeds,
        _config(args),
        sizes=sizes,
        token_counts=tokens,
        sigma=args.sigma,
        kind=kind,
        beta_eff=args.beta_eff,
        max_subsets=args.max_subsets,
    )
    overall = evaluation.win_rate([r.comparison for r in records])
    sweep = {
        "records": [
            {
                "seed": r.seed,
                "subset_mask": r.subset_mask,
                "ratios": list(r.ratios),
                "n_train": r.n_train,
                "rmse_co": r.comparison.rmse_co,
                "rmse_nc": r.comparison.rmse_nc,
                "nc_wins": r.comparison.nc_wins,
                "regimes": {str(k): v.value for k, v in r.regimes.items()},
            }
            for r in records
        ],
    }
    report = io.report_skeleton(_resolved_config(args, "subset-sweep"))
    report["evaluation"] = io.evaluation_section((), sweep=sweep, win=overall)
    try:
        ra = evaluation.regime_a_win_rate(records, args.kappa_target)
        report["evaluation"]["regime_a_win_rate"] = {
            "fraction": ra.fraction,
            "wins": ra.wins,
            "total": ra.total,
            "wilson_low": ra.wilson_low,
            "wilson_high": ra.wilson_high,
        }
    except ScalefitError:
        report["evaluation"]["regime_a_win_rate"] = None
    _write(io.dumps_report(report), args.out)
    return 0


def build_parser() -> _Parser:
    parser = _Parser(prog="scalefit", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate a synthetic dataset CSV")
    _add_common(p)
    p.add_argument("--truth", required=True, help="law parameters, name=value pairs or ordered list")
    p.add_argument("--design", choices=["collinear", "grid"], default="grid")
    p.add_argument("--sizes", required=True, help="comma list or log:lo:hi:count")
    p.add_argument("--ratios", default=None)
    p.add_argument("--tokens", default=None)
    p.add_argument("--sigma", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--ratio-cut", type=float, default=None)
    p.add_argument("--token-cut", type=float, default=None)
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("fit", help="fit one law family to a dataset")
    _add_common(p, fit_flags=True)
    p.add_argument("--data", required=True)
    p.set_defaults(func=_cmd_fit)

    p = sub.add_parser("diagnose", help="Gram-matrix conditioning diagnostics")
    _add_common(p, fit_flags=True)
    p.add_argument("--data", required=True)
    p.add_argument("--params", default=None, help="evaluate at these parameters instead of fitting")
    p.add_argument("--sigma", type=float, default=None)
    p.set_defaults(func=_cmd_diagnose)

    p = sub.add_parser("evaluate", help="per-split goodness-of-fit metrics")
    _add_common(p, fit_flags=True)
    p.add_argument("--data", required=True)
    p.add_argument("--params", default=None)
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("isoflop", help="constant-compute curves through holdout points")
    _add_common(p, fit_flags=True)
    p.add_argument("--data", required=True)
    p.add_argument("--params", default=None)
    p.add_argument("--samples", type=int, default=33)
    p.set_defaults(func=_cmd_isoflop)

    p = sub.add_parser("check-design", help="a-priori ratio-diversity check")
    _add_common(p, law=False)
    p.add_argument("--ratios", required=True)
    p.add_argument("--beta-eff", type=float, default=0.28)
    p.add_argument("--kappa-target", type=float, default=100.0)
    p.set_defaults(func=_cmd_check_design)

    p = sub.add_parser("plan", help="place rays, sizes, and allocation for a target")
    _add_common(p, law=False)
    p.add_argument("--budget", type=int, required=True)
    p.add_argument("--k-range", required=True, help="lo:hi tokens-per-parameter range")
    p.add_argument("--n-range", required=True, help="lo:hi model-size range")
    p.add_argument("--rays", type=int, default=2)
    p.add_argument("--kappa-target", type=float, default=100.0)
    p.add_argument("--epsilon", type=float, default=None)
    p.add_argument("--beta-eff", type=float, default=0.28)
    p.add_argument("--uncertain", action="store_true")
    p.add_argument("--kappa-one", type=float, default=None)
    p.set_defaults(func=_cmd_plan)

    p = sub.add_parser("subset-sweep", help="budget-matched ray-subset enumeration")
    _add_common(p, fit_flags=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--sizes", required=True)
    p.add_argument("--ratio-pool", required=True)
    p.add_argument("--tokens", required=True)
    p.add_argument("--holdout-data", default=None)
    p.add_argument("--holdout-ratios", default=None)
    p.add_argument("--holdout-tokens", default=None)
    p.add_argument("--sigma", type=float, default=0.01)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--seeds", type=int, default=1)
    p.add_argument("--kappa-target", type=float, default=100.0)
    p.add_argument("--beta-eff", type=float, default=0.28)
    p.add_argument("--max-subsets", type=int, default=None)
    p.set_defaults(func=_cmd_subset_sweep)

    return parser


def run_cli(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return 1
    except (InfeasibleDesignError, InsufficientGridError) as exc:
        print(f"infeasible design: {exc}", file=sys.stderr)
        return 3
    except (ScalefitError, OverflowError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(run_cli())


if __name__ == "__main__":
    main()
