"""Command-line surface: CSV ingestion, method dispatch, serialization.

Three subcommands:

* ``fit``      - run one method on a CSV dataset and write a per-threshold
                 table plus a metadata record;
* ``simulate`` - run the replication harness on a built-in DGP and write
                 per-replication rows (JSON lines) plus an aggregate CSV;
* ``oracle``   - write the true coverage-error curve and optimal threshold
                 for a built-in DGP.

CSV schema: header row with columns ``a`` (0/1), ``score`` (blank allowed
only when a=0), and ``x1..xp``.  Outputs carry 17 significant digits so a
round trip is bit-faithful, and contain nothing clock- or host-dependent:
rerunning a command with the same seed reproduces files byte for byte.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
import warnings

import numpy as np
from scipy.stats import beta as beta_dist

from .conformal import CalibrationSet, inductive_cp_threshold
from .core import (
    ConfigurationError,
    DataError,
    ObservedSample,
    RiskTargets,
    RngStream,
    ShiftsetError,
    ThresholdGrid,
    make_folds,
)
from .crossfit import fit_nuisances
from .learners import BinaryLearnerSpec
from .onestep import (
    CoverageTable,
    onestep_estimate,
    plugin_estimate,
    select_threshold,
    weighted_plugin_estimate,
)
from .rejsamp import RsConfig, rs_estimate, rs_prepare
from .simbench import (
    ALL_METHODS,
    DgpSpec,
    StudyConfig,
    oracle_psi_curve,
    oracle_tau0,
    run_study,
)
from .tmle import tmle_estimate

_DGP_ALIASES = {
    "highdim": "highdim-sparse",
    "highdim-sparse": "highdim-sparse",
    "lowdim": "lowdim",
    "lowdim-noshift": "lowdim-noshift",
}

_FIT_METHODS = ("onestep", "tmle", "rs", "plugin", "wplugin", "icp")


def _fmt(x: float) -> str:
    """17 significant digits: enough for an exact float round trip."""
    return format(float(x), ".17g")


# ---------------------------------------------------------------------------
# CSV ingestion / emission
# ---------------------------------------------------------------------------

class CsvSchemaWarning(UserWarning):
    pass


def ingest_csv(path: str) -> ObservedSample:
    """Read an observed sample from CSV.

    Column ``a`` must be 0 or 1; ``score`` must be blank exactly when a=0
    (a value there is ignored with a warning); covariates are ``x1..xp``.
    Errors carry 1-based file line numbers.
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        cols = {name: i for i, name in enumerate(header)}
        if "a" not in cols or "score" not in cols:
            raise DataError(f"{path}: header must contain 'a' and 'score'")
        x_names = [h for h in header if h not in ("a", "score")]
        p = len(x_names)
        expected = [f"x{j}" for j in range(1, p + 1)]
        if p == 0 or sorted(x_names) != sorted(expected):
            raise DataError(
                f"{path}: covariate columns must be exactly x1..xp, got {x_names}")
        x_cols = [cols[name] for name in expected]

        a_vals, scores, xs = [], [], []
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise DataError(f"{path}:{line_no}: expected {len(header)} fields")
            a_raw = row[cols["a"]].strip()
            if a_raw not in ("0", "1"):
                raise DataError(f"{path}:{line_no}: 'a' must be 0 or 1, got {a_raw!r}")
            a = int(a_raw)
            s_raw = row[cols["score"]].strip()
            if a == 1:
                if s_raw == "":
                    raise DataError(f"{path}:{line_no}: source row is missing its score")
                score = _parse_float(s_raw, path, line_no, "score")
            else:
                if s_raw != "":
                    warnings.warn(
                        f"{path}:{line_no}: score on a target row is ignored",
                        CsvSchemaWarning, stacklevel=2)
                score = np.nan
            x_row = [_parse_float(row[c].strip(), path, line_no, header[c])
                     for c in x_cols]
            a_vals.append(a)
            scores.append(score)
            xs.append(x_row)

    if not a_vals:
        raise DataError(f"{path}: no data rows")
    a_arr = np.array(a_vals, dtype=np.int8)
    if (a_arr == 1).sum() == 0 or (a_arr == 0).sum() == 0:
        raise DataError(f"{path}: need at least one source (a=1) and one "
                        "target (a=0) row")
    return ObservedSample(a=a_arr, x=np.array(xs, dtype=float),
                          score=np.array(scores, dtype=float))


def _parse_float(text: str, path: str, line_no: int, col: str) -> float:
    try:
        val = float(text)
    except ValueError:
        raise DataError(f"{path}:{line_no}: column {col!r} has a malformed "
                        f"number {text!r}") from None
    if not np.isfinite(val):
        raise DataError(f"{path}:{line_no}: column {col!r} must be finite")
    return val


def emit_csv(sample: ObservedSample, path: str) -> None:
    """Write a sample in the ingestion schema (exact round trip)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["a", "score"] + [f"x{j}" for j in range(1, sample.p + 1)])
        for i in range(sample.n):
            score = _fmt(sample.score[i]) if sample.a[i] == 1 else ""
            writer.writerow([str(int(sample.a[i])), score]
                            + [_fmt(v) for v in sample.x[i]])


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------

def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="shiftset",
        allow_abbrev=False,
        description="Prediction-set thresholds with asymptotic PAC coverage "
                    "guarantees under unknown covariate shift.")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(sp):
        sp.add_argument("--config", default=None,
                        help="key=value file; command-line flags override it")
        sp.add_argument("--grid", default="0:0.3:0.05",
                        help="threshold grid as lo:hi:step")
        sp.add_argument("--alpha-error", type=float, default=0.05)
        sp.add_argument("--alpha-conf", type=float, default=0.05)
        sp.add_argument("--folds", type=int, default=2)
        sp.add_argument("--delta", type=float, default=0.01,
                        help="propensity truncation bound")
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--output", required=False, default=None)
        sp.add_argument("--g-learner", default="logistic-ridge",
                        choices=("logistic-ridge", "boosted-stumps"))
        sp.add_argument("--e-learner", default="logistic-ridge",
                        choices=("logistic-ridge", "boosted-stumps"))
        sp.add_argument("--ridge", type=float, default=1e-6)
        sp.add_argument("--bhat-mult", type=float, default=1.3)
        sp.add_argument("--bhat-fixed", type=float, default=None)

    sp_fit = sub.add_parser("fit", help="run one method on a CSV dataset")
    add_common(sp_fit)
    sp_fit.add_argument("--input", required=True)
    sp_fit.add_argument("--method", required=True, choices=_FIT_METHODS)

    sp_sim = sub.add_parser("simulate", help="replication study on a built-in DGP")
    add_common(sp_sim)
    sp_sim.add_argument("--method", required=True,
                        help="comma-separated subset of: " + ",".join(ALL_METHODS))
    sp_sim.add_argument("--dgp", required=True, choices=sorted(_DGP_ALIASES))
    sp_sim.add_argument("--n", type=int, required=True)
    sp_sim.add_argument("--reps", type=int, default=200)
    sp_sim.add_argument("--oracle-m", type=int, default=100_000)

    sp_or = sub.add_parser("oracle", help="true coverage-error curve and threshold")
    add_common(sp_or)
    sp_or.add_argument("--dgp", required=True, choices=sorted(_DGP_ALIASES))
    sp_or.add_argument("--oracle-m", type=int, default=100_000)

    return parser, {"fit": sp_fit, "simulate": sp_sim, "oracle": sp_or}


def _apply_config_file(subparser, sub_argv, args):
    """Merge a key=value config file under explicit command-line flags."""
    if args.config is None:
        return args
    actions = {a.dest: a for a in subparser._actions}
    overrides = {}
    with open(args.config) as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ConfigurationError(
                    f"{args.config}:{line_no}: expected key=value")
            key, value = (part.strip() for part in line.split("=", 1))
            dest = key.replace("-", "_")
            if dest not in actions:
                raise ConfigurationError(
                    f"{args.config}:{line_no}: unknown key {key!r}")
            overrides[dest] = value
    explicit = _explicit_dests(subparser, sub_argv)
    for dest, value in overrides.items():
        if dest in explicit:
            continue
        action = actions[dest]
        if action.type is not None:
            value = action.type(value)
        setattr(args, dest, value)
    return args


def _explicit_dests(parser, argv):
    out = set()
    for a in parser._actions:
        for opt in a.option_strings:
            if opt in argv or any(tok.startswith(opt + "=") for tok in argv):
                out.add(a.dest)
    return out


def _parse_grid(text: str) -> ThresholdGrid:
    parts = text.split(":")
    if len(parts) != 3:
        raise ConfigurationError("--grid must be lo:hi:step")
    lo, hi, step = (float(v) for v in parts)
    return ThresholdGrid.from_range(lo, hi, step)


def _validate_targets(args) -> RiskTargets:
    if not (0.0 < args.alpha_conf < 0.5):
        raise ConfigurationError("alpha-conf must lie in (0, 0.5)")
    if not (0.0 < args.alpha_error < 1.0):
        raise ConfigurationError("alpha-error must lie in (0, 1)")
    return RiskTargets(alpha_error=args.alpha_error, alpha_conf=args.alpha_conf)


def _learner_specs(args):
    g = BinaryLearnerSpec(kind=args.g_learner, ridge=args.ridge)
    e = BinaryLearnerSpec(kind=args.e_learner, ridge=args.ridge)
    return g, e


def _rs_config(args) -> RsConfig:
    return RsConfig(bhat_mult=args.bhat_mult, bhat_fixed=args.bhat_fixed)


def _require_output(args):
    if args.output is None:
        raise ConfigurationError("--output is required")


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------

def _write_table_csv(path, rows, header):
    with open(path, "w", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(row) + "\n")


def _write_meta(path, meta: dict):
    with open(path, "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _table_rows(table: CoverageTable, selected_tau, sentinel):
    rows = []
    for i, tau in enumerate(table.taus):
        selected = (not sentinel) and tau == selected_tau
        rows.append([_fmt(tau), _fmt(table.psi[i]), _fmt(table.sigma[i] / np.sqrt(table.n)),
                     _fmt(table.cub[i]), "1" if selected else "0"])
    return rows


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_fit(args) -> int:
    _require_output(args)
    sample = ingest_csv(args.input)
    grid = _parse_grid(args.grid)
    targets = _validate_targets(args)
    g_spec, e_spec = _learner_specs(args)
    root = RngStream(args.seed)

    meta = {
        "command": "fit",
        "method": args.method,
        "seed": args.seed,
        "n": sample.n,
        "n1": sample.n_source,
        "n0": sample.n_target,
        "folds": args.folds,
        "delta": args.delta,
        "alpha_error": targets.alpha_error,
        "alpha_conf": targets.alpha_conf,
        "grid": [float(t) for t in grid],
        "warnings": [],
    }

    if args.method == "icp":
        folds = make_folds(sample.n, args.folds, root.child("folds"))
        cal_idx = folds.indices(0)
        cal_src = cal_idx[sample.a[cal_idx] == 1]
        if cal_src.size == 0:
            raise DataError("calibration fold has no source units")
        cal = CalibrationSet(sample.score[cal_src])
        res = inductive_cp_threshold(cal, targets)
        # Exact coverage-error distribution of the k-th order statistic.
        if res.is_sentinel:
            psi_hat, se, cub = 0.0, 0.0, 0.0
        else:
            k, m = res.k, cal.m
            psi_hat = k / (m + 1)
            se = float(np.sqrt(k * (m + 1 - k) / ((m + 1) ** 2 * (m + 2))))
            cub = float(beta_dist.ppf(1 - targets.alpha_conf, k, m + 1 - k))
        rows = [[_fmt(res.tau), _fmt(psi_hat), _fmt(se), _fmt(cub),
                 "0" if res.is_sentinel else "1"]]
        meta.update({
            "selected_tau": res.tau,
            "sentinel": res.is_sentinel,
            "calibration_size": cal.m,
            "order_statistic": res.k,
        })
        _write_table_csv(args.output, rows, ["tau", "psi_hat", "se", "cub", "selected"])
        _write_meta(args.output + ".meta.json", meta)
        if res.is_sentinel:
            print(f"icp: no certifiable order statistic among {cal.m} "
                  "calibration scores; sentinel 0 recorded")
        else:
            print(f"icp: selected tau={res.tau:.4g} "
                  f"(order statistic {res.k} of {cal.m})")
        return 0

    if args.method == "rs":
        run = rs_prepare(sample, _rs_config(args), grid, g_spec, e_spec, root)
        table = rs_estimate(run, sample, grid, targets)
        meta.update({"bhat": run.bhat, "pi_hat": run.pi_hat,
                     "n_accepted": run.n_accepted})
    else:
        folds = make_folds(sample.n, args.folds, root.child("folds"))
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            fits = fit_nuisances(sample, folds, grid, g_spec, e_spec,
                                 args.delta, root.child("nuisance"))
            estimate = {
                "onestep": onestep_estimate,
                "tmle": tmle_estimate,
                "plugin": plugin_estimate,
                "wplugin": weighted_plugin_estimate,
            }[args.method]
            table = estimate(sample, folds, grid, fits, targets)
        meta["warnings"] = sorted({str(w.message) for w in caught})
        if args.method == "tmle":
            meta["tmle_fallback_count"] = int(table.extras["fallback"].sum())
            meta["tmle_clipping"] = table.extras["ls_clip"]

    decision = select_threshold(table, targets)
    meta.update({
        "selected_tau": decision.tau_hat,
        "sentinel": decision.is_sentinel,
    })
    rows = _table_rows(table, decision.tau_hat, decision.is_sentinel)
    _write_table_csv(args.output, rows, ["tau", "psi_hat", "se", "cub", "selected"])
    _write_meta(args.output + ".meta.json", meta)
    if decision.is_sentinel:
        print(f"{args.method}: no certifiable threshold "
              f"(alpha_error={targets.alpha_error:.4g}); sentinel 0 recorded")
    else:
        i = list(table.taus).index(decision.tau_hat)
        print(f"{args.method}: selected tau={decision.tau_hat:.4g} "
              f"(psi_hat={table.psi[i]:.4g}, cub={table.cub[i]:.4g})")
    return 0


def cmd_simulate(args) -> int:
    _require_output(args)
    methods = tuple(m.strip() for m in args.method.split(",") if m.strip())
    for m in methods:
        if m not in ALL_METHODS:
            raise ConfigurationError(f"unknown method {m!r}")
    grid = _parse_grid(args.grid)
    targets = _validate_targets(args)
    g_spec, e_spec = _learner_specs(args)
    spec = DgpSpec(_DGP_ALIASES[args.dgp])
    cfg = StudyConfig(grid=grid, targets=targets, g_spec=g_spec, e_spec=e_spec,
                      V=args.folds, delta=args.delta, rs_config=_rs_config(args),
                      oracle_m=args.oracle_m)
    report = run_study(spec, [args.n], methods, args.reps, cfg,
                       RngStream(args.seed))

    rows_path = args.output + ".jsonl"
    with open(rows_path, "w") as fh:
        for r in report.rows:
            record = {
                "method": r.method, "n": r.n, "rep": r.rep,
                "tau_hat": float(r.tau_hat), "sentinel": r.sentinel,
                "true_error": None if r.true_error is None else float(r.true_error),
                "covered": r.covered, "failed": r.failed,
            }
            if r.failure:
                record["failure"] = r.failure
            if r.info:
                record["info"] = {k: (float(v) if isinstance(v, (int, float, np.floating))
                                      else v) for k, v in sorted(r.info.items())}
            fh.write(json.dumps(record, sort_keys=True) + "\n")

    agg_rows = []
    for a in report.aggregates:
        agg_rows.append([
            a.method, str(a.n), str(a.reps), str(a.failures), str(a.covered),
            _fmt(a.proportion), _fmt(a.wilson_lo), _fmt(a.wilson_hi),
            _fmt(a.tau_mean), _fmt(a.tau_median), str(a.sentinel_count),
        ])
    _write_table_csv(args.output, agg_rows,
                     ["method", "n", "reps", "failures", "covered",
                      "proportion", "wilson_lo", "wilson_hi",
                      "tau_mean", "tau_median", "sentinel_count"])
    _write_meta(args.output + ".meta.json", {"command": "simulate",
                                             **report.config})
    for a in report.aggregates:
        print(f"{a.method}: n={a.n} proportion={a.proportion:.4g} "
              f"wilson=[{a.wilson_lo:.4g}, {a.wilson_hi:.4g}] "
              f"failures={a.failures}")
    return 0


def cmd_oracle(args) -> int:
    _require_output(args)
    grid = _parse_grid(args.grid)
    spec = DgpSpec(_DGP_ALIASES[args.dgp])
    root = RngStream(args.seed)
    curve = oracle_psi_curve(spec, list(grid), args.oracle_m, root.child("oracle-psi"))
    tau0 = oracle_tau0(spec, args.alpha_error, args.oracle_m,
                       root.child("oracle-tau0"))
    rows = [[_fmt(t), _fmt(v)] for t, v in zip(grid, curve)]
    _write_table_csv(args.output, rows, ["tau", "psi"])
    _write_meta(args.output + ".meta.json", {
        "command": "oracle",
        "dgp": spec.kind,
        "alpha_error": args.alpha_error,
        "oracle_m": args.oracle_m,
        "seed": args.seed,
        "tau0": tau0,
    })
    print(f"{spec.kind}: tau0={tau0:.4g} at alpha_error={args.alpha_error:.4g} "
          f"(M={args.oracle_m})")
    return 0


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser, subparsers = _build_parser()
    args = parser.parse_args(argv)
    try:
        args = _apply_config_file(subparsers[args.command], argv, args)
        if args.command == "fit":
            return cmd_fit(args)
        if args.command == "simulate":
            return cmd_simulate(args)
        return cmd_oracle(args)
    except ShiftsetError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":  # pragma: no cover
    raise SystemExit(main())
