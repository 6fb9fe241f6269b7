"""Command line interface: ``cstockloss {fit,estimate,aggregate,simulate,report}``.

Every option can also be given in a JSON file passed with ``--config``; flags
on the command line take precedence. Exit codes: 0 success, 1 input error,
2 estimation degeneracy, 3 validation failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from cstockloss.assisted import (
    best_combination,
    load_aggregates,
    ma_total,
    relative_efficiency,
    residual_arrays,
    save_aggregates,
    synthetic_total_als_fcl,
    synthetic_total_fcl,
)
from cstockloss.design import (
    EstimateResult,
    EstimatorTag,
    average_annual,
    be_estimate,
    stratified_combine,
)
from cstockloss.errors import (
    CstockError,
    DegenerateModelError,
    EstimationError,
    InputError,
    ValidationFailure,
)
from cstockloss.grid import aggregate, load_grid, synthetic_map, write_grid
from cstockloss.models import (
    AlsFclModel,
    OutlierRule,
    PanelWindow,
    als_eligible_array,
    changed_since_als,
    fit_cstock_model,
    fit_fcl_model,
    load_params,
    recode_fcl_array,
    save_params,
)
from cstockloss.survey import DomainSelector, cluster_means, load_dataset, to_arrays

log = logging.getLogger("cstockloss")

ESTIMATORS = ("BE", "MA-FCL", "MA-ALS-FCL")
MODES = ("annual", "pooled", "average", "best")
_SCOPE_ORDER = {"annual": 0, "average": 1, "pooled": 2}
_EST_ORDER = {"BE": 0, "MA-FCL": 1, "MA-ALS-FCL": 2, "MA-BEST": 3}


# --- helpers -----------------------------------------------------------------------------


def _split(value):
    if value is None:
        return None
    if isinstance(value, (list, tuple)):
        return [str(v) for v in value]
    return [v.strip() for v in str(value).split(",") if v.strip()]


def _merge_config(args, parser):
    """Fill unset flags from ``--config`` JSON, then from parser defaults."""
    cfg = {}
    if getattr(args, "config", None):
        try:
            cfg = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise InputError(f"{args.config}: {exc}") from None
    defaults = getattr(args, "_defaults", {})
    for key, default in defaults.items():
        if getattr(args, key, None) is None:
            setattr(args, key, cfg.get(key, default))
    args._file_config = cfg
    return args


def _require_file(path, what):
    if path is None:
        raise InputError(f"{what} is required")
    if not Path(path).exists():
        raise InputError(f"{what} not found: {path}")
    return path


def _windows_from_text(tokens, interval):
    out = []
    for tok in tokens:
        if "-" in tok:
            a, b = tok.split("-", 1)
            out.append(PanelWindow.pooled(int(a), int(b), interval))
        else:
            out.append(PanelWindow(int(tok), "annual", interval_years=interval))
    return out


def _fmt(v, digits=6):
    if v is None or (isinstance(v, float) and math.isnan(v)):
        return ""
    if isinstance(v, float):
        return f"{v:.{digits}g}" if abs(v) < 1e15 else f"{v:.6e}"
    return str(v)


def write_table(rows, columns, out_dir, stem, formats):
    """Write rows as CSV (machine), aligned text (human) and JSON (tooling)."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    if "csv" in formats:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_fmt(r.get(c), 12) for c in columns])
        (out_dir / f"{stem}.csv").write_text(buf.getvalue(), encoding="utf-8")
        written.append(out_dir / f"{stem}.csv")
    if "txt" in formats:
        (out_dir / f"{stem}.txt").write_text(aligned(rows, columns), encoding="utf-8")
        written.append(out_dir / f"{stem}.txt")
    if "json" in formats:
        clean = [
            {c: (None if isinstance(r.get(c), float) and math.isnan(r[c]) else r.get(c)) for c in columns}
            for r in rows
        ]
        (out_dir / f"{stem}.json").write_text(json.dumps(clean, indent=2) + "\n", encoding="utf-8")
        written.append(out_dir / f"{stem}.json")
    return written


def aligned(rows, columns, digits=6):
    cells = [[_fmt(r.get(c), digits) for c in columns] for r in rows]
    widths = [max([len(c)] + [len(row[i]) for row in cells]) for i, c in enumerate(columns)]
    lines = ["  ".join(c.ljust(w) for c, w in zip(columns, widths)).rstrip()]
    lines.append("  ".join("-" * w for w in widths))
    lines += ["  ".join(v.rjust(w) for v, w in zip(row, widths)).rstrip() for row in cells]
    return "\n".join(lines) + "\n"


# --- fit -----------------------------------------------------------------------------------


def _window_selection(arr, w):
    lo = w.t if w.mode == "annual" else w.t1
    sub_year = arr.subplot_panel_year
    return (sub_year >= lo) & (sub_year <= w.t)


def _model_windows(ds, modes):
    years = ds.panel_years
    k = ds.interval_years
    out = []
    if {"annual", "average", "best"} & set(modes):
        out += [PanelWindow(y, "annual", interval_years=k) for y in years]
    if "pooled" in modes:
        ds.check_pooled()
        out.append(PanelWindow.pooled(years[0], years[-1], k))
    return out


def fit_models(ds, windows, fit_cstock=False, outlier_rule=OutlierRule()):
    """Fit one FCL model per window (all land uses) and optionally the stock model."""
    arr = to_arrays(ds.plots)
    params, problems = {}, []
    for w in windows:
        sel = _window_selection(arr, w)
        try:
            params[f"fcl/{w.key}"] = fit_fcl_model(arr.y[sel], recode_fcl_array(arr.fcl_year[sel], w))
        except DegenerateModelError as exc:
            problems.append(f"panel {w.key}: {exc}")
    if fit_cstock:
        has = np.isfinite(arr.als_height) & np.isfinite(arr.c_stock)
        if not has.any():
            problems.append("stock model: no sub-plots with both ALS height and c_stock")
        else:
            changed = changed_since_als(arr.fcl_year, arr.als_year, arr.subplot_panel_year)
            try:
                params["cstock"] = fit_cstock_model(
                    arr.als_height[has], arr.c_stock[has], outlier_rule, changed=changed[has]
                )
            except DegenerateModelError as exc:
                problems.append(f"stock model: {exc}")
    return params, problems


def _fit_table(ds, windows, params):
    """Rows shaped like an inventory parameter table: newest panel first, pooled last."""
    arr = to_arrays(ds.plots)
    order = sorted(windows, key=lambda w: (w.mode == "pooled", -w.t))
    rows = []
    for w in order:
        p = params.get(f"fcl/{w.key}")
        if p is None:
            continue
        sel = _window_selection(arr, w)
        flags = recode_fcl_array(arr.fcl_year, w) & sel
        covered = flags & als_eligible_array(arr.als_year, w)
        n_t = int(np.unique(arr.cluster[sel]).size)
        rows.append(dict(panel=w.key, n_t=n_t, parameter="ybar_N", estimate=p.ybar_n,
                         n_by_fcl=p.n_n, n_als=""))
        rows.append(dict(panel="", n_t="", parameter="ybar_CL", estimate=p.ybar_cl,
                         n_by_fcl=p.n_cl, n_als=int(covered.sum())))
    return rows


def cmd_fit(args) -> int:
    strata = _require_file(args.strata, "--strata")
    if args.params:
        params = load_params(_require_file(args.params, "--params"))
        print(f"{args.params}: {len(params)} valid parameter record(s)")
        return 0
    ds = load_dataset(_require_file(args.plots, "--plots"), strata, interval_years=args.interval)
    windows = _model_windows(ds, _split(args.mode))
    rule = OutlierRule(exclude_changed=not args.keep_changed, residual_cutoff=args.residual_cutoff)
    params, problems = fit_models(ds, windows, fit_cstock=args.fit_cstock, outlier_rule=rule)
    if args.cstock_params:
        supplied = load_params(args.cstock_params)
        if "cstock" not in supplied:
            raise InputError(f"{args.cstock_params}: no 'cstock' record")
        params["cstock"] = supplied["cstock"]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if params:
        save_params(out / "models.json", params)
    cols = ["panel", "n_t", "parameter", "estimate", "n_by_fcl", "n_als"]
    sys.stdout.write(aligned(_fit_table(ds, windows, params), cols, digits=4))
    if "cstock" in params:
        c = params["cstock"]
        print(f"stock model: b0={c.beta0:.6g} b1={c.beta1:.6g} b2={c.beta2:.6g} (n={c.fit_n})")
    if problems:
        for p in problems:
            print(f"error: {p}", file=sys.stderr)
        return DegenerateModelError.exit_code
    return 0


# --- estimate ------------------------------------------------------------------------------


def _load_models(args, ds, windows, need_cstock):
    params = load_params(args.params) if args.params else {}
    missing = [w for w in windows if f"fcl/{w.key}" not in params]
    fitted, problems = fit_models(ds, missing, fit_cstock=need_cstock and "cstock" not in params)
    params.update(fitted)
    return params, problems


def estimate_rows(ds, aggregates, params, modes, domains, estimators, clamp=True, strict_appendix=False):
    """All requested estimates as report rows (deterministic order)."""
    windows = _model_windows(ds, modes)
    agg_index = {(a.stratum_id, a.window.key if a.window else None): a for a in aggregates}
    strata = [s.stratum_id for s in ds.strata]
    rows, results = [], {}

    def record(key, res_or_error):
        results[key] = res_or_error

    for dname in domains:
        d = DomainSelector.parse(dname)
        arr = to_arrays(ds.plots, d)
        y_i = cluster_means(arr.cluster, np.where(arr.indicator, arr.y, 0.0), arr.m)
        for w in windows:
            lo = w.t if w.mode == "annual" else w.t1
            in_w = (arr.panel_year >= lo) & (arr.panel_year <= w.t)
            scope = w.mode
            year = w.t if w.mode == "annual" else None
            fcl = params.get(f"fcl/{w.key}")
            for est in estimators:
                model = None
                if est == "MA-FCL":
                    model = fcl
                elif est == "MA-ALS-FCL":
                    cs = params.get("cstock")
                    model = None if fcl is None or cs is None else AlsFclModel(cs, fcl, ds.interval_years, clamp)
                for sid in strata:
                    tag = EstimatorTag(
                        estimator="BE" if est == "BE" else "MA",
                        model=None if est == "BE" else est[3:],
                        scope=scope, year=year, stratum=sid, domain=d.label,
                    )
                    key = (d.label, w.key, est, sid)
                    sel = in_w & (arr.stratum == sid)
                    area = ds.stratum(sid).area
                    try:
                        if est == "BE":
                            record(key, be_estimate(arr.m[sel], y_i[sel], area, tag))
                            continue
                        if model is None:
                            raise EstimationError(f"no {est[3:]} working model for {w.key}")
                        agg = agg_index.get((sid, w.key)) or agg_index.get((None, w.key))
                        if agg is None:
                            raise InputError(f"missing aggregates for stratum {sid}, window {w.key}")
                        if est == "MA-FCL":
                            synth = synthetic_total_fcl(agg, model)
                        else:
                            synth = synthetic_total_als_fcl(agg, model, strict_appendix=strict_appendix)
                        res = residual_arrays(_subset(arr, sel), model, w)
                        record(key, ma_total(synth, res, area, tag))
                    except InputError:
                        raise
                    except EstimationError as exc:
                        record(key, exc)
                combined = [results[(d.label, w.key, est, sid)] for sid in strata]
                if all(isinstance(r, EstimateResult) for r in combined):
                    record((d.label, w.key, est, "combined"), stratified_combine(combined))
                else:
                    bad = next(r for r in combined if not isinstance(r, EstimateResult))
                    record((d.label, w.key, est, "combined"), bad)

        annual = [w for w in windows if w.mode == "annual"]
        if annual and ({"average", "best"} & set(modes)):
            for sid in strata + ["combined"]:
                if "average" in modes:
                    for est in estimators:
                        per_year = {w.t: results[(d.label, w.key, est, sid)] for w in annual}
                        ok = {t: r for t, r in per_year.items() if isinstance(r, EstimateResult)}
                        if len(ok) == len(per_year):
                            record((d.label, "average", est, sid), average_annual(ok))
                        else:
                            bad = [t for t in per_year if t not in ok]
                            record((d.label, "average", est, sid), EstimationError(f"annual estimate missing for {bad}"))
                if "best" in modes and sid == "combined":
                    cands = {
                        w.t: [r for est in estimators
                              if isinstance(r := results[(d.label, w.key, est, sid)], EstimateResult)]
                        for w in annual
                    }
                    try:
                        record((d.label, "average", "MA-BEST", sid), best_combination(cands))
                    except EstimationError as exc:
                        record((d.label, "average", "MA-BEST", sid), exc)

    for (dom, wkey, est, sid), r in results.items():
        scope = "average" if wkey == "average" else ("pooled" if "-" in wkey else "annual")
        if scope == "annual" and "annual" not in modes:
            continue
        if scope == "average" and est != "MA-BEST" and "average" not in modes:
            continue
        be = results.get((dom, wkey, "BE", sid))
        row = dict(scope=scope, period="" if scope == "average" else wkey, stratum=sid,
                   domain=dom, estimator=est)
        if isinstance(r, EstimateResult):
            re = math.nan
            if est != "BE" and isinstance(be, EstimateResult):
                try:
                    re = relative_efficiency(be, r)
                except EstimationError:
                    pass
            row.update(n=r.n, total=r.total, variance=r.variance,
                       se_pct=math.nan if r.se_pct is None else r.se_pct, re=re, note="")
        else:
            row.update(n=None, total=math.nan, variance=math.nan, se_pct=math.nan, re=math.nan, note=str(r))
        rows.append(row)

    rows.sort(key=lambda r: (
        r["domain"] != "all", r["domain"], _SCOPE_ORDER[r["scope"]], r["period"],
        r["stratum"] == "combined", r["stratum"], _EST_ORDER[r["estimator"]],
    ))
    return rows


def _subset(arr, cluster_mask):
    from cstockloss.survey import SubplotArrays

    keep = cluster_mask[arr.cluster]
    new_index = np.cumsum(cluster_mask) - 1
    return SubplotArrays(
        cluster=new_index[arr.cluster[keep]],
        y=arr.y[keep], indicator=arr.indicator[keep], fcl_year=arr.fcl_year[keep],
        als_height=arr.als_height[keep], als_year=arr.als_year[keep], c_stock=arr.c_stock[keep],
        m=arr.m[cluster_mask], panel_year=arr.panel_year[cluster_mask], stratum=arr.stratum[cluster_mask],
    )


ESTIMATE_COLUMNS = ["scope", "period", "stratum", "domain", "estimator", "n", "total", "variance",
                    "se_pct", "re", "note"]


def cmd_estimate(args) -> int:
    ds = load_dataset(_require_file(args.plots, "--plots"), _require_file(args.strata, "--strata"),
                      interval_years=args.interval)
    modes = _split(args.mode)
    for m in modes:
        if m not in MODES:
            raise InputError(f"unknown mode {m!r}; choose from {', '.join(MODES)}")
    estimators = _split(args.estimators)
    for e in estimators:
        if e not in ESTIMATORS:
            raise InputError(f"unknown estimator {e!r}; choose from {', '.join(ESTIMATORS)}")
    ma = [e for e in estimators if e != "BE"]
    aggregates = []
    if ma:
        aggregates = load_aggregates(_require_file(args.aggregates, "--aggregates (required for MA)"))
    windows = _model_windows(ds, modes)
    params, problems = ({}, [])
    if ma:
        params, problems = _load_models(args, ds, windows, need_cstock="MA-ALS-FCL" in ma and args.fit_cstock)
        if "MA-ALS-FCL" in ma and "cstock" not in params:
            raise InputError("MA-ALS-FCL needs a 'cstock' record in --params or --fit-cstock")
    for p in problems:
        print(f"warning: {p}", file=sys.stderr)
    rows = estimate_rows(ds, aggregates, params, modes, _split(args.domain), estimators,
                         clamp=not args.no_clamp, strict_appendix=args.strict_appendix)
    write_table(rows, ESTIMATE_COLUMNS, args.out, "estimates", _split(args.format))
    sys.stdout.write(aligned(rows, ESTIMATE_COLUMNS, digits=5))
    flagged = [r for r in rows if r["note"]]
    for r in flagged:
        print(f"flagged: {r['scope']} {r['period']} {r['stratum']} {r['estimator']}: {r['note']}", file=sys.stderr)
    return 0


# --- aggregate -----------------------------------------------------------------------------


def cmd_aggregate(args) -> int:
    fcl = load_grid(_require_file(args.fcl, "--fcl"))
    height = load_grid(args.als_height) if args.als_height else None
    year = load_grid(args.als_year) if args.als_year else None
    windows = _windows_from_text(_split(args.windows), args.interval)
    aggs = [aggregate(fcl, height, year, w, stratum_id=args.stratum) for w in windows]
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    if args.append and out.exists():
        existing = [a for a in load_aggregates(out)
                    if (a.stratum_id, a.window.key if a.window else None)
                    not in {(b.stratum_id, b.window.key) for b in aggs}]
        aggs = existing + aggs
    save_aggregates(out, aggs)
    rows = [dict(stratum=a.stratum_id or "", window=a.window.key if a.window else "", lam=a.lam,
                 lam_cl=a.lam_cl, lam_l=a.lam_l, lam_n=a.lam_n, xbar_l=a.xbar_l) for a in aggs]
    sys.stdout.write(aligned(rows, ["stratum", "window", "lam", "lam_cl", "lam_l", "lam_n", "xbar_l"]))
    if args.map_dir:
        params = load_params(_require_file(args.params, "--params (needed for --map-dir)"))
        Path(args.map_dir).mkdir(parents=True, exist_ok=True)
        for w in windows:
            fclp = params.get(f"fcl/{w.key}")
            if fclp is None:
                raise InputError(f"--params has no fcl/{w.key} record")
            model = fclp
            if "cstock" in params and height is not None:
                model = AlsFclModel(params["cstock"], fclp, args.interval, not args.no_clamp)
            write_grid(synthetic_map(fcl, height, year, model, w), Path(args.map_dir) / f"map_{w.key}.grid")
    return 0


# --- simulate ------------------------------------------------------------------------------


def _parse_set(items):
    out = {}
    for item in items or []:
        if "=" not in item:
            raise InputError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        try:
            out[k.strip()] = json.loads(v)
        except json.JSONDecodeError:
            out[k.strip()] = v
    return out


def cmd_simulate(args) -> int:
    from cstockloss.simulation import PopulationConfig, SimulationPlan, run_replications

    file_cfg = dict(args._file_config.get("population", {}))
    file_cfg.update(_parse_set(args.set))
    if args.seed is not None:
        file_cfg["seed"] = args.seed
    cfg = PopulationConfig.from_dict(file_cfg)
    if args.replications < 2 and not args.exhaustive:
        raise InputError(f"replication count must be >= 2, got {args.replications}")
    plan = SimulationPlan(
        design=args.design,
        n=args.n,
        models=tuple(_split(args.models)),
        scopes=tuple(_split(args.scopes)),
        domain=args.domain,
    )
    report = run_replications(cfg, plan, R=args.replications, workers=args.workers,
                              exhaustive=args.exhaustive, cap=args.cap)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.csv").write_text(report.to_csv(), encoding="utf-8")
    (out / "report.json").write_text(report.to_json(), encoding="utf-8")
    cols = ["key", "truth", "mean", "rel_bias", "rel_mcse", "var_ratio", "mean_re", "failures"]
    text = aligned(report.rows(), cols, digits=5)
    (out / "report.txt").write_text(text, encoding="utf-8")
    sys.stdout.write(text)
    for k in report.high_failure():
        print(f"warning: {k}: failure rate {report[k].failure_rate:.1%} above threshold", file=sys.stderr)
    if args.check:
        problems = report.check()
        for p in problems:
            print(f"check failed: {p}", file=sys.stderr)
        if problems:
            return ValidationFailure.exit_code
        print("check: all validation properties hold")
    return 0


# --- report --------------------------------------------------------------------------------


def report_table(rows, stratum="combined"):
    """Reshape estimate rows into one line per period with BE and MA columns side by side."""
    out = []
    keyed = {}
    for r in rows:
        if r["stratum"] != stratum:
            continue
        keyed.setdefault((r["domain"], r["scope"], r["period"]), {})[r["estimator"]] = r
    for (dom, scope, period), ests in sorted(
        keyed.items(), key=lambda kv: (kv[0][0] != "all", kv[0][0], _SCOPE_ORDER[kv[0][1]], _neg(kv[0][2]))
    ):
        line = dict(domain=dom, scope=scope, period=period)
        for est in ("BE", "MA-ALS-FCL", "MA-FCL", "MA-BEST"):
            r = ests.get(est, {})
            total = r.get("total")
            line[f"{est} total(1e6 t)"] = None if total is None else total / 1e6
            line[f"{est} SE%"] = r.get("se_pct")
            if est != "BE":
                line[f"{est} RE"] = r.get("re")
        out.append(line)
    return out


def _neg(period):
    try:
        return -int(str(period).split("-")[-1])
    except ValueError:
        return 0


def cmd_report(args) -> int:
    path = _require_file(args.estimates, "--estimates")
    try:
        rows = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: {exc}") from None
    for r in rows:
        for k in ("total", "se_pct", "re"):
            if r.get(k) is None:
                r[k] = math.nan
    table = report_table(rows, args.stratum)
    if not table:
        raise InputError(f"no rows for stratum {args.stratum!r}")
    cols = [c for c in table[0] if any(not _blank(t.get(c)) for t in table) or c in ("domain", "scope", "period")]
    text = aligned(table, cols, digits=4)
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    sys.stdout.write(text)
    return 0


def _blank(v):
    return v is None or (isinstance(v, float) and math.isnan(v))


# --- parser --------------------------------------------------------------------------------


def _add(p, *flags, default=None, **kw):
    dest = kw.get("dest") or flags[0].lstrip("-").replace("-", "_")
    p._cs_defaults[dest] = default
    p.add_argument(*flags, default=None, **kw)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cstockloss", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def command(name, func, help):
        p = sub.add_parser(name, help=help)
        p._cs_defaults = {}
        p.add_argument("--config", help="JSON file with option values")
        p.set_defaults(func=func, _parser=p)
        return p

    p = command("fit", cmd_fit, "fit FCL models per panel (and the ALS stock model)")
    _add(p, "--plots")
    _add(p, "--strata")
    _add(p, "--interval", type=int, default=5)
    _add(p, "--mode", default="annual,pooled", help="annual and/or pooled")
    _add(p, "--fit-cstock", action="store_const", const=True, default=False)
    _add(p, "--cstock-params", help="parameter file with a 'cstock' record to include")
    _add(p, "--params", help="validate this parameter file instead of fitting")
    _add(p, "--keep-changed", action="store_const", const=True, default=False,
         help="do not drop pairs changed between ALS and field visit")
    _add(p, "--residual-cutoff", type=float)
    _add(p, "--out", default=".")

    p = command("estimate", cmd_estimate, "BE and MA totals, SE%% and RE")
    _add(p, "--plots")
    _add(p, "--strata")
    _add(p, "--aggregates")
    _add(p, "--params", help="parameter file from `fit` (missing FCL models are fitted)")
    _add(p, "--fit-cstock", action="store_const", const=True, default=False)
    _add(p, "--interval", type=int, default=5)
    _add(p, "--mode", default="annual,average", help=f"comma list of {', '.join(MODES)}")
    _add(p, "--domain", default="all", help="comma list, e.g. all,forest")
    _add(p, "--estimators", default="BE", help=f"comma list of {', '.join(ESTIMATORS)}")
    _add(p, "--no-clamp", action="store_const", const=True, default=False)
    _add(p, "--strict-appendix", action="store_const", const=True, default=False,
         help="do not annualize the ALS term of the synthetic total")
    _add(p, "--out", default=".")
    _add(p, "--format", default="csv,txt,json")

    p = command("aggregate", cmd_aggregate, "population areas from FCL/ALS grids")
    _add(p, "--fcl")
    _add(p, "--als-height")
    _add(p, "--als-year")
    _add(p, "--windows", help="comma list of years (annual) or t1-tT (pooled)")
    _add(p, "--interval", type=int, default=5)
    _add(p, "--stratum")
    _add(p, "--out", default="aggregates.json")
    _add(p, "--append", action="store_const", const=True, default=False)
    _add(p, "--map-dir", help="write per-cell prediction grids here")
    _add(p, "--params")
    _add(p, "--no-clamp", action="store_const", const=True, default=False)

    p = command("simulate", cmd_simulate, "Monte Carlo validation on a synthetic population")
    _add(p, "--seed", type=int)
    _add(p, "--replications", "-R", type=int, default=1000, dest="replications")
    _add(p, "--design", choices=["srs", "systematic"], default="srs")
    _add(p, "--n", type=int, default=150)
    _add(p, "--models", default="BE,MA-FCL,MA-ALS-FCL,MA-BEST")
    _add(p, "--scopes", default="annual,pooled,average")
    _add(p, "--domain", default="all")
    _add(p, "--workers", type=int, default=1)
    _add(p, "--exhaustive", action="store_const", const=True, default=False)
    _add(p, "--cap", type=int, default=1_000_000)
    _add(p, "--check", action="store_const", const=True, default=False)
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="population setting, e.g. --set loss_prevalence=0.02")
    _add(p, "--out", default="simulation")

    p = command("report", cmd_report, "render estimates as a side-by-side table")
    _add(p, "--estimates")
    _add(p, "--stratum", default="combined")
    _add(p, "--out")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    args._defaults = args._parser._cs_defaults
    try:
        _merge_config(args, args._parser)
        return args.func(args)
    except CstockError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
