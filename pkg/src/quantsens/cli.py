"""
Command-line interface.

    quantsens ingest    --config run.json
    quantsens fit       --config run.json [--panel panel.csv]
    quantsens qs        --config run.json [--system system.json] --response NAME
                        [--impulse-tau T ...] [--delta X] [--at-date YYYY-MM]
    quantsens bootstrap --config run.json [--panel panel.csv] --response NAME --impulse-tau T
    quantsens simulate  --config run.json [--T N] [--seed S]
    quantsens subperiods --config run.json [--panel panel.csv] --response NAME
    quantsens fetch     --url URL --out FILE [--api-key-env VAR]

Curves and bands are CSV with a leading ``#`` provenance line; systems and
metadata are JSON.  Every artifact records the config hash and the tool
version.  Exit codes: 0 ok, 2 config, 3 data, 4 numerical, 5 bootstrap.
"""

import argparse
import hashlib
import json
import os
import sys
import urllib.parse
import urllib.request
from pathlib import Path

import numpy as np

from . import __version__
from .bootstrap import BootstrapSpec, CurveQuery, bootstrap_curve
from .config import load_config
from .errors import ConfigError, DataError, QSError
from .ingest import AlignedPanel, align, build_design, conditioning_row, format_month, parse_csv, \
    to_month, to_yoy_growth
from .qr import FitGrid, QuantileFit
from .system import QuantileSystem, estimate_system, level_index, predicted_quantiles, \
    projection_matrix, sensitivity_curve, subperiod_systems, tau_level_lookup
from .validation import LocationScaleDGP, analytic_system, simulate


def _num(v):
    return repr(float(v))


def _header_line(cfg_hash):
    return f"# quantsens {__version__} config_sha256={cfg_hash}\n"


def write_json(path, payload, cfg_hash):
    payload = {"version": __version__, "config_sha256": cfg_hash, **payload}
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=1, sort_keys=True) + "\n")
    return path


def write_csv(path, header, rows, cfg_hash):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [_header_line(cfg_hash), ",".join(header) + "\n"]
    lines += [",".join(str(c) if isinstance(c, str) else _num(c) for c in row) + "\n" for row in rows]
    path.write_text("".join(lines))
    return path


def read_csv_rows(path):
    path = Path(path)
    if not path.exists():
        raise DataError(f"file not found: {path}")
    lines = [ln for ln in path.read_text().splitlines() if ln and not ln.startswith("#")]
    header = lines[0].split(",")
    return header, [ln.split(",") for ln in lines[1:]]


def write_panel(path, panel, cfg_hash):
    rows = [[format_month(d)] + list(panel.values[t]) for t, d in enumerate(panel.dates)]
    return write_csv(path, ["date", *panel.names], rows, cfg_hash)


def read_panel(path, impulse, responses=None):
    header, rows = read_csv_rows(path)
    if header[0] != "date":
        raise DataError(f"{path}: first column must be 'date'")
    names = tuple(header[1:])
    dates = np.array([to_month(r[0]) for r in rows], dtype="datetime64[M]")
    values = np.array([[float(v) for v in r[1:]] for r in rows])
    if responses is None:
        responses = tuple(n for n in names if n != impulse)
    return AlignedPanel(dates, names, values, impulse, tuple(responses))


def _sha256(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def cmd_ingest(cfg, args):
    if not cfg.series:
        raise ConfigError("no series configured")
    series, provenance = [], []
    for spec in cfg.series:
        raw = parse_csv(spec.path, spec.name, spec.date_column, spec.value_column)
        out = raw if spec.is_rate else to_yoy_growth(raw)
        series.append(out)
        provenance.append({
            "name": spec.name, "path": str(Path(cfg.raw["series"][len(provenance)]["path"])),
            "sha256": _sha256(spec.path), "role": spec.role,
            "transform": "passthrough" if spec.is_rate else "yoy_log_growth_pct",
            "dropped_rows": raw.dropped, "raw_observations": len(raw),
            "raw_range": [format_month(raw.dates[0]), format_month(raw.dates[-1])],
        })
    panel = align(series, cfg.impulse, cfg.responses)
    out_dir = cfg.output_dir
    target = Path(args.out) if args.out else out_dir / "panel.csv"
    write_panel(target, panel, cfg.digest())
    write_json(target.with_suffix(".json"), {
        "kind": "panel_provenance", "series": provenance, "gaps": 0,
        "observations": panel.T, "range": [format_month(panel.dates[0]), format_month(panel.dates[-1])],
        "impulse": panel.impulse, "responses": list(panel.responses),
    }, cfg.digest())
    return target


def _load_panel(cfg, path):
    return read_panel(path or cfg.output_dir / "panel.csv", cfg.impulse, cfg.responses)


def system_payload(est, panel, cfg):
    system = est.system
    S = projection_matrix(system, cfg.cond_threshold)
    lookup = build_design(panel, cfg.p, 1)
    impulse_obs = lookup.target(panel.impulse, 1)
    counts = {}
    for status in system.status.values():
        counts[status] = counts.get(status, 0) + 1
    return {
        "kind": "quantile_system",
        "variables": list(system.variables), "impulse": panel.impulse,
        "responses": list(panel.responses),
        "p": cfg.p, "h": system.h, "d": system.d, "taus": [float(t) for t in system.taus],
        "index": [[v, t] for v, t in system.index],
        "B1": system.B1.tolist(), "Bh": system.Bh.tolist(),
        "cond": S.cond, "design_cond": est.design.cond,
        "sample": [format_month(est.design.dates[0]), format_month(est.design.dates[-1])],
        "fit_status": system.status, "fit_counts": counts,
        "rearrange": cfg.rearrange, "cond_threshold": cfg.cond_threshold,
        "lookup": {
            "dates": [format_month(d) for d in panel.dates[lookup.origin + 1]],
            "Z": lookup.Z.tolist(), "impulse_obs": impulse_obs.tolist(),
        },
        "z_last": conditioning_row(panel, cfg.p).tolist(),
        "z_last_date": format_month(panel.dates[-1]),
    }


def cmd_fit(cfg, args):
    panel = _load_panel(cfg, args.panel)
    est = estimate_system(panel, cfg.pipeline())
    target = Path(args.out) if args.out else cfg.output_dir / "system.json"
    return write_json(target, system_payload(est, panel, cfg), cfg.digest())


def load_system(path):
    path = Path(path)
    if not path.exists():
        raise DataError(f"file not found: {path}")
    data = json.loads(path.read_text())
    if data.get("kind") != "quantile_system":
        raise DataError(f"{path} is not a quantile system artifact")
    system = QuantileSystem(np.array(data["B1"]), np.array(data["Bh"]), tuple(data["variables"]),
                            np.array(data["taus"]), int(data["h"]), data.get("fit_status", {}))
    return system, data


def _impulse_grid(system, impulse):
    betas = system.block(impulse, 1)
    fits = tuple(QuantileFit(float(t), b, float("nan")) for t, b in zip(system.taus, betas))
    return FitGrid(impulse, 1, system.taus, fits)


def _tau_tag(t):
    return f"{t:.3f}".rstrip("0").rstrip(".")


def cmd_qs(cfg, args):
    system, data = load_system(args.system or cfg.output_dir / "system.json")
    S = projection_matrix(system, float(data.get("cond_threshold", cfg.cond_threshold)))
    impulse = args.impulse or data["impulse"]
    response = args.response
    if response not in system.variables:
        raise ConfigError(f"unknown response {response!r}")
    rearrange = bool(data.get("rearrange", True))
    meta = {"kind": "qs_curve", "system_sha256": _sha256(args.system or cfg.output_dir / "system.json"),
            "response": response, "impulse": impulse, "h": system.h}

    if args.at_date:
        dates = data["lookup"]["dates"]
        stamp = format_month(to_month(args.at_date))
        if stamp not in dates:
            raise DataError(f"date {stamp} not covered by the system's lookup rows")
        t = dates.index(stamp)
        z = np.array(data["lookup"]["Z"][t])
        y_obs = float(data["lookup"]["impulse_obs"][t])
        fits_j = _impulse_grid(system, impulse)
        level = tau_level_lookup(fits_j, z, y_obs, rearrange)
        q = predicted_quantiles(fits_j.betas, z, rearrange)
        clamped = bool(y_obs > q[-1] or y_obs < q[0])
        levels = [level]
        meta.update({"at_date": stamp, "resolved_tau": level, "observed": y_obs, "clamped": clamped})
    else:
        levels = args.impulse_tau or list(cfg.impulse_taus)
        z = np.array(data["z_last"])
        meta["conditioning_date"] = data["z_last_date"]
        for lv in levels:
            level_index(system.taus, lv)

    out_dir = Path(args.out_dir) if args.out_dir else cfg.output_dir
    written = []
    for level in levels:
        curve = sensitivity_curve(S, response, system.taus, impulse, level)
        header, cols = ["tau", "qs"], [curve.grid, curve.values]
        m = dict(meta, impulse_tau=float(level))
        if args.delta is not None:
            baseline = predicted_quantiles(system.block(response, system.h), z, rearrange)
            cols.append(baseline + curve.values * args.delta)
            header.append("perturbed")
            m.update({"delta": args.delta, "baseline": baseline.tolist()})
        stem = f"qs_{response}_tau{_tau_tag(level)}" + (f"_{format_month(to_month(args.at_date))}" if args.at_date else "")
        path = write_csv(out_dir / f"{stem}.csv", header, zip(*cols), cfg.digest())
        write_json(out_dir / f"{stem}.json", m, cfg.digest())
        written.append(path)
    return written


def cmd_bootstrap(cfg, args):
    panel = _load_panel(cfg, args.panel)
    spec = BootstrapSpec(
        args.replicates or cfg.bootstrap.replicates,
        args.block_length or cfg.bootstrap.block_length,
        cfg.seed if args.seed is None else args.seed,
        args.coverage or cfg.bootstrap.coverage,
    )
    query = CurveQuery(args.response, args.impulse_tau, args.impulse or panel.impulse)
    band = bootstrap_curve(panel, cfg.pipeline(), query, spec)
    out_dir = Path(args.out_dir) if args.out_dir else cfg.output_dir
    stem = f"band_{args.response}_tau{_tau_tag(args.impulse_tau)}"
    path = write_csv(out_dir / f"{stem}.csv", ["tau", "lower", "center", "upper"],
                     zip(band.grid, band.lower, band.center, band.upper), cfg.digest())
    write_json(out_dir / f"{stem}.json", {
        "kind": "qs_band", "response": args.response, "impulse": query.impulse,
        "impulse_tau": args.impulse_tau, "h": cfg.h, "p": cfg.p,
        "replicates": spec.replicates, "replicates_used": band.replicates_used,
        "failures": band.failures, "block_length": band.block_length, "seed": spec.seed,
        "coverage": spec.coverage, "center": "replicate_mean", "point": band.point.tolist(),
    }, cfg.digest())
    return path


def cmd_simulate(cfg, args):
    dgp = LocationScaleDGP.from_dict(cfg.dgp)
    T = args.T or cfg.simulate_T
    seed = cfg.seed if args.seed is None else args.seed
    panel = simulate(dgp, T, seed)
    out_dir = Path(args.out_dir) if args.out_dir else cfg.output_dir
    digest = cfg.digest()
    write_panel(out_dir / "synthetic_panel.csv", panel, digest)
    for i, name in enumerate(panel.names):
        rows = [[format_month(d), panel.values[t, i]] for t, d in enumerate(panel.dates)]
        write_csv(out_dir / f"synthetic_{name}.csv", ["date", name], rows, digest)
    truth = analytic_system(dgp, cfg.grid, cfg.h)
    S = projection_matrix(truth)
    write_json(out_dir / "truth.json", {
        "kind": "analytic_truth", "dgp": dgp.to_dict(), "h": cfg.h,
        "taus": list(cfg.grid), "variables": list(truth.variables),
        "index": [[v, t] for v, t in truth.index],
        "B1": truth.B1.tolist(), "Bh": truth.Bh.tolist(), "Bbar": S.Bbar.tolist(), "cond": S.cond,
    }, digest)
    write_json(out_dir / "synthetic_panel.json", {"kind": "synthetic_panel", "T": T, "seed": seed},
               digest)
    return out_dir / "synthetic_panel.csv"


def cmd_subperiods(cfg, args):
    if not cfg.breakpoints:
        raise ConfigError("no breakpoints configured")
    panel = _load_panel(cfg, args.panel)
    mats = subperiod_systems(panel, cfg.breakpoints, cfg.pipeline())
    out_dir = Path(args.out_dir) if args.out_dir else cfg.output_dir
    bounds = [format_month(panel.dates[0])] + list(cfg.breakpoints) + [format_month(panel.dates[-1])]
    for k, S in enumerate(mats):
        for level in cfg.impulse_taus:
            curve = sensitivity_curve(S, args.response, S.taus, panel.impulse, level)
            write_csv(out_dir / f"sub{k}_qs_{args.response}_tau{_tau_tag(level)}.csv", ["tau", "qs"],
                      zip(curve.grid, curve.values), cfg.digest())
        write_json(out_dir / f"sub{k}.json", {"kind": "subperiod", "start": bounds[k],
                                              "end": bounds[k + 1], "cond": S.cond}, cfg.digest())
    return out_dir


def cmd_fetch(args):
    if not args.url.startswith("https://"):
        raise ConfigError("fetch only accepts https:// URLs")
    url = args.url
    key = os.environ.get(args.api_key_env) if args.api_key_env else None
    if key:
        sep = "&" if urllib.parse.urlparse(url).query else "?"
        url = f"{url}{sep}api_key={urllib.parse.quote(key)}"
    try:
        with urllib.request.urlopen(url, timeout=60) as resp:
            body = resp.read()
    except OSError as exc:
        raise DataError(f"download failed: {exc}") from None
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_bytes(body)
    return out


def build_parser():
    parser = argparse.ArgumentParser(prog="quantsens", description=__doc__.split("\n")[1])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, help_):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", required=True)
        return p

    p = add("ingest", "parse, transform and align the configured series")
    p.add_argument("--out")
    p = add("fit", "estimate the quantile system")
    p.add_argument("--panel")
    p.add_argument("--out")
    p = add("qs", "query sensitivity curves from a fitted system")
    p.add_argument("--system")
    p.add_argument("--response", required=True)
    p.add_argument("--impulse")
    p.add_argument("--impulse-tau", type=float, action="append")
    p.add_argument("--delta", type=float)
    p.add_argument("--at-date")
    p.add_argument("--out-dir")
    p = add("bootstrap", "moving-block bootstrap band for one curve")
    p.add_argument("--panel")
    p.add_argument("--response", required=True)
    p.add_argument("--impulse")
    p.add_argument("--impulse-tau", type=float, required=True)
    p.add_argument("--replicates", type=int)
    p.add_argument("--block-length", type=int)
    p.add_argument("--coverage", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--out-dir")
    p = add("simulate", "synthetic panel and analytic truth")
    p.add_argument("--T", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--out-dir")
    p = add("subperiods", "re-estimate on sub-periods split at the configured breakpoints")
    p.add_argument("--panel")
    p.add_argument("--response", required=True)
    p.add_argument("--out-dir")
    p = sub.add_parser("fetch", help="download a CSV over HTTPS")
    p.add_argument("--url", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--api-key-env")
    return parser


COMMANDS = {
    "ingest": cmd_ingest, "fit": cmd_fit, "qs": cmd_qs, "bootstrap": cmd_bootstrap,
    "simulate": cmd_simulate, "subperiods": cmd_subperiods,
}


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        if args.command == "fetch":
            result = cmd_fetch(args)
        else:
            overrides = {}
            if args.command == "simulate" and args.seed is not None:
                overrides["seed"] = args.seed
            if args.command == "bootstrap":
                overrides["bootstrap_cli"] = {k: getattr(args, k) for k in
                                              ("replicates", "block_length", "coverage", "seed")
                                              if getattr(args, k) is not None} or None
            cfg = load_config(args.config, overrides)
            result = COMMANDS[args.command](cfg, args)
    except QSError as exc:
        payload = {"error": type(exc).__name__, "message": str(exc)}
        if hasattr(exc, "cond"):
            payload["cond"] = exc.cond
        print(json.dumps(payload), file=sys.stderr)
        return exc.exit_code
    except (ValueError, KeyError) as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return ConfigError.exit_code
    if isinstance(result, list):
        for r in result:
            print(r)
    else:
        print(result)
    return 0


if __name__ == "__main__":
    sys.exit(main())
