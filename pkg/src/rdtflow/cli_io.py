"""Command-line driver, run configuration, snapshots and diagnostics files.

Subcommands: ``run``, ``verify``, ``convergence`` and ``list-scenarios``.
Configuration files are JSON objects; command-line flags override them::

    {"scenario": "s3_band", "params": {"a": 0.2}, "grid": [16, 16, 32],
     "dt": 2e-4, "t_end": 0.02, "freeze_mode": "lagged",
     "zeta_variant": "derived", "stride": 10, "out": "runs/s3"}

Exit codes: 0 on success, the ``exit_code`` of the raised error otherwise
(10-19 solver, 20-29 geometry, 30-39 configuration), 1 for a failed
verification.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import sys
import time
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, RdtFlowError, SolverError
from .grid import FACES
from .parabolic_bundle import FREEZE_MODES
from .ricci_deturck import ZETA_VARIANTS
from .scenarios import REGISTRY, Scenario, build, list_scenarios
from .tensor_core import sym_index_pairs, sym_unpack

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
CSV_COLUMNS = ("t", "picard_iters", "lin_residual", "stability_ratio", "bc_dirichlet_res",
               "bc_neumann_res", "p_tangency_res", "spd_margin", "min_II_eig_lower",
               "min_II_eig_upper", "mean_curv_err", "ricci_residual")
RDT_SCENARIOS = ("rdt_flat", "s3_band", "warped_bowl")
CONFIG_KEYS = {"scenario", "params", "grid", "dt", "t_end", "freeze_mode", "zeta_variant",
               "stride", "out", "transport", "levels", "refine", "metadata"}


# ----------------------------------------------------------------- config

@dataclass
class RunConfig:
    scenario: str
    params: dict = field(default_factory=dict)
    grid: tuple | None = None
    dt: float | None = None
    t_end: float | None = None
    freeze_mode: str = "lagged"
    zeta_variant: str = "derived"
    stride: int = 1
    out: str = "out"
    transport: bool = True
    levels: int = 3
    refine: str = "space"

    def validate(self):
        """Raises ConfigError (or UnknownScenario) before anything is allocated."""
        if self.scenario not in REGISTRY:
            build(self.scenario)  # raises UnknownScenario
        if not isinstance(self.params, dict):
            raise ConfigError("params must be an object")
        if self.grid is not None:
            if not all(isinstance(s, int) and s >= 4 for s in self.grid):
                raise ConfigError(f"grid sizes must be integers >= 4, got {self.grid}")
        for name in ("dt", "t_end"):
            v = getattr(self, name)
            if v is not None and not (isinstance(v, (int, float)) and math.isfinite(v) and v > 0):
                raise ConfigError(f"{name} must be a positive number, got {v!r}")
        if self.freeze_mode not in FREEZE_MODES:
            raise ConfigError(f"freeze_mode must be one of {FREEZE_MODES}")
        if self.zeta_variant not in ZETA_VARIANTS:
            raise ConfigError(f"zeta_variant must be one of {ZETA_VARIANTS}")
        if not (isinstance(self.stride, int) and self.stride >= 1):
            raise ConfigError("stride must be a positive integer")
        if not isinstance(self.levels, int):
            raise ConfigError("levels must be an integer")
        if self.refine not in ("space", "time"):
            raise ConfigError("refine must be 'space' or 'time'")
        return self

    def build_scenario(self, grid=None) -> Scenario:
        params = dict(self.params)
        sizes = grid if grid is not None else self.grid
        if sizes is not None:
            params["sizes"] = tuple(sizes)
        if self.scenario in RDT_SCENARIOS:
            params.setdefault("variant", self.zeta_variant)
        try:
            return build(self.scenario, params)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid scenario parameters: {exc}") from exc


def parse_grid(text, n_hint=None):
    """``"64"`` (every axis) or ``"16x16x32"``."""
    if text is None:
        return None
    if isinstance(text, (list, tuple)):
        return tuple(text)
    try:
        parts = [int(p) for p in str(text).lower().split("x")]
    except ValueError:
        raise ConfigError(f"cannot parse grid {text!r}") from None
    if len(parts) == 1 and n_hint:
        parts = parts * n_hint
    return tuple(parts)


def load_config(args) -> RunConfig:
    data = {}
    if getattr(args, "config", None):
        try:
            with open(args.config) as fh:
                data = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
        unknown = set(data) - CONFIG_KEYS
        if unknown:
            raise ConfigError(f"unknown config keys {sorted(unknown)}")
    scenario = getattr(args, "scenario", None) or data.get("scenario")
    if not scenario:
        raise ConfigError("no scenario given")
    if not isinstance(scenario, str):
        raise ConfigError("scenario must be a string")
    n_hint = _scenario_dim(scenario)
    overrides = dict(
        grid=parse_grid(args.grid, n_hint) if getattr(args, "grid", None) else None,
        dt=getattr(args, "dt", None), t_end=getattr(args, "t_end", None),
        freeze_mode=getattr(args, "freeze_mode", None),
        zeta_variant=getattr(args, "zeta_variant", None),
        stride=getattr(args, "stride", None), out=getattr(args, "out", None),
        levels=getattr(args, "levels", None), refine=getattr(args, "refine", None))
    merged = {k: v for k, v in data.items() if k not in ("scenario", "metadata")}
    merged.update({k: v for k, v in overrides.items() if v is not None})
    if "grid" in merged and merged["grid"] is not None:
        merged["grid"] = parse_grid(merged["grid"], n_hint)
    try:
        cfg = RunConfig(scenario=scenario, **merged)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc
    return cfg.validate()


def _scenario_dim(name):
    return {"heat_dirichlet": 1, "heat_neumann_manufactured": 2, "coupled_mixed_bc": 2,
            "rdt_flat": 3, "s3_band": 3, "warped_bowl": 3}.get(name)


# ---------------------------------------------------------- serialization

def _fmt(x) -> str:
    x = float(x)
    if math.isnan(x):
        return "NaN"
    if math.isinf(x):
        return "Infinity" if x > 0 else "-Infinity"
    if x == 0.0 and math.copysign(1.0, x) < 0:
        return "-0.0"
    return "%.17g" % x


def _nested(arr) -> str:
    if arr.ndim == 0:
        return _fmt(arr)
    return "[" + ",".join(_nested(a) for a in arr) + "]"


def field_names(sc: Scenario) -> list:
    if sc.is_rdt:
        return [f"g_{i + 1}{j + 1}" for i, j in sym_index_pairs(sc.grid.n)]
    return [f"u{c}" for c in range(sc.spec.split.d)]


def write_snapshot(path, data: np.ndarray, header: dict):
    """JSON snapshot; floats are written with 17 significant digits."""
    head = json.dumps(header, sort_keys=True)
    text = '{"header":' + head + ',"data":' + _nested(np.asarray(data, dtype=float)) + "}\n"
    with open(path, "w") as fh:
        fh.write(text)


def read_snapshot(path):
    with open(path) as fh:
        doc = json.load(fh)
    return doc["header"], np.array(doc["data"], dtype=float)


def snapshot_header(sc: Scenario, t: float, step: int) -> dict:
    return {"schema_version": SCHEMA_VERSION, "scenario": sc.name,
            "grid": {"sizes": list(sc.grid.sizes), "lengths": list(sc.grid.lengths)},
            "time": float(t), "step": int(step), "field_names": field_names(sc)}


def write_diagnostics(path, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for row in rows:
            w.writerow([_fmt(row.get(c, float("nan"))) if c != "picard_iters"
                        else str(int(row.get(c, 0))) for c in CSV_COLUMNS])


# ------------------------------------------------------------- pipeline

def transport_diagnostics(sc: Scenario, trace) -> dict:
    """Pull the RDT trace back and evaluate the Ricci flow monitors."""
    from .deturck_transport import (convexity_monitor, integrate_diffeo, mean_curvature_check,
                                    pullback_trace, ricci_flow_residual)
    grid, n = sc.grid, sc.grid.n
    gbar = [sym_unpack(u, n) for u in trace.fields]
    diffeo = integrate_diffeo(trace.extras["P_vector"], trace.times, grid)
    g = pullback_trace(gbar, diffeo)
    bg = trace.extras["background"]
    out = {"diffeo": diffeo, "pullback": g}
    out["ricci_residual"] = (ricci_flow_residual(g, trace.times, grid) if len(g) >= 3
                             else np.full(len(g), np.nan))
    cm = convexity_monitor(g, grid)
    out["min_II_eig_lower"], out["min_II_eig_upper"] = cm["lower"], cm["upper"]
    if sc.mode == "mean_curvature":
        out["mean_curv_err"] = mean_curvature_check(g, trace.times, grid, sc.mu, bg.H_mean)
    return out


def diagnostics_rows(sc: Scenario, trace, transport: dict | None):
    rows = []
    for k, d in enumerate(trace.diagnostics):
        row = {c: d.get(c, float("nan")) for c in CSV_COLUMNS}
        row["picard_iters"] = d.get("picard_iters", 0)
        if transport is not None:
            for c in ("ricci_residual", "min_II_eig_lower", "min_II_eig_upper", "mean_curv_err"):
                if c in transport:
                    row[c] = transport[c][k]
        rows.append(row)
    return rows


def run_pipeline(cfg: RunConfig, sc: Scenario | None = None):
    sc = sc or cfg.build_scenario()
    config = sc.config(cfg.dt, cfg.t_end, freeze_mode=cfg.freeze_mode)
    trace = sc.solve(config)
    transport = transport_diagnostics(sc, trace) if (sc.is_rdt and cfg.transport) else None
    return sc, trace, transport


def _write_outputs(cfg, sc, trace, transport):
    os.makedirs(cfg.out, exist_ok=True)
    for k, (t, u) in enumerate(zip(trace.times, trace.fields)):
        if k % cfg.stride == 0 or k == len(trace.times) - 1:
            write_snapshot(os.path.join(cfg.out, f"snapshot_{k:06d}.json"), u,
                           snapshot_header(sc, t, k))
    write_diagnostics(os.path.join(cfg.out, "diagnostics.csv"),
                      diagnostics_rows(sc, trace, transport))


def cmd_run(cfg: RunConfig) -> int:
    sc = cfg.build_scenario()
    try:
        sc, trace, transport = run_pipeline(cfg, sc)
    except SolverError as exc:
        if exc.trace is not None:
            _write_outputs(cfg, sc, exc.trace, None)
        raise
    _write_outputs(cfg, sc, trace, transport)
    print(f"{sc.name}: {trace.accepted_steps} steps to t={trace.times[-1]:.6g}; output in {cfg.out}")
    return 0


# --------------------------------------------------------------- verify

def _criterion(label, ok, detail):
    print(f"{label} {'PASS' if ok else 'FAIL'}: {detail}")
    return bool(ok)


def verify_scenario(cfg: RunConfig) -> list:
    """Run a scenario against its oracle; returns ``[(label, passed, detail)]``."""
    sc = cfg.build_scenario()
    t0 = time.perf_counter()
    sc, trace, transport = run_pipeline(cfg, sc)
    elapsed = time.perf_counter() - t0
    h = sc.grid.h
    results = []
    dres = max(d["bc_dirichlet_res"] for d in trace.diagnostics[1:])
    if sc.name == "heat_dirichlet":
        err = float(np.max(np.abs(trace.fields[-1] - sc.reference_field(trace.times[-1]))))
        results.append(("A1", err <= 2e-3 and elapsed < 5.0,
                        f"sup error {err:.3e} (tol 2e-3), {elapsed:.2f}s"))
    elif sc.name == "heat_neumann_manufactured":
        err = max(float(np.max(np.abs(u - sc.reference_field(t))))
                  for u, t in zip(trace.fields, trace.times))
        comp = max(sc.compat_residuals)
        results.append(("A2", err <= 5e-3 and comp <= 1e-10 and elapsed < 10.0,
                        f"sup error {err:.3e} (tol 5e-3), compatibility {comp:.1e}, {elapsed:.2f}s"))
    elif sc.name == "rdt_flat":
        ref = sc.reference_field(0.0)
        err = max(float(np.max(np.abs(u - ref))) for u in trace.fields)
        pmax = max(float(np.max(np.abs(P))) for P in trace.extras["P_vector"])
        results.append(("A3", err <= 1e-8 and pmax <= 1e-10,
                        f"sup |g - ghat| {err:.3e}, sup |P| {pmax:.3e}"))
    elif sc.name == "s3_band" and sc.reference is not None:
        scale = float(np.max(np.abs(sc.reference_field(0.0))))
        err = max(float(np.max(np.abs(u - sc.reference_field(t))))
                  for u, t in zip(trace.fields, trace.times)) / scale
        rr = float(np.nanmax(transport["ricci_residual"])) if transport else float("nan")
        results.append(("A4", err <= 5e-3 and rr <= 0.05 and elapsed < 300,
                        f"relative error {err:.3e} (tol 5e-3), Ricci residual {rr:.3e} (tol 0.05), "
                        f"{elapsed:.1f}s"))
    elif sc.name == "s3_band":
        mce = float(np.max(transport["mean_curv_err"])) if transport else float("nan")
        tol = max(5 * h**2, 10 * 1e-10)
        results.append(("A5", mce <= tol, f"mean curvature error {mce:.3e} (tol {tol:.3e})"))
    elif sc.name == "warped_bowl":
        from .deturck_transport import boundary_pullback_check
        cmin = min(float(np.min(transport["min_II_eig_lower"])),
                   float(np.min(transport["min_II_eig_upper"])))
        det = min(transport["diffeo"].min_det)
        bp = float(np.max(boundary_pullback_check(transport["pullback"], transport["diffeo"],
                                                  trace.extras["background"])))
        results.append(("A6", cmin >= -5 * h**2 and det > 0,
                        f"min principal curvature {cmin:.4f}, min det {det:.6f}, "
                        f"II pullback residual {bp:.3e}"))
    results.append(("A8", dres == 0.0, f"Dirichlet block residual {dres:.1e}"))
    return results


def cmd_verify(cfg: RunConfig) -> int:
    results = verify_scenario(cfg)
    ok = all(_criterion(label, passed, detail) for label, passed, detail in results)
    return 0 if ok else 1


# ----------------------------------------------------------- convergence

CONVERGENCE_DEFAULTS = {
    # base grid, refined axes, dt, t_end
    "heat_dirichlet": dict(base=(33,), axes=(0,), dt=1e-4, t_end=0.01),
    "heat_neumann_manufactured": dict(base=(16, 17), axes=(0, 1), dt=2e-4, t_end=0.01),
    "coupled_mixed_bc": dict(base=(16, 9), axes=(0, 1), dt=1e-3, t_end=0.02),
    # tangentially homogeneous geometry: only the transverse axis carries error
    "s3_band": dict(base=(8, 8, 9), axes=(2,), dt=5e-4, t_end=0.01),
    "warped_bowl": dict(base=(8, 8, 9), axes=(2,), dt=5e-4, t_end=0.01),
    "rdt_flat": dict(base=(8, 8, 9), axes=(2,), dt=5e-4, t_end=0.005),
}


def nested_sizes(base, axes, level, grid_periodic):
    sizes = list(base)
    for a in axes:
        sizes[a] = base[a] * 2**level if grid_periodic[a] else (base[a] - 1) * 2**level + 1
    return tuple(sizes)


def restrict(u, factor_axes, n):
    """Fine-grid field sampled at the nodes of the next coarser nested grid."""
    idx = tuple(slice(None, None, 2) if a in factor_axes else slice(None) for a in range(n))
    return u[idx]


def fit_order(hs, errs) -> float:
    hs, errs = np.asarray(hs, float), np.asarray(errs, float)
    good = errs > 0
    if good.sum() < 2:
        return float("nan")
    return float(np.polyfit(np.log(hs[good]), np.log(errs[good]), 1)[0])


def convergence_study(cfg: RunConfig, levels: int | None = None, refine: str | None = None,
                      quantity: str = "solution") -> dict:
    """Self-convergence study over nested refinements.

    ``refine="space"`` halves the grid step on the refined axes at fixed
    ``dt``; ``refine="time"`` halves ``dt`` on a fixed grid. The error of
    level ``k`` is the sup distance to level ``k+1`` at the final time on
    the common nodes; ``quantity="ricci_residual"`` instead reports the
    pullback Ricci-flow residual of each level (RDT scenarios).

    Raises:
        ConfigError: with fewer than two levels.
    """
    levels = levels if levels is not None else cfg.levels
    refine = refine or cfg.refine
    if levels < 2:
        raise ConfigError("convergence needs at least 2 levels")
    d = CONVERGENCE_DEFAULTS.get(cfg.scenario)
    if d is None:
        raise ConfigError(f"no convergence setup for {cfg.scenario}")
    base = tuple(cfg.grid) if cfg.grid else d["base"]
    dt0 = cfg.dt or d["dt"]
    t_end = cfg.t_end or d["t_end"]
    periodic = tuple(a != len(base) - 1 for a in range(len(base)))
    runs = []
    for k in range(levels):
        if refine == "space":
            sizes, dt = nested_sizes(base, d["axes"], k, periodic), dt0
        else:
            sizes, dt = base, dt0 / 2**k
        sc = cfg.build_scenario(sizes)
        sub = RunConfig(**{**cfg.__dict__, "dt": dt, "t_end": t_end,
                           "transport": quantity == "ricci_residual"})
        sc, trace, transport = run_pipeline(sub, sc)
        resid = float(np.nanmax(transport["ricci_residual"])) if transport else float("nan")
        runs.append(dict(level=k, sizes=sizes, dt=dt, h=max(sc.grid.spacings[a] for a in d["axes"]) if refine == "space" else dt,
                         field=trace.fields[-1], ricci_residual=resid))
    rows = []
    if quantity == "ricci_residual":
        for r in runs:
            rows.append(dict(level=r["level"], sizes=r["sizes"], dt=r["dt"], step=r["h"],
                             error=r["ricci_residual"]))
    else:
        n = len(base)
        for k in range(levels - 1):
            fine = runs[k + 1]["field"]
            if refine == "space":
                fine = restrict(fine, d["axes"], n)
            err = float(np.max(np.abs(fine - runs[k]["field"])))
            rows.append(dict(level=k, sizes=runs[k]["sizes"], dt=runs[k]["dt"],
                             step=runs[k]["h"], error=err))
    for i in range(1, len(rows)):
        e0, e1 = rows[i - 1]["error"], rows[i]["error"]
        rows[i]["order"] = (math.log(e0 / e1) / math.log(rows[i - 1]["step"] / rows[i]["step"])
                            if e0 > 0 and e1 > 0 else float("nan"))
    order = fit_order([r["step"] for r in rows], [r["error"] for r in rows])
    return dict(rows=rows, order=order, refine=refine, quantity=quantity)


def write_convergence(path, study):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["level", "sizes", "dt", "step", "error", "order"])
        for r in study["rows"]:
            w.writerow([r["level"], "x".join(map(str, r["sizes"])), _fmt(r["dt"]), _fmt(r["step"]),
                        _fmt(r["error"]), _fmt(r.get("order", float("nan")))])
        w.writerow(["fit", "", "", "", "", _fmt(study["order"])])


def cmd_convergence(cfg: RunConfig, quantity: str = "solution") -> int:
    study = convergence_study(cfg, quantity=quantity)
    os.makedirs(cfg.out, exist_ok=True)
    path = os.path.join(cfg.out, f"convergence_{cfg.refine}.csv")
    write_convergence(path, study)
    for r in study["rows"]:
        print(f"level {r['level']} {'x'.join(map(str, r['sizes']))} dt={r['dt']:.3g} "
              f"error={r['error']:.4e} order={r.get('order', float('nan')):.3f}")
    print(f"fitted {cfg.refine} order: {study['order']:.3f}")
    return 0


# ------------------------------------------------------------------- main

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rdtflow",
                                     description="Ricci-DeTurck flow with boundary conditions")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON run configuration")
        p.add_argument("--scenario", help="scenario name (overrides the config)")
        p.add_argument("--out", help="output directory")
        p.add_argument("--grid", help="node counts, e.g. 64 or 16x16x32")
        p.add_argument("--dt", type=float)
        p.add_argument("--t-end", dest="t_end", type=float)
        p.add_argument("--stride", type=int, help="snapshot every K steps")
        p.add_argument("--freeze-mode", dest="freeze_mode", choices=FREEZE_MODES)
        p.add_argument("--zeta-variant", dest="zeta_variant", choices=ZETA_VARIANTS)

    common(sub.add_parser("run", help="evolve a scenario and write outputs"))
    common(sub.add_parser("verify", help="compare a scenario with its oracle"))
    conv = sub.add_parser("convergence", help="refinement study")
    common(conv)
    conv.add_argument("--levels", type=int)
    conv.add_argument("--refine", choices=("space", "time"))
    conv.add_argument("--quantity", choices=("solution", "ricci_residual"), default="solution")
    sub.add_parser("list-scenarios", help="print registered scenarios")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return ConfigError.exit_code if exc.code else 0
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "list-scenarios":
            for name in list_scenarios():
                print(name)
            return 0
        cfg = load_config(args)
        if args.command == "run":
            return cmd_run(cfg)
        if args.command == "verify":
            return cmd_verify(cfg)
        return cmd_convergence(cfg, quantity=args.quantity)
    except RdtFlowError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
