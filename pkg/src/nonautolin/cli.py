"""Command-line front end.

Subcommands:

  check        certify the admissibility conditions, emit the hypothesis report
  conjugate    build the conjugacies and measure inverse + equivariance residuals
  derivatives  validate the analytic Jacobians against central finite differences
  report       all of the above, plus CSV residual/jacobian tables

Exit codes: 0 pass, 1 fail, 2 configuration error.  The JSON report is
written to stdout or --out; with --format csv (or the report subcommand and
an --out directory) the residual tables are written as CSV.  NL_THREADS caps
the probe work pool; results are independent of the thread count.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys as _sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .catalog import BUILDERS, ExampleParams, make_system
from .conjugacy import ConjugacyEngine
from .derivatives import validate_jacobians
from .errors import ConfigError, NonautolinError
from .evolution import SolveOptions
from .hypotheses import certify
from .system import SystemSpec, batch_vector_norm

SCHEMA_VERSION = "1"

_SYSTEM_KEYS = {
    "lambda": "lam",
    "lam": "lam",
    "dim_half": "dim_half",
    "gamma_scale": "gamma_scale",
    "theta_ratio": "theta_ratio",
    "rotation_angle": "rotation_angle",
    "c": "c",
    "rho_scale": "rho_scale",
}


@dataclass
class RunConfig:
    system: str = "ex1"
    system_params: dict = field(default_factory=dict)
    window_halfwidth: int = 40
    n_min: int = -10
    n_max: int = 10
    probes_per_axis: int = 5
    probe_extent: float = 1.0
    series_tol: float = 1e-9
    fp_tol: float = 1e-10
    fd_step: float = 1e-6
    seed: int = 0
    steps: int = 10
    bc_probes: int = 64
    jacobian_probe_cap: int = 12
    equivariance_threshold: float = 1e-7
    jacobian_threshold: float = 1e-4
    inverse_threshold: Optional[float] = None
    force: bool = False

    def __post_init__(self):
        if self.series_tol <= 0 or self.fp_tol <= 0 or self.fd_step <= 0:
            raise ConfigError("tolerances must be positive")
        if self.probes_per_axis < 1:
            raise ConfigError("probes_per_axis must be >= 1")
        if self.window_halfwidth < 1:
            raise ConfigError("window must be >= 1")
        if self.n_min > self.n_max:
            raise ConfigError("n-min must be <= n-max")
        if self.system not in BUILDERS:
            raise ConfigError(
                f"unknown system {self.system!r}; choose from {sorted(set(BUILDERS))}"
            )

    @property
    def n_range(self) -> tuple[int, int]:
        return (self.n_min, self.n_max)

    @property
    def inverse_tol(self) -> float:
        if self.inverse_threshold is not None:
            return self.inverse_threshold
        return self.fp_tol + 10.0 * self.series_tol

    def to_json(self) -> dict:
        return asdict(self)


def build_system(cfg: RunConfig) -> SystemSpec:
    try:
        params = ExampleParams(variant=cfg.system, **cfg.system_params)
        return make_system(params)
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"bad system parameters: {exc}") from exc


def _worker_count(n_items: int) -> int:
    env = os.environ.get("NL_THREADS")
    if env is not None:
        try:
            cap = max(1, int(env))
        except ValueError:
            raise ConfigError(f"NL_THREADS must be an integer, got {env!r}")
    else:
        cap = min(4, os.cpu_count() or 1)
    return max(1, min(cap, n_items))


def _pool_map(fn, items):
    items = list(items)
    workers = _worker_count(len(items))
    if workers <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, items))


def probe_grid(dim: int, per_axis: int, extent: float, rng: np.random.Generator) -> np.ndarray:
    """Deterministic lattice plus seeded jitter; shape (n_probes, dim)."""
    if dim == 0:
        return np.zeros((1, 0))
    axis = np.linspace(-extent, extent, per_axis)
    mesh = np.meshgrid(*([axis] * dim), indexing="ij")
    lattice = np.stack([m.ravel() for m in mesh], axis=1)
    spacing = 2.0 * extent / (per_axis - 1) if per_axis > 1 else extent
    jitter = rng.uniform(-spacing / 4.0, spacing / 4.0, lattice.shape)
    return lattice + jitter


def _split_probes(sys: SystemSpec, probes: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    dx = sys.space.dim_x
    return probes[:, :dx].T.copy(), probes[:, dx:].T.copy()


# -- phases ---------------------------------------------------------------------


def phase_check(cfg: RunConfig, sys: SystemSpec) -> tuple[dict, bool]:
    report = certify(
        sys,
        n_range=cfg.n_range,
        window_halfwidth=cfg.window_halfwidth,
        probes=cfg.bc_probes,
        seed=cfg.seed,
        probe_extent=cfg.probe_extent,
    )
    return report.to_json(), report.overall_ok


def phase_conjugate(cfg: RunConfig, sys: SystemSpec) -> tuple[dict, dict, bool]:
    rng = np.random.default_rng(cfg.seed)
    grid = probe_grid(sys.space.dim_x + sys.space.dim_y, cfg.probes_per_axis,
                      cfg.probe_extent, rng)
    xi_b, eta_b = _split_probes(sys, grid)
    engine = ConjugacyEngine(
        sys,
        window_halfwidth=max(cfg.window_halfwidth * 4, 64),
        series_tol=cfg.series_tol,
        fp_tol=cfg.fp_tol,
        advanced_halfwidth=cfg.window_halfwidth,
    )
    n_values = list(range(cfg.n_min, cfg.n_max + 1))

    def _inverse_rows(n):
        try:
            kind = sys.space.norm_kind
            hvals = engine.h(n, xi_b, eta_b)
            hx, hy = xi_b + hvals, eta_b
            bx, by = engine.bar_H(n, hx, hy)
            r1 = np.maximum(
                batch_vector_norm(bx - xi_b, kind), batch_vector_norm(by - eta_b, kind)
            )
            bx2, by2 = engine.bar_H(n, xi_b, eta_b)
            hx2, hy2 = engine.H(n, bx2, by2)
            r2 = np.maximum(
                batch_vector_norm(hx2 - xi_b, kind), batch_vector_norm(hy2 - eta_b, kind)
            )
            res = np.maximum(r1, r2)
            tail = engine.series_window(n, cfg.series_tol).tail_bound
            rows = []
            for i in range(grid.shape[0]):
                rows.append(_row(n, grid[i], hvals[:, i], float(res[i]), tail))
            return rows, None
        except NonautolinError as exc:
            return [], {"n": n, "error": str(exc)}

    def _equi_rows(n):
        try:
            fwd, dual = engine.equivariance_batch(n, xi_b, eta_b, steps=cfg.steps)
            bvals = engine.bar_h(n, xi_b, eta_b)
            tail = engine.series_window(n, cfg.series_tol).tail_bound
            rows = []
            for i in range(grid.shape[0]):
                rows.append(
                    _row(n, grid[i], bvals[:, i], float(max(fwd[i], dual[i])), tail)
                )
            return rows, None
        except NonautolinError as exc:
            return [], {"n": n, "error": str(exc)}

    inv_results = _pool_map(_inverse_rows, n_values)
    # equivariance windows reach n_max + steps; reuse the same engine caches
    equi_results = _pool_map(_equi_rows, n_values)

    def _table(results, threshold):
        rows, errors = [], []
        for r, err in results:
            rows.extend(r)
            if err is not None:
                errors.append(err)
        residuals = [r["residual"] for r in rows]
        max_res = max(residuals) if residuals else None
        ok = not errors and max_res is not None and max_res <= threshold
        return {
            "rows": rows,
            "errors": errors,
            "max_residual": max_res,
            "threshold": threshold,
            "ok": bool(ok),
        }

    inverse = _table(inv_results, cfg.inverse_tol)
    equivariance = _table(equi_results, cfg.equivariance_threshold)
    return equivariance, inverse, bool(inverse["ok"] and equivariance["ok"])


def _row(n: int, probe: np.ndarray, value: np.ndarray, residual: float,
         tail: Optional[float]) -> dict:
    return {
        "n": int(n),
        "probe": [float(v) for v in probe],
        "value": [float(v) for v in np.atleast_1d(value)],
        "residual": float(residual),
        "tail_bound": None if tail is None or not math.isfinite(tail) else float(tail),
    }


def phase_derivatives(cfg: RunConfig, sys: SystemSpec) -> tuple[dict, bool]:
    rng = np.random.default_rng(cfg.seed + 1)
    grid = probe_grid(sys.space.dim_x + sys.space.dim_y, cfg.probes_per_axis,
                      cfg.probe_extent, rng)
    if grid.shape[0] > cfg.jacobian_probe_cap:
        take = rng.choice(grid.shape[0], size=cfg.jacobian_probe_cap, replace=False)
        grid = grid[np.sort(take)]
    engine = ConjugacyEngine(
        sys,
        window_halfwidth=max(cfg.window_halfwidth * 4, 64),
        series_tol=cfg.series_tol,
        fp_tol=cfg.fp_tol,
        solve=SolveOptions(fixed_point_tol=3e-13, max_iters=400),
        advanced_halfwidth=cfg.window_halfwidth,
    )
    n_values = sorted({cfg.n_min, (cfg.n_min + cfg.n_max) // 2, cfg.n_max})
    dx = sys.space.dim_x
    jobs = [(n, i) for n in n_values for i in range(grid.shape[0])]

    def _one(job):
        n, i = job
        xi, eta = grid[i, :dx], grid[i, dx:]
        try:
            reports = validate_jacobians(engine, n, xi, eta, k=n + 3, fd_step=cfg.fd_step)
            rows = []
            for kind, rep in reports.items():
                rows.append(
                    {
                        "kind": kind,
                        "n": int(n),
                        "probe": [float(v) for v in grid[i]],
                        "rel_error": rep.rel_error,
                        "fd_step": rep.fd_step,
                        "analytic_norm": float(np.linalg.norm(rep.analytic)),
                    }
                )
            return rows, None
        except NonautolinError as exc:
            return [], {"n": int(n), "probe": [float(v) for v in grid[i]], "error": str(exc)}

    results = _pool_map(_one, jobs)
    rows, errors = [], []
    for r, err in results:
        rows.extend(r)
        if err is not None:
            errors.append(err)
    rels = [r["rel_error"] for r in rows]
    max_rel = max(rels) if rels else None
    ok = not errors and max_rel is not None and max_rel <= cfg.jacobian_threshold
    return {
        "rows": rows,
        "errors": errors,
        "max_rel_error": max_rel,
        "threshold": cfg.jacobian_threshold,
        "ok": bool(ok),
    }, bool(ok)


# -- report assembly --------------------------------------------------------------


def run_command(command: str, cfg: RunConfig) -> dict:
    sys_spec = build_system(cfg)
    report: dict = {
        "schema_version": SCHEMA_VERSION,
        "config": {
            "command": command,
            "dim_x": sys_spec.space.dim_x,
            "dim_y": sys_spec.space.dim_y,
            **cfg.to_json(),
        },
        "hypothesis": None,
        "equivariance": None,
        "inverse": None,
        "jacobians": None,
        "timing": {},
        "verdict": "fail",
    }
    checks: list[bool] = []

    t0 = time.perf_counter()
    hyp_json, hyp_ok = phase_check(cfg, sys_spec)
    report["hypothesis"] = hyp_json
    report["timing"]["check"] = time.perf_counter() - t0
    checks.append(hyp_ok)

    if command in ("conjugate", "report", "derivatives") and not hyp_ok and not cfg.force:
        report["verdict"] = "fail"
        return report

    if command in ("conjugate", "report"):
        t0 = time.perf_counter()
        equi, inv, ok = phase_conjugate(cfg, sys_spec)
        report["equivariance"] = equi
        report["inverse"] = inv
        report["timing"]["conjugate"] = time.perf_counter() - t0
        checks.append(ok)

    if command in ("derivatives", "report"):
        t0 = time.perf_counter()
        jac, ok = phase_derivatives(cfg, sys_spec)
        report["jacobians"] = jac
        report["timing"]["derivatives"] = time.perf_counter() - t0
        checks.append(ok)

    report["verdict"] = "pass" if all(checks) else "fail"
    return report


# -- output writers ----------------------------------------------------------------


def _probe_header(report: dict, probe_len: int) -> list:
    dx = report["config"].get("dim_x", probe_len)
    cols = [f"xi{i}" for i in range(min(dx, probe_len))]
    cols += [f"eta{i}" for i in range(probe_len - len(cols))]
    return cols


def _write_csv_tables(report: dict, out_dir: Path) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    for section in ("equivariance", "inverse"):
        table = report.get(section)
        if not table:
            continue
        path = out_dir / f"{section}.csv"
        with path.open("w", newline="") as fh:
            writer = csv.writer(fh)
            rows = table["rows"]
            dims = (len(rows[0]["probe"]), len(rows[0]["value"])) if rows else (0, 0)
            header = (
                ["n"]
                + _probe_header(report, dims[0])
                + [f"value{i}" for i in range(dims[1])]
                + ["residual", "tail_bound"]
            )
            writer.writerow(header)
            for r in rows:
                writer.writerow(
                    [r["n"], *r["probe"], *r["value"], r["residual"], r["tail_bound"]]
                )
    table = report.get("jacobians")
    if table:
        path = out_dir / "jacobians.csv"
        with path.open("w", newline="") as fh:
            writer = csv.writer(fh)
            rows = table["rows"]
            pdim = len(rows[0]["probe"]) if rows else 0
            writer.writerow(
                ["kind", "n"] + _probe_header(report, pdim)
                + ["rel_error", "fd_step", "analytic_norm"]
            )
            for r in rows:
                writer.writerow(
                    [r["kind"], r["n"], *r["probe"], r["rel_error"], r["fd_step"],
                     r["analytic_norm"]]
                )


def write_report(report: dict, out: Optional[str], fmt: str, command: str) -> None:
    text = json.dumps(report, indent=2, sort_keys=True, allow_nan=False)
    if out is None:
        if fmt == "csv":
            raise ConfigError("--format csv requires --out <directory>")
        print(text)
        return
    out_path = Path(out)
    if command == "report":
        out_path.mkdir(parents=True, exist_ok=True)
        (out_path / "report.json").write_text(text + "\n")
        _write_csv_tables(report, out_path)
    elif fmt == "csv":
        _write_csv_tables(report, out_path)
        (out_path / "report.json").write_text(text + "\n")
    else:
        out_path.parent.mkdir(parents=True, exist_ok=True)
        out_path.write_text(text + "\n")


# -- argument parsing ---------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="nonautolin",
        description="Conjugacies for coupled nonautonomous difference systems: "
        "hypothesis certification, construction, and smoothness validation.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
        ("check", "certify the admissibility conditions"),
        ("conjugate", "build conjugacies; inverse and equivariance residuals"),
        ("derivatives", "validate analytic Jacobians against finite differences"),
        ("report", "run all phases and write JSON + CSV reports"),
    ):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--system", required=True,
                       help="built-in name (ex1|ex2|remm|end_cfg|emo) or a JSON parameter file")
        p.add_argument("--lambda", dest="lam", type=float, default=None,
                       help="decay rate of the ex1/emo operator blocks")
        p.add_argument("--gamma-scale", type=float, default=None,
                       help="coupling envelope scale in [0, 1]")
        p.add_argument("--c", type=float, default=None, help="emo constant coupling bound")
        p.add_argument("--theta-ratio", type=float, default=None,
                       help="ex2 ramp ratio bound T >= 1")
        p.add_argument("--rotation-angle", type=float, default=None,
                       help="rotation angle of the ex2/end_cfg isometry blocks")
        p.add_argument("--window", type=int, default=40,
                       help="series window halfwidth (default 40)")
        p.add_argument("--n-min", type=int, default=-10)
        p.add_argument("--n-max", type=int, default=10)
        p.add_argument("--series-tol", type=float, default=1e-9)
        p.add_argument("--fp-tol", type=float, default=1e-10)
        p.add_argument("--fd-step", type=float, default=1e-6)
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--out", default=None, help="output file (json) or directory (csv/report)")
        p.add_argument("--format", dest="fmt", choices=("json", "csv"), default="json")
        p.add_argument("--force", action="store_true",
                       help="run later phases even if hypothesis certification fails")
    return parser


def config_from_args(args: argparse.Namespace) -> RunConfig:
    system = args.system
    file_overrides: dict = {}
    if system.endswith(".json") or os.path.sep in system:
        path = Path(system)
        if not path.exists():
            raise ConfigError(f"parameter file not found: {system}")
        try:
            file_overrides = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"cannot parse parameter file {system}: {exc}") from exc
        if not isinstance(file_overrides, dict) or "system" not in file_overrides:
            raise ConfigError("parameter file must be an object with a 'system' key")
        system = file_overrides.pop("system")

    system_params: dict = {}
    for key, target in _SYSTEM_KEYS.items():
        if key in file_overrides:
            system_params[target] = file_overrides.pop(key)
    for flag, target in (("lam", "lam"), ("gamma_scale", "gamma_scale"), ("c", "c"),
                         ("theta_ratio", "theta_ratio"), ("rotation_angle", "rotation_angle")):
        v = getattr(args, flag)
        if v is not None:
            system_params[target] = v

    cfg_kwargs = dict(
        system=system,
        system_params=system_params,
        window_halfwidth=args.window,
        n_min=args.n_min,
        n_max=args.n_max,
        series_tol=args.series_tol,
        fp_tol=args.fp_tol,
        fd_step=args.fd_step,
        seed=args.seed,
        force=args.force,
    )
    for key in ("probes_per_axis", "probe_extent", "steps", "bc_probes",
                "jacobian_probe_cap", "equivariance_threshold", "jacobian_threshold",
                "inverse_threshold", "window_halfwidth", "n_min", "n_max", "series_tol",
                "fp_tol", "fd_step", "seed"):
        if key in file_overrides:
            cfg_kwargs[key] = file_overrides.pop(key)
    if file_overrides:
        raise ConfigError(f"unknown parameter-file keys: {sorted(file_overrides)}")
    try:
        return RunConfig(**cfg_kwargs)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = config_from_args(args)
        report = run_command(args.command, cfg)
        write_report(report, args.out, args.fmt, args.command)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=_sys.stderr)
        return 2
    return 0 if report["verdict"] == "pass" else 1


if __name__ == "__main__":
    raise SystemExit(main())
