"""
Command-line driver: ``blm mesh|run|sweep|fit|verify|plot``.

Configuration files hold ``key = value`` lines with ``#`` comments. Every
command writes into ``--out`` (default ``out``); sweeps use one
subdirectory per Reynolds number.
"""

from __future__ import annotations

import argparse
import logging
import math
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import plot, stats, verify
from .fem import TaylorHoodSpace
from .mesh import Geometry, generate_channel_mesh, save_mesh
from .model import Mixing, ModelParams
from .solver import FlowProblem, SolverConfig, SolverError, run, write_energy_audit

logger = logging.getLogger("blm")

COMMANDS = ("mesh", "run", "sweep", "fit", "verify", "plot")


class ConfigError(ValueError):
    """Invalid configuration; the message names the key and line."""

    def __init__(self, key: str, line: int | None, message: str):
        where = f"line {line}" if line else "config"
        super().__init__(f"{where}: {key}: {message}")
        self.key = key
        self.line = line


@dataclass(frozen=True)
class RunConfig:
    """Validated run configuration with defaults applied.

    When only ``nu`` is given the nominal Reynolds number is ``1 / nu``
    (unit reference velocity and channel height).
    """

    Re: float | None = None
    nu: float | None = None
    beta: float = 10.0
    mixing: str = "l1"
    dt: float = 0.01
    T: float = 50.0
    burn_in: float = 0.2
    mesh_h: float = 0.15
    refine: float = 1.5
    sweep: tuple = ()
    picard_tol: float = 1e-9
    picard_max: int = 50
    geometry: Geometry = field(default_factory=Geometry)

    @property
    def viscosity(self) -> float:
        return self.nu if self.nu is not None else 1.0 / self.Re

    @property
    def reynolds(self) -> float:
        return self.Re if self.Re is not None else 1.0 / self.nu

    def model_params(self, Re: float | None = None) -> ModelParams:
        mixing = Mixing.parse(self.mixing)
        if Re is not None:
            return ModelParams.from_reynolds(Re, self.beta, mixing)
        return ModelParams(self.viscosity, self.beta, mixing, self.reynolds)

    def solver_config(self) -> SolverConfig:
        return SolverConfig(dt=self.dt, t_end=self.T, picard_tol=self.picard_tol,
                            picard_max=self.picard_max)

    def mesh(self):
        return generate_channel_mesh(self.geometry, self.mesh_h, self.refine)


def _positive(v):
    return v > 0


def _nonneg(v):
    return v >= 0


# key -> (parser, check, message)
_KEYS = {
    "Re": (float, _positive, "must be > 0"),
    "nu": (float, _positive, "must be > 0"),
    "beta": (float, _nonneg, "must be >= 0"),
    "mixing": (str, None, None),
    "dt": (float, _positive, "must be > 0"),
    "T": (float, _positive, "must be > 0"),
    "burn_in": (float, lambda v: 0 <= v < 1, "must lie in [0, 1)"),
    "mesh_h": (float, _positive, "must be > 0"),
    "refine": (float, lambda v: v >= 1, "must be >= 1"),
    "sweep": (None, None, None),
    "picard_tol": (float, _positive, "must be > 0"),
    "picard_max": (int, _positive, "must be > 0"),
}


def _parse_value(key, raw, lineno):
    conv, check, msg = _KEYS[key]
    if key == "sweep":
        items = [s.strip() for s in raw.split(",")]
        try:
            values = tuple(float(s) for s in items)
        except ValueError:
            raise ConfigError(key, lineno, f"expected comma-separated numbers, got {raw!r}")
        if not values:
            raise ConfigError(key, lineno, "empty list")
        if any(not (math.isfinite(v) and v > 0) for v in values):
            raise ConfigError(key, lineno, "Reynolds numbers must be finite and > 0")
        if len(set(values)) != len(values):
            dup = sorted({v for v in values if values.count(v) > 1})
            raise ConfigError(key, lineno, f"duplicate Reynolds numbers {dup}")
        return values
    if key == "mixing":
        text = raw.strip().strip('"').strip("'")
        try:
            Mixing.parse(text)
        except ValueError as exc:
            raise ConfigError(key, lineno, str(exc))
        return text
    try:
        value = conv(raw)
    except ValueError:
        raise ConfigError(key, lineno, f"expected {conv.__name__}, got {raw!r}")
    if conv is float and not math.isfinite(value):
        raise ConfigError(key, lineno, "must be finite")
    if check is not None and not check(value):
        raise ConfigError(key, lineno, f"{msg}, got {raw}")
    return value


def parse_config(text: str, require_flow: bool = True) -> RunConfig:
    """Parse ``key = value`` text into a :class:`RunConfig`.

    With ``require_flow`` exactly one of ``Re`` and ``nu`` must be present,
    unless a ``sweep`` list supplies the Reynolds numbers.
    """
    values: dict = {}
    lines: dict = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ConfigError(body.split()[0], lineno, "expected 'key = value'")
        key, raw = (s.strip() for s in body.split("=", 1))
        if key not in _KEYS:
            raise ConfigError(key, lineno, "unknown key")
        if key in values:
            raise ConfigError(key, lineno, f"already set on line {lines[key]}")
        if not raw:
            raise ConfigError(key, lineno, "missing value")
        values[key] = _parse_value(key, raw, lineno)
        lines[key] = lineno
    if "Re" in values and "nu" in values:
        raise ConfigError("nu", lines["nu"], "give only one of Re and nu")
    if require_flow and "Re" not in values and "nu" not in values and "sweep" not in values:
        raise ConfigError("Re", None, "missing (give Re, nu or sweep)")
    cfg = RunConfig(**values)
    try:
        cfg.solver_config()
    except ValueError as exc:
        raise ConfigError("dt", lines.get("dt"), str(exc))
    return cfg


# -- field snapshots ------------------------------------------------------

def save_field(coefficients, path) -> None:
    """Write ``field2d 1``, the dof count and one coefficient per line."""
    c = np.asarray(coefficients, dtype=float).ravel()
    with open(path, "w") as fh:
        fh.write(f"field2d 1\n{len(c)}\n")
        fh.writelines(format(float(v), ".17g") + "\n" for v in c)


def load_field(path) -> np.ndarray:
    with open(path) as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    if not lines or lines[0] != "field2d 1":
        raise ValueError(f"{path}: line 1: expected header 'field2d 1'")
    try:
        n = int(lines[1])
    except (IndexError, ValueError):
        raise ValueError(f"{path}: line 2: expected dof count")
    if len(lines) - 2 != n:
        raise ValueError(f"{path}: expected {n} coefficients, found {len(lines) - 2}")
    return np.array([float(v) for v in lines[2:]])


# -- commands -------------------------------------------------------------

def _run_one(cfg: RunConfig, Re: float | None, out: Path) -> dict:
    """Run one configuration and write its artifacts into ``out``."""
    out.mkdir(parents=True, exist_ok=True)
    with threadpool_limits(limits=1):
        params = cfg.model_params(Re)
        problem = FlowProblem(cfg.mesh(), params)
        t0 = time.perf_counter()
        result = run(problem, cfg.solver_config())
        elapsed = time.perf_counter() - t0
    result.series.to_csv(out / "stats.csv")
    write_energy_audit(result.audit, out / "energy_audit.csv")
    save_field(result.state.u_now, out / "velocity.field2d")
    save_field(result.state.p_now, out / "pressure.field2d")
    avg = stats.time_average(result.series, cfg.burn_in)
    scales = stats.compute_scales(problem.space, None, avg.usq, params.nu)
    ell_max, _ = params.ell_bounds(problem.space)
    bound = stats.dissipation_bound(scales.U, scales.L, scales.Re, ell_max, avg.eps)
    ke = np.asarray(result.series.ke)
    return {"Re": params.Re, "eps_avg": avg.eps, "U": scales.U, "bound": bound.value,
            "ratio": bound.ratio, "ke_ratio": float(ke.max() / ke[0]),
            "max_picard": result.max_picard, "seconds": elapsed}


def _sweep_worker(args):
    cfg, Re, out = args
    return _run_one(cfg, Re, out)


def cmd_mesh(cfg: RunConfig, out: Path, args) -> int:
    out.mkdir(parents=True, exist_ok=True)
    mesh = cfg.mesh()
    with open(out / "mesh.txt", "w") as fh:
        save_mesh(mesh, fh)
    print(f"mesh: {mesh.n_vertices} vertices, {mesh.n_triangles} triangles, "
          f"{2 * mesh.n_p2_nodes} velocity dofs -> {out / 'mesh.txt'}")
    return 0


def cmd_run(cfg: RunConfig, out: Path, args) -> int:
    if cfg.Re is None and cfg.nu is None:
        raise ConfigError("Re", None, "missing for run")
    row = _run_one(cfg, None, out)
    print(f"Re={row['Re']:g} <eps>={row['eps_avg']:.6g} U={row['U']:.6g} "
          f"bound ratio={row['ratio']:.6g} max KE/KE0={row['ke_ratio']:.4g} "
          f"({row['seconds']:.1f} s)")
    return 0


def run_sweep(cfg: RunConfig, out: Path, threads: int = 1) -> list[dict]:
    """Run every Reynolds number of ``cfg.sweep``; returns rows in input order."""
    if not cfg.sweep:
        raise ConfigError("sweep", None, "missing or empty for sweep mode")
    jobs = [(cfg, Re, out / f"Re_{Re:g}") for Re in cfg.sweep]
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(_sweep_worker, jobs))
    else:
        rows = [_sweep_worker(j) for j in jobs]
    out.mkdir(parents=True, exist_ok=True)
    stats.write_sweep(rows, out / "sweep.csv")
    return rows


def cmd_sweep(cfg: RunConfig, out: Path, args) -> int:
    rows = run_sweep(cfg, out, args.threads)
    for r in rows:
        print(f"Re={r['Re']:g} <eps>={r['eps_avg']:.6g} ratio={r['ratio']:.6g} "
              f"max KE/KE0={r['ke_ratio']:.4g}")
    print(f"wrote {out / 'sweep.csv'}")
    return 0


def cmd_fit(cfg: RunConfig, out: Path, args) -> int:
    path = out / "sweep.csv"
    if not path.exists():
        raise FileNotFoundError(f"{path} not found; run 'blm sweep' first")
    rows = stats.read_sweep(path)
    res = stats.fit_dissipation([(r["Re"], r["eps_avg"]) for r in rows])
    (out / "fit.txt").write_text(str(res) + "\n")
    print(res)
    return 0


def cmd_verify(cfg: RunConfig, out: Path, args) -> int:
    space = TaylorHoodSpace(verify.closed_box(8))
    params = ModelParams.from_reynolds(100.0, 10.0, "l1")
    reports = [verify.check_monotonicity(space, params.mixing_length_at_qp(space),
                                         seed=args.seed)]
    res, _ = verify.energy_audit_run()
    worst = verify.energy_audit(res.audit)
    reports.append(verify.Report("energy balance", worst <= 1e-7,
                                 [f"max relative residual {worst:.3e} (<= 1e-7)"]))
    reports.append(verify.stokes_convergence_study(kind="structured"))
    reports.append(verify.stokes_convergence_study(kind="graded"))
    reports.append(verify.stokes_convergence_study(levels=2, solution="quadratic"))
    reports.append(verify.time_order_study())
    out.mkdir(parents=True, exist_ok=True)
    text = "\n".join(str(r) for r in reports) + "\n"
    (out / "verify.txt").write_text(text)
    print(text, end="")
    return 0 if all(r.ok for r in reports) else 1


def cmd_plot(cfg: RunConfig, out: Path, args) -> int:
    histories = {}
    candidates = [out / "stats.csv"] + sorted(out.glob("*/stats.csv"))
    for p in candidates:
        if p.exists():
            s = stats.DissipationSeries.from_csv(p)
            label = p.parent.name if p.parent != out else "run"
            histories[label] = (np.asarray(s.t), s.eps)
    sweep, fit = None, None
    if (out / "sweep.csv").exists():
        rows = stats.read_sweep(out / "sweep.csv")
        re = [r["Re"] for r in rows]
        eps = [r["eps_avg"] for r in rows]
        sweep = {"<eps>": (re, eps)}
        if len(set(re)) >= 2:
            fit = stats.fit_dissipation(list(zip(re, eps)))
    if not histories and not sweep:
        raise FileNotFoundError(f"no stats.csv or sweep.csv under {out}")
    svg = plot.dissipation_figure(histories, sweep, fit)
    (out / "dissipation.svg").write_text(svg)
    print(f"wrote {out / 'dissipation.svg'}")
    return 0


_HANDLERS = {"mesh": cmd_mesh, "run": cmd_run, "sweep": cmd_sweep, "fit": cmd_fit,
             "verify": cmd_verify, "plot": cmd_plot}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="blm", description=__doc__.strip().splitlines()[0])
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("--config", type=Path, help="key = value configuration file")
    ap.add_argument("--out", type=Path, default=Path("out"), help="output directory")
    ap.add_argument("--threads", type=int, default=1, help="sweep worker processes")
    ap.add_argument("--seed", type=int, default=0, help="seed for randomized checks")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.threads < 1:
        print("blm: error: --threads must be >= 1", file=sys.stderr)
        return 2
    try:
        text = args.config.read_text(encoding="utf-8") if args.config else ""
        cfg = parse_config(text, require_flow=args.command in ("run", "sweep"))
        return _HANDLERS[args.command](cfg, args.out, args)
    except (ConfigError, OSError, ValueError, SolverError) as exc:
        name = f"{args.config}: " if args.config and isinstance(exc, ConfigError) else ""
        print(f"blm: error: {name}{exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
