"""
Dissipation statistics: instantaneous rates, time averages, flow scales,
the ``a + b / Re`` scaling fit and the dissipation upper bound.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import trapezoid

from . import fem

STATS_COLUMNS = ("t", "eps0", "epsM", "eps", "ke", "mke", "power_in")
SWEEP_COLUMNS = ("Re", "eps_avg", "U", "bound", "ratio")


def _fmt(x) -> str:
    return format(float(x), ".17g")


@dataclass
class DissipationSeries:
    """Per-sample dissipation rates and energies of one run.

    ``usq`` holds ``||u||^2 / |Omega|`` for the velocity scale; it is not part
    of ``stats.csv``.
    """

    t: list = field(default_factory=list)
    eps0: list = field(default_factory=list)
    epsM: list = field(default_factory=list)
    ke: list = field(default_factory=list)
    mke: list = field(default_factory=list)
    power_in: list = field(default_factory=list)
    usq: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def append(self, t, eps0, epsM, ke, mke, power_in=0.0, usq=float("nan")):
        if self.t and not t > self.t[-1]:
            raise ValueError(f"sample time {t} does not increase past {self.t[-1]}")
        if eps0 < 0 or epsM < 0:
            raise ValueError("dissipation rates must be nonnegative")
        self.t.append(float(t))
        self.eps0.append(float(eps0))
        self.epsM.append(float(epsM))
        self.ke.append(float(ke))
        self.mke.append(float(mke))
        self.power_in.append(float(power_in))
        self.usq.append(float(usq))

    def __len__(self):
        return len(self.t)

    @property
    def eps(self) -> np.ndarray:
        return np.asarray(self.eps0) + np.asarray(self.epsM)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(STATS_COLUMNS)
            eps = self.eps
            for i in range(len(self)):
                w.writerow([_fmt(v) for v in (self.t[i], self.eps0[i], self.epsM[i], eps[i],
                                              self.ke[i], self.mke[i], self.power_in[i])])

    @classmethod
    def from_csv(cls, path) -> "DissipationSeries":
        s = cls()
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            if tuple(reader.fieldnames or ()) != STATS_COLUMNS:
                raise ValueError(f"{path}: expected columns {','.join(STATS_COLUMNS)}")
            for row in reader:
                s.append(float(row["t"]), float(row["eps0"]), float(row["epsM"]),
                         float(row["ke"]), float(row["mke"]), float(row["power_in"]))
        return s


def dissipation_rates(space: fem.TaylorHoodSpace, u: np.ndarray, nu: float,
                      ell: np.ndarray | float) -> tuple[float, float]:
    """Viscous and model dissipation per unit area.

    ``eps0 = nu ||grad u||^2 / |Omega|`` and
    ``epsM = int l^2 |curl u|^3 / |Omega|``, with ``ell`` the mixing length at
    the quadrature points (or a constant).
    """
    area = space.area
    g = space.velocity_gradient_at_qp(u)
    eps0 = nu * space.integrate(np.einsum("qij,qij->q", g, g)) / area
    c = np.abs(space.curl_at_qp(u))
    epsM = space.integrate(np.asarray(ell) ** 2 * c ** 3) / area
    return eps0, epsM


def kinetic_energies(space: fem.TaylorHoodSpace, u: np.ndarray, u_prev: np.ndarray | None,
                     dt: float, beta: float, ell) -> tuple[float, float]:
    """Model kinetic energy per unit area and its rate of change.

    ``ke = (||u||^2 + beta^2 ||l curl u||^2) / (2 |Omega|)``; ``mke`` is the
    difference quotient ``(ke(u) - ke(u_prev)) / dt`` (zero without ``u_prev``).
    """
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")

    def ke_of(v):
        vq = space.velocity_at_qp(v)
        c = space.curl_at_qp(v)
        dens = np.einsum("qi,qi->q", vq, vq) + beta ** 2 * np.asarray(ell) ** 2 * c ** 2
        return 0.5 * space.integrate(dens) / space.area

    ke = ke_of(u)
    mke = 0.0 if u_prev is None else (ke - ke_of(u_prev)) / dt
    return ke, mke


def sample_state(problem, u, u_prev, dt, t, power_in=0.0):
    """Arguments for :meth:`DissipationSeries.append` from a solver state."""
    space, params = problem.space, problem.params
    eps0, epsM = dissipation_rates(space, u, params.nu, problem.ell)
    ke, mke = kinetic_energies(space, u, u_prev, dt, params.beta, problem.ell)
    usq = float(u @ (problem.M @ u)) / problem.area
    return t, eps0, epsM, ke, mke, power_in, usq


def _window(t: np.ndarray, burn_in_fraction: float) -> np.ndarray:
    if not 0 <= burn_in_fraction < 1:
        raise ValueError("burn_in_fraction must lie in [0, 1)")
    if len(t) == 0:
        raise ValueError("empty series")
    t_burn = t[0] + burn_in_fraction * (t[-1] - t[0])
    sel = np.flatnonzero(t >= t_burn - 1e-12 * max(1.0, abs(t[-1])))
    if len(sel) < 2:
        raise ValueError("fewer than 2 samples after burn-in")
    return sel


def trapezoid_average(t, values, burn_in_fraction: float = 0.0) -> float:
    t = np.asarray(t, dtype=float)
    v = np.asarray(values, dtype=float)
    sel = _window(t, burn_in_fraction)
    ts, vs = t[sel], v[sel]
    return float(trapezoid(vs, ts) / (ts[-1] - ts[0]))


@dataclass(frozen=True)
class Averages:
    eps: float
    eps0: float
    epsM: float
    usq: float
    power_in: float
    t_start: float
    t_end: float


def time_average(series: DissipationSeries, burn_in_fraction: float = 0.2) -> Averages:
    """Trapezoidal averages over ``[t_burn, t_end]``."""
    t = np.asarray(series.t)
    sel = _window(t, burn_in_fraction)

    def avg(x):
        return trapezoid_average(t, x, burn_in_fraction)

    usq = np.asarray(series.usq)
    return Averages(eps=avg(series.eps), eps0=avg(series.eps0), epsM=avg(series.epsM),
                    usq=avg(usq) if np.all(np.isfinite(usq[sel])) else float("nan"),
                    power_in=avg(series.power_in), t_start=float(t[sel[0]]),
                    t_end=float(t[-1]))


@dataclass(frozen=True)
class Scales:
    """Force, velocity and length scales and the resulting Reynolds number.

    ``L`` uses ``|Omega|^(1/2)`` for the domain term; the 3D form
    ``|Omega|^(1/3)`` is kept in ``omega_length_3d`` for reference.
    """

    F: float
    U: float
    L: float
    Re: float
    degenerate: bool = False
    omega_length_3d: float = float("nan")


def compute_scales(space: fem.TaylorHoodSpace, f: np.ndarray | None, usq_avg: float,
                   nu: float, L_ref: float = 1.0) -> Scales:
    """Flow scales from a steady body force and the averaged ``||u||^2 / |Omega|``.

    ``f`` is a P2 velocity coefficient vector or ``None`` for no forcing. For
    zero forcing the length scale is undefined and ``L_ref`` is used with the
    ``degenerate`` flag set.
    """
    area = space.area
    U = math.sqrt(max(usq_avg, 0.0))
    L_dom = math.sqrt(area)
    if f is None or not np.any(f):
        L = L_ref
        return Scales(0.0, U, L, U * L / nu, True, area ** (1.0 / 3.0))
    fq = space.velocity_at_qp(f)
    F = math.sqrt(space.integrate(np.einsum("qi,qi->q", fq, fq)) / area)
    g = space.velocity_gradient_at_qp(f)
    grad2 = space.integrate(np.einsum("qij,qij->q", g, g)) / area
    curl3 = space.integrate(np.abs(space.curl_at_qp(f)) ** 3) / area
    cands = [L_dom]
    if grad2 > 0:
        cands.append(F / math.sqrt(grad2))
    if curl3 > 0:
        cands.append(F / curl3 ** (1.0 / 3.0))
    L = min(cands)
    return Scales(F, U, L, U * L / nu, False, area ** (1.0 / 3.0))


@dataclass(frozen=True)
class FitResult:
    a: float
    b: float
    rms_residual: float
    n_points: int

    def __str__(self):
        return f"a={_fmt(self.a)} b={_fmt(self.b)} rms={_fmt(self.rms_residual)}"


def fit_dissipation(points, a0: float = 0.5, b0: float = 5.0) -> FitResult:
    """Least-squares fit of ``eps = a + b / Re``.

    The model is linear in ``(a, b)``, so the minimizer is computed directly;
    the starting guesses ``a0, b0`` of an iterative fit are accepted for
    compatibility and not needed.
    """
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    Re, eps = pts[:, 0], pts[:, 1]
    if np.any(Re <= 0):
        raise ValueError("Reynolds numbers must be positive")
    if len(np.unique(Re)) < 2:
        raise ValueError("fit needs at least 2 distinct Reynolds numbers")
    X = np.column_stack([np.ones_like(Re), 1.0 / Re])
    coef, *_ = np.linalg.lstsq(X, eps, rcond=None)
    r = eps - X @ coef
    return FitResult(float(coef[0]), float(coef[1]),
                     float(np.sqrt(np.mean(r ** 2))), len(pts))


@dataclass(frozen=True)
class Bound:
    value: float
    ratio: float


def dissipation_bound(U: float, L: float, Re: float, ell_max: float,
                  eps_avg: float | None = None) -> Bound:
    """``(1 + 1/Re + (ell_max / L)^2 / 3) U^3 / L`` and ``eps_avg`` over it."""
    if not (U > 0 and L > 0 and Re > 0 and ell_max >= 0):
        raise ValueError("bound needs U, L, Re > 0 and ell_max >= 0")
    value = (1.0 + 1.0 / Re + (ell_max / L) ** 2 / 3.0) * U ** 3 / L
    ratio = float("nan") if eps_avg is None else eps_avg / value
    return Bound(value, ratio)


def write_sweep(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(SWEEP_COLUMNS)
        for row in rows:
            w.writerow([_fmt(row[c]) for c in SWEEP_COLUMNS])


def read_sweep(path) -> list[dict]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ())[:2] != SWEEP_COLUMNS[:2]:
            raise ValueError(f"{path}: expected columns starting with Re,eps_avg")
        return [{k: float(v) for k, v in row.items()} for row in reader]
