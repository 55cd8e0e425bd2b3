"""
Checks of the analytical properties on discrete objects.

* strong monotonicity of the eddy-viscosity term,
* the discrete energy balance recorded by the solver,
* spatial convergence of the Taylor-Hood Stokes discretization,
* second-order accuracy of the Crank-Nicolson stepper.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .fem import TaylorHoodSpace
from .mesh import Geometry, Mesh, generate_channel_mesh
from .model import Mixing, ModelParams
from .solver import FlowProblem, SolverConfig, run, state_from_velocity


@dataclass
class Report:
    name: str
    ok: bool
    lines: list[str] = field(default_factory=list)
    values: dict = field(default_factory=dict)

    def __str__(self):
        head = f"[{'PASS' if self.ok else 'FAIL'}] {self.name}"
        return "\n".join([head] + ["    " + ln for ln in self.lines])


# -- strong monotonicity --------------------------------------------------

def monotonicity_terms(space: TaylorHoodSpace, ell: np.ndarray, u: np.ndarray,
                       v: np.ndarray) -> tuple[float, float, float]:
    """Both sides of the monotonicity inequality for one pair of fields.

    Returns ``(lhs, rhs, rhs_l2)`` with
    ``lhs = int l^2 (|a| a - |b| b)(a - b)``,
    ``rhs = int (l^(3/2) |a - b|)^3`` and ``rhs_l2 = int l^2 |a - b|^3``,
    where ``a, b`` are the curls of ``u, v``.
    """
    a = space.curl_at_qp(u)
    b = space.curl_at_qp(v)
    w = space.qweights
    l2 = ell ** 2
    lhs = float(w @ (l2 * (np.abs(a) * a - np.abs(b) * b) * (a - b)))
    d3 = np.abs(a - b) ** 3
    return lhs, float(w @ (ell ** 4.5 * d3)), float(w @ (l2 * d3))


def check_monotonicity(space: TaylorHoodSpace, ell: np.ndarray, trials: int = 1000,
                       seed: int = 0, c_tilde: float = 0.5, slack: float = 1e-6) -> Report:
    """Random-pair test of ``lhs >= 0`` and ``lhs >= (c_tilde - slack) * rhs``.

    Trial ``i`` draws both velocity fields uniformly from ``[-1, 1]`` with the
    generator seeded by ``(seed, i)``.
    """
    if trials < 1:
        raise ValueError("trials must be at least 1")
    ell = np.broadcast_to(np.asarray(ell, dtype=float), (space.n_qp,))
    bad_sign, bad_const = [], []
    min_ratio = math.inf
    for i in range(trials):
        rng = np.random.default_rng([seed, i])
        u = rng.uniform(-1.0, 1.0, space.n_velocity)
        v = rng.uniform(-1.0, 1.0, space.n_velocity)
        lhs, rhs, rhs_l2 = monotonicity_terms(space, ell, u, v)
        scale = rhs_l2 + 1e-300
        if lhs < -1e-13 * scale:
            bad_sign.append(i)
        if lhs < (c_tilde - slack) * rhs or lhs < (c_tilde - slack) * rhs_l2:
            bad_const.append(i)
        if rhs_l2 > 0:
            min_ratio = min(min_ratio, lhs / rhs_l2)
    ok = not bad_sign and not bad_const
    lines = [f"{trials} trials (seed {seed}), c_tilde = {c_tilde}",
             f"sign violations: {len(bad_sign)}, constant violations: {len(bad_const)}",
             f"min lhs / int l^2|curl(u - v)|^3 = {min_ratio:.6f}"]
    if not ok:
        lines.append(f"offending trials: {(bad_sign + bad_const)[:10]}")
    return Report("strong monotonicity", ok, lines,
                  {"violations": len(bad_sign) + len(bad_const), "min_ratio": min_ratio,
                   "offending": bad_sign + bad_const})


# -- energy balance -------------------------------------------------------

def energy_audit(records) -> float:
    """Largest ``|residual| / max(1, |terms|)`` over the audit records."""
    worst = 0.0
    for r in records:
        scale = max(1.0, abs(r.MKE), abs(r.eps0_term), abs(r.epsM_term), abs(r.power_in))
        worst = max(worst, abs(r.residual) / scale)
    return worst


def square_vortex_forcing(amplitude: float = 10.0):
    """Smooth divergence-free body force on the unit square."""
    def f(x, y, t=0.0):
        s = np.pi
        return (amplitude * s * np.sin(s * x) ** 2 * np.sin(2 * s * y),
                -amplitude * s * np.sin(2 * s * x) * np.sin(s * y) ** 2)
    return f


def closed_box(n: int = 13) -> Mesh:
    """Unit square with every edge a no-slip wall, ``n`` cells per side."""
    m = generate_channel_mesh(Geometry.unit_square(), math.sqrt(2.0) / n)
    return m.with_tags({"inflow": "wall", "outflow": "wall"})


def energy_audit_run(Re: float = 100.0, steps: int = 100, dt: float = 0.01, n: int = 13,
                     picard_tol: float = 1e-9, mixing: str = "l1", forcing=True,
                     u0=None, seed: int = 0):
    """Forced (or decaying) flow in a closed box; returns ``(RunResult, problem)``."""
    mesh = closed_box(n)
    params = ModelParams.from_reynolds(Re, beta=10.0, mixing=mixing)
    f = square_vortex_forcing() if forcing else None
    prob = FlowProblem(mesh, params, forcing=f, inflow_scale=0.0)
    cfg = SolverConfig(dt=dt, t_end=steps * dt, picard_tol=picard_tol)
    state = None
    if u0 is not None:
        if isinstance(u0, str) and u0 == "random":
            rng = np.random.default_rng(seed)
            u0 = rng.uniform(-1.0, 1.0, prob.n_velocity)
        state = state_from_velocity(prob, u0)
    return run(prob, cfg, state), prob


# -- spatial convergence --------------------------------------------------

def _stokes_exact():
    pi = np.pi

    def u(x, y):
        return (pi * np.sin(pi * x) ** 2 * np.sin(2 * pi * y),
                -pi * np.sin(2 * pi * x) * np.sin(pi * y) ** 2)

    def p(x, y):
        return np.cos(pi * x) * np.cos(pi * y)

    def f(x, y, t=0.0):
        lap1 = 2 * pi ** 3 * np.sin(2 * pi * y) * (np.cos(2 * pi * x) - 2 * np.sin(pi * x) ** 2)
        lap2 = -2 * pi ** 3 * np.sin(2 * pi * x) * (np.cos(2 * pi * y) - 2 * np.sin(pi * y) ** 2)
        return (-lap1 - pi * np.sin(pi * x) * np.cos(pi * y),
                -lap2 - pi * np.cos(pi * x) * np.sin(pi * y))

    return u, p, f


def _stokes_quadratic():
    def u(x, y):
        return x ** 2, -2.0 * x * y

    def p(x, y):
        return x + y - 1.0

    def f(x, y, t=0.0):
        return -2.0 + 1.0 + 0 * x, 1.0 + 0 * y

    return u, p, f


def _square_mesh(n: int, kind: str) -> Mesh:
    m = closed_box(n)
    if kind == "structured":
        return m
    if kind != "graded":
        raise ValueError(f"unknown mesh family {kind!r}")
    # smooth monotone stretching that clusters points near the walls
    v = m.vertices.copy()
    v -= 0.35 * np.sin(2 * np.pi * v) / (2 * np.pi)
    pairs = list(m.boundary_pairs())
    return Mesh.from_arrays(v, m.triangles, pairs, name=f"graded{n}")


def stokes_errors(mesh: Mesh, solution="trig") -> tuple[float, float]:
    """L2 velocity and pressure errors of the Stokes solve with ``nu = 1``."""
    u_ex, p_ex, f = _stokes_exact() if solution == "trig" else _stokes_quadratic()
    params = ModelParams(nu=1.0, beta=0.0, mixing=Mixing("const", 0.0))
    prob = FlowProblem(mesh, params, forcing=f, boundary_velocity=u_ex)
    u, p = prob.solve_linear(prob.K, prob.load(0.0), 1e-12)
    sp_ = prob.space
    xq = sp_.qpoints
    e1, e2 = sp_.velocity_at_qp(u).T - np.asarray(u_ex(xq[:, 0], xq[:, 1]))
    err_u = math.sqrt(sp_.integrate(e1 ** 2 + e2 ** 2))
    ph = sp_.pressure_at_qp(p)
    pe = p_ex(xq[:, 0], xq[:, 1])
    ep = (ph - sp_.integrate(ph) / sp_.area) - (pe - sp_.integrate(pe) / sp_.area)
    err_p = math.sqrt(sp_.integrate(ep ** 2))
    return err_u, err_p


def _slope(h, e):
    return float(np.polyfit(np.log(h), np.log(e), 1)[0])


def stokes_convergence_study(levels: int = 3, n0: int = 4, kind: str = "structured",
                             solution: str = "trig", min_velocity_order: float = 2.7,
                             min_pressure_order: float = 1.7) -> Report:
    """Manufactured-solution Stokes errors on a sequence of halved meshes."""
    if levels < 3 and solution == "trig":
        raise ValueError("need at least 3 levels")
    hs, eu, ep = [], [], []
    lines = [f"{'h':>10} {'|u - u_h|':>12} {'|p - p_h|':>12}"]
    for k in range(levels):
        n = n0 * 2 ** k
        err_u, err_p = stokes_errors(_square_mesh(n, kind), solution)
        hs.append(1.0 / n)
        eu.append(err_u)
        ep.append(err_p)
        lines.append(f"{1.0 / n:10.5f} {err_u:12.4e} {err_p:12.4e}")
    if solution == "quadratic":
        ok = max(eu) < 1e-10 and max(ep) < 1e-9
        return Report("Stokes exactness (quadratic)", ok, lines, {"err_u": eu, "err_p": ep})
    su, spr = _slope(hs, eu), _slope(hs, ep)
    lines.append(f"velocity order {su:.3f} (>= {min_velocity_order}), "
                 f"pressure order {spr:.3f} (>= {min_pressure_order})")
    ok = su >= min_velocity_order and spr >= min_pressure_order
    return Report(f"Stokes convergence ({kind})", ok, lines,
                  {"h": hs, "err_u": eu, "err_p": ep, "order_u": su, "order_p": spr})


# -- temporal convergence -------------------------------------------------

def time_order_study(dts=(0.1, 0.05, 0.025), t_end: float = 1.0, n: int = 6,
                     ref_factor: int = 16, nu: float = 0.05, min_ratio: float = 3.6
                     ) -> Report:
    """Terminal-error reduction of the stepper on a forced linear problem.

    The reference is the same discretization run with a much smaller step.
    """
    mesh = closed_box(n)
    params = ModelParams(nu=nu, beta=10.0, mixing=Mixing("const", 0.05))
    g = square_vortex_forcing(1.0)

    def forcing(x, y, t):
        f1, f2 = g(x, y)
        return np.cos(3.0 * t) * f1, np.cos(3.0 * t) * f2

    prob = FlowProblem(mesh, params, forcing=forcing, inflow_scale=0.0)
    u0 = np.zeros(prob.n_velocity)

    def terminal(dt):
        # convection and eddy viscosity off; the backscatter term stays
        cfg = SolverConfig(dt=dt, t_end=t_end, picard_tol=1e-13, convection=False,
                           eddy=False)
        return run(prob, cfg, state_from_velocity(prob, u0)).state.u_now

    ref = terminal(min(dts) / ref_factor)
    errs = []
    for dt in dts:
        d = terminal(dt) - ref
        errs.append(math.sqrt(float(d @ (prob.M @ d))))
    ratios = [errs[i] / errs[i + 1] for i in range(len(errs) - 1)]
    lines = [f"dt={dt:<8g} error={e:.4e}" for dt, e in zip(dts, errs)]
    lines.append("ratios " + ", ".join(f"{r:.3f}" for r in ratios) + f" (>= {min_ratio})")
    return Report("Crank-Nicolson temporal order", min(ratios) >= min_ratio, lines,
                  {"errors": errs, "ratios": ratios})
