"""
Crank-Nicolson time stepping of the backscatter Baldwin-Lomax model.

One step solves, for the unknown ``u1`` and with ``um = (u0 + u1) / 2``,

    Mb (u1 - u0) / dt + C(w) um + nu K um + A(l^2 |curl w|) um - B^T p = F
    B u1 = 0

where ``Mb = M + beta^2 A(l^2)`` and the convecting / eddy-viscosity field
``w`` is iterated to ``um`` by Picard fixed-point iteration.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import fem
from .mesh import INFLOW, Mesh, OUTFLOW
from .model import ModelParams, inflow_profile

logger = logging.getLogger(__name__)


class SolverError(RuntimeError):
    """Base class for failures of the time stepper."""


class LinearSolverError(SolverError):
    pass


class BlowUpError(SolverError):
    def __init__(self, step: int, what: str = "velocity"):
        super().__init__(f"non-finite {what} at step {step}")
        self.step = step


class PicardConvergenceError(SolverError):
    def __init__(self, step: int, iterations: int, increment: float):
        super().__init__(
            f"Picard iteration did not converge at step {step} after {iterations} "
            f"iterations (last increment {increment:.3e})")
        self.step = step
        self.iterations = iterations
        self.increment = increment


@dataclass(frozen=True)
class SolverConfig:
    dt: float = 0.01
    t_end: float = 50.0
    picard_tol: float = 1e-9
    picard_max: int = 50
    linear_tol: float = 1e-10
    convection: bool = True
    eddy: bool = True

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        if not self.t_end >= 0:
            raise ValueError(f"t_end must be nonnegative, got {self.t_end}")
        if not self.picard_tol > 0:
            raise ValueError("picard_tol must be positive")
        if not self.picard_max >= 1:
            raise ValueError("picard_max must be at least 1")
        if not self.linear_tol > 0:
            raise ValueError("linear_tol must be positive")

    @property
    def n_steps(self) -> int:
        return max(0, math.ceil(self.t_end / self.dt - 1e-9))


@dataclass(frozen=True)
class AuditRecord:
    """Terms of the discrete energy balance for one step (per unit area)."""

    step: int
    t: float
    KE: float
    MKE: float
    eps0_term: float
    epsM_term: float
    power_in: float
    residual: float
    boundary_work: float = 0.0

    COLUMNS = ("step", "t", "KE", "MKE", "eps0_term", "epsM_term", "power_in", "residual")


@dataclass
class StepperState:
    u_now: np.ndarray
    u_prev: np.ndarray
    p_now: np.ndarray
    t: float = 0.0
    step_index: int = 0
    picard_iters_last: int = 0
    energy_audit: AuditRecord | None = None


# -- linear algebra -------------------------------------------------------

def saddle_matrix(A, B, mean: np.ndarray | None = None) -> sp.csr_matrix:
    """``[[A, -B^T], [-B, 0]]``, optionally bordered by a pressure-mean row."""
    blocks = [[A, -B.T], [-B, None]]
    if mean is not None:
        m = sp.csr_matrix(mean[None, :])
        blocks = [[A, -B.T, None], [-B, None, m.T], [None, m, None]]
    return sp.bmat(blocks, format="csc")


def solve_saddle_point(system, rhs: np.ndarray, linear_tol: float = 1e-10,
                       refinements: int = 3, lu=None) -> np.ndarray:
    """Sparse LU solve with a relative-residual postcondition.

    Raises
    ------
    LinearSolverError
        If the matrix is singular or the residual stays above ``linear_tol``
        after iterative refinement.
    """
    rhs = np.asarray(rhs, dtype=float)
    nrm = np.linalg.norm(rhs)
    if nrm == 0.0:
        return np.zeros_like(rhs)
    system = sp.csc_matrix(system)
    if lu is None:
        try:
            lu = spla.splu(system)
        except RuntimeError as exc:
            raise LinearSolverError(f"saddle-point factorization failed: {exc}") from exc
    x = lu.solve(rhs)
    for _ in range(refinements + 1):
        if not np.all(np.isfinite(x)):
            raise LinearSolverError("saddle-point solve produced non-finite values")
        r = rhs - system @ x
        rel = np.linalg.norm(r) / nrm
        if rel <= linear_tol:
            return x
        x = x + lu.solve(r)
    raise LinearSolverError(f"relative residual {rel:.3e} exceeds linear_tol {linear_tol:.1e}")


class SaddleAssembler:
    """Fixed sparsity pattern of the Dirichlet-constrained saddle-point matrix.

    The pattern covers every element coupling of the velocity block, both
    divergence blocks, the optional pressure-mean border and the diagonal.
    Element matrices are scattered straight into the CSC data array, so
    re-assembling the nonlinear terms costs one ``bincount`` per Picard
    iteration instead of sparse matrix products.
    """

    def __init__(self, space: fem.TaylorHoodSpace, B, mean: np.ndarray | None,
                 dirichlet_dofs: np.ndarray):
        nu_, np_ = space.n_velocity, space.n_pressure
        n = nu_ + np_ + (0 if mean is None else 1)
        self.n = n
        vd = space.velocity.element_dofs                     # (nt, 12)
        pd = space.pressure.element_dofs + nu_               # (nt, 3)
        rows = [np.repeat(vd, 12, axis=1).ravel()]
        cols = [np.tile(vd, (1, 12)).ravel()]
        self._n_vel_entries = rows[0].size
        Bc = sp.coo_matrix(B)
        rows += [Bc.col, Bc.row + nu_, np.arange(n)]
        cols += [Bc.row + nu_, Bc.col, np.arange(n)]
        if mean is not None:
            j = np.arange(np_) + nu_
            rows += [j, np.full(np_, n - 1)]
            cols += [np.full(np_, n - 1), j]
        rows = np.concatenate(rows)
        cols = np.concatenate(cols)
        keys = cols.astype(np.int64) * n + rows
        uniq, inv = np.unique(keys, return_inverse=True)
        self.indices = (uniq % n).astype(np.int32)
        pcols = uniq // n
        self.indptr = np.searchsorted(pcols, np.arange(n + 1)).astype(np.int32)
        self.nnz = len(uniq)
        self._vel_pos = inv[:self._n_vel_entries]
        self._pattern_rows, self._pattern_cols = self.indices.astype(np.int64), pcols

        # static data: divergence blocks and mean border (velocity block filled later)
        static = np.zeros(self.nnz)
        k = self._n_vel_entries
        nb = Bc.nnz
        np.add.at(static, inv[k:k + nb], -Bc.data)
        np.add.at(static, inv[k + nb:k + 2 * nb], -Bc.data)
        if mean is not None:
            off = k + 2 * nb + n
            np.add.at(static, inv[off:off + np_], mean)
            np.add.at(static, inv[off + np_:off + 2 * np_], mean)
        self._static = static

        constrained = np.zeros(n, dtype=bool)
        constrained[dirichlet_dofs] = True
        self._mask = constrained[self._pattern_rows] | constrained[self._pattern_cols]
        diag = self._pattern_rows == self._pattern_cols
        self._ddiag = np.flatnonzero(diag & constrained[self._pattern_rows])
        self.dirichlet_dofs = dirichlet_dofs

    def velocity_data(self, A) -> np.ndarray:
        """Pattern data of a global velocity-block matrix ``A``."""
        A = sp.csr_matrix(A)
        sel = self._pattern_rows < A.shape[0]
        sel &= self._pattern_cols < A.shape[1]
        out = np.zeros(self.nnz)
        r, c = self._pattern_rows[sel], self._pattern_cols[sel]
        out[sel] = np.asarray(A[r, c]).ravel()
        return out

    def local_data(self, local: np.ndarray) -> np.ndarray:
        """Pattern data of assembled element matrices (nt, 12, 12)."""
        return np.bincount(self._vel_pos, weights=local.ravel(), minlength=self.nnz)

    def matrix(self, velocity_data: np.ndarray) -> sp.csc_matrix:
        """Unconstrained saddle matrix from velocity-block data."""
        return self._csc(velocity_data + self._static)

    def constrain(self, A: sp.csc_matrix, rhs: np.ndarray, values: np.ndarray):
        """Symmetric Dirichlet elimination (same result as :func:`fem.apply_dirichlet`)."""
        g = np.zeros(self.n)
        g[self.dirichlet_dofs] = values
        b = rhs - A @ g
        b[self.dirichlet_dofs] = values
        data = A.data.copy()
        data[self._mask] = 0.0
        data[self._ddiag] = 1.0
        return self._csc(data), b

    def _csc(self, data):
        return sp.csc_matrix((data, self.indices, self.indptr), shape=(self.n, self.n))


class ReusedLUSolver:
    """Saddle-point solves that recycle one LU factorization.

    The stored factorization preconditions GMRES on slightly different
    matrices (later Picard iterates, later time steps); it is refreshed when
    GMRES needs more than ``max_krylov`` iterations.
    """

    def __init__(self, linear_tol: float = 1e-10, max_krylov: int = 12):
        self.linear_tol = linear_tol
        self.max_krylov = max_krylov
        self.lu = None
        self.factorizations = 0

    def _factor(self, A):
        try:
            self.lu = spla.splu(A)
        except RuntimeError as exc:
            raise LinearSolverError(f"saddle-point factorization failed: {exc}") from exc
        self.factorizations += 1

    def solve(self, A: sp.csc_matrix, rhs: np.ndarray, x0: np.ndarray | None = None):
        nrm = np.linalg.norm(rhs)
        if nrm == 0.0:
            return np.zeros_like(rhs)
        if self.lu is not None:
            prec = spla.LinearOperator(A.shape, matvec=self.lu.solve)
            count = [0]

            def cb(_):
                count[0] += 1

            x, info = spla.gmres(A, rhs, x0=x0, rtol=0.2 * self.linear_tol, atol=0.0,
                                 restart=self.max_krylov, maxiter=1, M=prec,
                                 callback=cb, callback_type="pr_norm")
            if info == 0 and np.all(np.isfinite(x)):
                rel = np.linalg.norm(rhs - A @ x) / nrm
                if rel <= self.linear_tol:
                    if count[0] > self.max_krylov // 2:
                        self.lu = None  # refresh before the next solve
                    return x
        self._factor(A)
        return solve_saddle_point(A, rhs, self.linear_tol, lu=self.lu)


# -- problem setup --------------------------------------------------------

class FlowProblem:
    """Mesh, spaces, static matrices and boundary data of one configuration.

    Parameters
    ----------
    mesh : Mesh
    params : ModelParams
    forcing : callable, optional
        ``forcing(x, y, t) -> (f1, f2)`` body force.
    inflow_scale : float
        Multiplies the parabolic inflow profile (0 gives homogeneous data).
    boundary_velocity : callable, optional
        ``g(x, y) -> (u1, u2)`` prescribed on every Dirichlet node instead of
        the inflow / no-slip data.
    """

    def __init__(self, mesh: Mesh, params: ModelParams,
                 forcing: Callable | None = None, inflow_scale: float = 1.0,
                 boundary_velocity: Callable | None = None):
        self.mesh = mesh
        self.boundary_velocity = boundary_velocity
        self.params = params
        self.forcing = forcing
        self.inflow_scale = float(inflow_scale)
        self.space = space = fem.TaylorHoodSpace(mesh)
        self.area = space.area
        self.ell = params.mixing_length_at_qp(space)
        self.ell2 = self.ell ** 2
        self.M = fem.assemble_mass(space)
        self.K = fem.assemble_stiffness(space)
        self.A_ell2 = fem.assemble_weighted_curlcurl(space, self.ell2)
        self.Mb = (self.M + params.beta ** 2 * self.A_ell2).tocsr()
        self.B = fem.assemble_divergence(space)
        # without a natural outflow the pressure is fixed by a zero-mean constraint
        has_natural = np.any(mesh.boundary_tags == OUTFLOW)
        self.pressure_mean = None if has_natural else fem.assemble_pressure_mass_vector(space)
        self.dirichlet_dofs = space.velocity.dirichlet_dofs
        self.dirichlet_values = self._dirichlet_values()
        self._assembler = None
        self._static = {}
        self._solver = None

    def _dirichlet_values(self) -> np.ndarray:
        mesh, space = self.mesh, self.space
        n = space.n_nodes
        if self.boundary_velocity is not None:
            return space.interpolate_velocity(self.boundary_velocity)[self.dirichlet_dofs]
        g = np.zeros(space.n_velocity)
        if self.inflow_scale != 0.0:
            nodes = mesh.boundary_nodes([INFLOW])
            y = mesh.p2_nodes[nodes, 1]
            y0, y1 = mesh.vertices[:, 1].min(), mesh.vertices[:, 1].max()
            eta = np.clip((y - y0) / (y1 - y0), 0.0, 1.0)
            g[nodes] = self.inflow_scale * inflow_profile(eta)[0]
        solid = mesh.boundary_nodes(("wall", "obstacle"))
        g[solid] = 0.0
        g[solid + n] = 0.0
        return g[self.dirichlet_dofs]

    @property
    def n_velocity(self) -> int:
        return self.space.n_velocity

    @property
    def assembler(self) -> SaddleAssembler:
        if self._assembler is None:
            self._assembler = SaddleAssembler(self.space, self.B, self.pressure_mean,
                                              self.dirichlet_dofs)
        return self._assembler

    def static_data(self, dt: float) -> np.ndarray:
        """Pattern data of ``Mb / dt + nu K / 2``."""
        if dt not in self._static:
            A = self.Mb / dt + 0.5 * self.params.nu * self.K
            self._static[dt] = self.assembler.velocity_data(A)
        return self._static[dt]

    def linear_solver(self, linear_tol: float) -> ReusedLUSolver:
        if self._solver is None or self._solver.linear_tol != linear_tol:
            self._solver = ReusedLUSolver(linear_tol)
        return self._solver

    @property
    def n_pressure(self) -> int:
        return self.space.n_pressure

    def load(self, t: float) -> np.ndarray:
        if self.forcing is None:
            return np.zeros(self.n_velocity)
        xq = self.space.qpoints
        f1, f2 = self.forcing(xq[:, 0], xq[:, 1], t)
        fq = np.column_stack([np.broadcast_to(f1, len(xq)), np.broadcast_to(f2, len(xq))])
        return self.space.load_vector(fq)

    def energy(self, u: np.ndarray) -> float:
        """``||u||^2 + beta^2 ||l curl u||^2``."""
        return float(u @ (self.Mb @ u))

    def eddy_weight(self, w: np.ndarray) -> np.ndarray:
        return self.ell2 * np.abs(self.space.curl_at_qp(w))

    def solve_linear(self, A, rhs_u: np.ndarray, linear_tol: float,
                     rhs_p: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray]:
        """Solve ``[[A, -B^T], [-B, 0]]`` with the problem's Dirichlet data."""
        nu_, np_ = self.n_velocity, self.n_pressure
        system = saddle_matrix(A, self.B, self.pressure_mean)
        rhs = np.zeros(system.shape[0])
        rhs[:nu_] = rhs_u
        if rhs_p is not None:
            rhs[nu_:nu_ + np_] = rhs_p
        system, rhs = fem.apply_dirichlet(system, rhs, self.dirichlet_dofs,
                                          self.dirichlet_values)
        x = solve_saddle_point(system, rhs, linear_tol)
        return x[:nu_], x[nu_:nu_ + np_]


# -- time stepping --------------------------------------------------------

def initial_condition(problem: FlowProblem, config: SolverConfig | None = None
                      ) -> StepperState:
    """Steady Stokes flow with the problem's boundary data at ``t = 0``."""
    config = SolverConfig() if config is None else config
    A = problem.params.nu * problem.K
    u, p = problem.solve_linear(A, problem.load(0.0), config.linear_tol)
    return StepperState(u_now=u, u_prev=u.copy(), p_now=p)


def project_divergence_free(problem: FlowProblem, u: np.ndarray,
                            linear_tol: float = 1e-10) -> np.ndarray:
    """L2 projection of ``u`` onto discretely divergence-free fields with the Dirichlet data."""
    v, _ = problem.solve_linear(problem.M, problem.M @ u, linear_tol)
    return v


def state_from_velocity(problem: FlowProblem, u: np.ndarray,
                        linear_tol: float = 1e-10) -> StepperState:
    u = project_divergence_free(problem, u, linear_tol)
    return StepperState(u_now=u, u_prev=u.copy(), p_now=np.zeros(problem.n_pressure))


def _local_matvec(space: fem.TaylorHoodSpace, local: np.ndarray, u: np.ndarray) -> np.ndarray:
    vd = space.velocity.element_dofs
    y = np.einsum("tab,tb->ta", local, u[vd])
    return np.bincount(vd.ravel(), weights=y.ravel(), minlength=space.n_velocity)


def step(state: StepperState, config: SolverConfig, problem: FlowProblem) -> StepperState:
    """Advance one Crank-Nicolson step with Picard iteration on the nonlinear terms."""
    dt = config.dt
    nu = problem.params.nu
    space = problem.space
    u0 = state.u_now
    n = state.step_index + 1
    F = problem.load(state.t + 0.5 * dt)
    asm = problem.assembler
    static = problem.static_data(dt)
    solver = problem.linear_solver(config.linear_tol)
    base_rhs = problem.Mb @ u0 / dt - 0.5 * nu * (problem.K @ u0) + F
    nu_ = problem.n_velocity

    w = u0 if state.step_index == 0 else 1.5 * u0 - 0.5 * state.u_prev
    u1 = 2.0 * w - u0
    x = None
    increment = math.inf
    for k in range(1, config.picard_max + 1):
        local = np.zeros((problem.mesh.n_triangles, 12, 12))
        if config.eddy:
            local += fem.local_weighted_curlcurl(space, problem.eddy_weight(w))
        if config.convection:
            local += fem.local_convection_skew(space, w)
        A = asm.matrix(static + 0.5 * asm.local_data(local))
        rhs = np.zeros(asm.n)
        rhs[:nu_] = base_rhs - 0.5 * _local_matvec(space, local, u0)
        A, rhs = asm.constrain(A, rhs, problem.dirichlet_values)
        x = solver.solve(A, rhs, x0=x)
        u_new = x[:nu_]
        if not np.all(np.isfinite(u_new)):
            raise BlowUpError(n)
        d = u_new - u1
        increment = math.sqrt(max(float(d @ (problem.M @ d)), 0.0))
        u1 = u_new
        w = 0.5 * (u0 + u1)
        if increment <= config.picard_tol:
            break
    else:
        raise PicardConvergenceError(n, config.picard_max, increment)
    p = x[nu_:nu_ + problem.n_pressure]

    # terms of the energy balance, tested with the midpoint field
    um = w
    omega = problem.area
    E0, E1 = problem.energy(u0), problem.energy(u1)
    lam = (problem.Mb @ (u1 - u0)) / dt + nu * (problem.K @ um) \
        + _local_matvec(space, local, um) - problem.B.T @ p - F
    dd = problem.dirichlet_dofs
    boundary_work = float(lam[dd] @ um[dd])
    curl_m = problem.space.curl_at_qp(um)
    eps0 = nu * float(um @ (problem.K @ um)) / omega
    epsM = problem.space.integrate(problem.ell2 * np.abs(curl_m) ** 3) / omega \
        if config.eddy else 0.0
    power = (float(F @ um) + boundary_work) / omega
    mke = (E1 - E0) / (2.0 * dt * omega)
    audit = AuditRecord(step=n, t=state.t + dt, KE=E1 / (2.0 * omega), MKE=mke,
                        eps0_term=eps0, epsM_term=epsM, power_in=power,
                        residual=mke + eps0 + epsM - power,
                        boundary_work=boundary_work / omega)
    return StepperState(u_now=u1, u_prev=u0, p_now=p, t=n * dt, step_index=n,
                        picard_iters_last=k, energy_audit=audit)


@dataclass
class RunResult:
    series: "DissipationSeries"
    state: StepperState
    audit: list[AuditRecord] = field(default_factory=list)
    max_picard: int = 0


def run(problem: FlowProblem, config: SolverConfig, state: StepperState | None = None,
        probe: Callable[[StepperState], None] | None = None,
        meta: dict | None = None) -> RunResult:
    """Integrate from the initial state to ``t_end``.

    The statistics sample is recorded at ``t = 0`` and after every step, so the
    series holds ``n_steps + 1`` samples.
    """
    from .stats import DissipationSeries, sample_state

    if state is None:
        state = initial_condition(problem, config)
    meta = dict(meta or {})
    meta.setdefault("Re", problem.params.Re)
    meta.setdefault("mixing", str(problem.params.mixing))
    meta.setdefault("mesh", problem.mesh.name)
    meta.setdefault("dt", config.dt)
    series = DissipationSeries(meta=meta)
    series.append(*sample_state(problem, state.u_now, None, config.dt, state.t))
    audit: list[AuditRecord] = []
    max_picard = 0
    for _ in range(config.n_steps):
        prev = state
        try:
            state = step(state, config, problem)
        except SolverError:
            logger.error("step %d failed", prev.step_index + 1)
            raise
        audit.append(state.energy_audit)
        max_picard = max(max_picard, state.picard_iters_last)
        series.append(*sample_state(problem, state.u_now, prev.u_now, config.dt, state.t,
                                    power_in=state.energy_audit.power_in))
        if probe is not None:
            probe(state)
        if state.step_index % 100 == 0:
            logger.info("step %d t=%.3f picard=%d eps=%.4e", state.step_index, state.t,
                        state.picard_iters_last, series.eps[-1])
    return RunResult(series, state, audit, max_picard)


def write_energy_audit(records, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(AuditRecord.COLUMNS)
        for r in records:
            w.writerow([r.step] + [format(getattr(r, c), ".17g") for c in AuditRecord.COLUMNS[1:]])
