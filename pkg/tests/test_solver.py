import csv
import math

import numpy as np
import pytest
import scipy.sparse as sp

from blm import fem
from blm.mesh import Geometry, generate_channel_mesh
from blm.model import Mixing, ModelParams
from blm.solver import (AuditRecord, FlowProblem, LinearSolverError, PicardConvergenceError,
                        ReusedLUSolver, SaddleAssembler, SolverConfig, initial_condition, run,
                        saddle_matrix, solve_saddle_point, state_from_velocity, step,
                        write_energy_audit)
from blm.verify import closed_box, energy_audit, energy_audit_run

from conftest import square_mesh


def test_config_validation_and_steps():
    for kw in (dict(dt=0), dict(picard_tol=0), dict(picard_max=0), dict(linear_tol=-1),
               dict(t_end=-1)):
        with pytest.raises(ValueError):
            SolverConfig(**kw)
    assert SolverConfig(dt=0.01, t_end=50).n_steps == 5000
    assert SolverConfig(dt=0.02, t_end=20).n_steps == 1000
    assert SolverConfig(dt=0.3, t_end=1).n_steps == 4
    assert SolverConfig(t_end=0).n_steps == 0


# -- linear algebra --------------------------------------------------------

def test_saddle_identity_system():
    rhs = np.arange(1.0, 6.0)
    assert np.array_equal(solve_saddle_point(sp.identity(5, format="csc"), rhs), rhs)
    assert np.array_equal(solve_saddle_point(sp.identity(5, format="csc"), 0 * rhs), 0 * rhs)


def test_saddle_against_dense_oracle():
    prob = FlowProblem(square_mesh(3), ModelParams(1.0, 0.0, Mixing("const", 0.0)),
                       forcing=lambda x, y, t: (np.sin(x), y))
    system = saddle_matrix(prob.K, prob.B, prob.pressure_mean)
    rhs = np.zeros(system.shape[0])
    rhs[:prob.n_velocity] = prob.load(0.0)
    system, rhs = fem.apply_dirichlet(system, rhs, prob.dirichlet_dofs, prob.dirichlet_values)
    x = solve_saddle_point(system, rhs, 1e-10)
    oracle = np.linalg.solve(system.toarray(), rhs)
    assert np.abs(x - oracle).max() <= 1e-9 * max(1.0, np.abs(oracle).max())
    assert np.linalg.norm(rhs - system @ x) <= 1e-10 * np.linalg.norm(rhs)


def test_saddle_singular_raises():
    A = sp.csc_matrix(np.array([[1.0, 1.0], [1.0, 1.0]]))
    with pytest.raises(LinearSolverError):
        solve_saddle_point(A, np.array([1.0, 0.0]))


def test_assembler_constrain_matches_apply_dirichlet(space4, rng):
    B = fem.assemble_divergence(space4)
    d = space4.velocity.dirichlet_dofs
    asm = SaddleAssembler(space4, B, None, d)
    A = fem.assemble_mass(space4) + fem.assemble_convection_skew(
        space4, rng.normal(size=space4.n_velocity))
    vals = rng.normal(size=len(d))
    rhs = rng.normal(size=asm.n)
    S1, b1 = asm.constrain(asm.matrix(asm.velocity_data(A)), rhs.copy(), vals)
    S2, b2 = fem.apply_dirichlet(saddle_matrix(A, B), rhs, d, vals)
    assert abs(S1 - S2).max() < 1e-14
    assert np.allclose(b1, b2, atol=1e-14)


def test_reused_lu_matches_direct(space4, rng):
    prob = FlowProblem(square_mesh(4), ModelParams(0.1, 1.0, Mixing("const", 0.05)))
    asm = prob.assembler
    solver = ReusedLUSolver(1e-10)
    base = prob.static_data(0.1)
    for k in range(3):
        w = rng.normal(size=prob.n_velocity) * 0.1 * (k + 1)
        data = base + 0.5 * asm.local_data(fem.local_convection_skew(prob.space, w))
        A = asm.matrix(data)
        rhs = rng.normal(size=asm.n)
        A, rhs = asm.constrain(A, rhs, prob.dirichlet_values)
        x = solver.solve(A, rhs)
        assert np.linalg.norm(rhs - A @ x) <= 1e-10 * np.linalg.norm(rhs)
    assert 1 <= solver.factorizations <= 3


# -- initial condition -----------------------------------------------------

def test_zero_inflow_gives_zero_state():
    prob = FlowProblem(generate_channel_mesh(target_h=0.4), ModelParams.from_reynolds(100),
                       inflow_scale=0.0)
    st = initial_condition(prob)
    assert np.all(st.u_now == 0) and st.t == 0.0


def test_initial_condition_stokes_residual(channel_coarse):
    prob = FlowProblem(channel_coarse, ModelParams.from_reynolds(100))
    cfg = SolverConfig()
    st = initial_condition(prob, cfg)
    free = np.setdiff1d(np.arange(prob.n_velocity), prob.dirichlet_dofs)
    r = prob.params.nu * (prob.K @ st.u_now) - prob.B.T @ st.p_now
    scale = np.linalg.norm(prob.params.nu * (prob.K @ st.u_now))
    assert np.linalg.norm(r[free]) <= 1e-9 * scale
    assert np.abs(prob.B @ st.u_now).max() < 1e-12
    assert np.array_equal(st.u_now[prob.dirichlet_dofs], prob.dirichlet_values)


def test_poiseuille_recovered_exactly():
    m = generate_channel_mesh(Geometry((0, 0), (2, 1), None, None), 0.3)
    prob = FlowProblem(m, ModelParams.from_reynolds(50))
    u = initial_condition(prob).u_now
    y = m.p2_nodes[:, 1]
    n = m.n_p2_nodes
    assert np.abs(u[:n] - 4 * y * (1 - y)).max() <= 1e-8
    assert np.abs(u[n:]).max() <= 1e-8


# -- stepping --------------------------------------------------------------

def _newton_step(prob, u0, dt, t):
    """Solve the Crank-Nicolson system by damped Newton with a dense FD Jacobian."""
    s, nu = prob.space, prob.params.nu
    nv = prob.n_velocity
    dd = prob.dirichlet_dofs
    free = np.setdiff1d(np.arange(nv), dd)
    F = prob.load(t + 0.5 * dt)

    def unpack(z):
        u1 = np.zeros(nv)
        u1[dd] = prob.dirichlet_values
        u1[free] = z[:len(free)]
        return u1, z[len(free):]

    def residual(z):
        u1, p = unpack(z)
        um = 0.5 * (u0 + u1)
        A = fem.assemble_weighted_curlcurl(s, prob.ell2 * np.abs(s.curl_at_qp(um)))
        C = fem.assemble_convection_skew(s, um)
        r = prob.Mb @ (u1 - u0) / dt + nu * (prob.K @ um) + A @ um + C @ um \
            - prob.B.T @ p - F
        return np.concatenate([r[free], -(prob.B @ u1)])

    z = np.concatenate([u0[free], np.zeros(prob.n_pressure)])
    for _ in range(50):
        r = residual(z)
        if np.linalg.norm(r) < 1e-14:
            break
        J = np.empty((len(r), len(z)))
        for j in range(len(z)):
            e = np.zeros(len(z))
            e[j] = 1e-7
            J[:, j] = (residual(z + e) - residual(z - e)) / 2e-7
        dz = np.linalg.solve(J, -r)
        lam = 1.0
        while np.linalg.norm(residual(z + lam * dz)) > (1 - 1e-4 * lam) * np.linalg.norm(r) \
                and lam > 1e-4:
            lam *= 0.5
        z = z + lam * dz
    return unpack(z)


@pytest.mark.parametrize("h", [1.5, math.sqrt(2) / 2])
def test_single_step_matches_newton_oracle(h):
    m = generate_channel_mesh(Geometry.unit_square(), h)
    prob = FlowProblem(m, ModelParams(0.01, 10.0, Mixing("const", 0.1)),
                       forcing=lambda x, y, t: (np.sin(3 * y) + t, x * y))
    cfg = SolverConfig(dt=0.1, t_end=0.1, picard_tol=1e-13, picard_max=200)
    st0 = initial_condition(prob, cfg)
    st1 = step(st0, cfg, prob)
    u_ref, p_ref = _newton_step(prob, st0.u_now, cfg.dt, 0.0)
    assert np.abs(st1.u_now - u_ref).max() <= 1e-8
    assert np.abs(st1.p_now - p_ref).max() <= 1e-8 * max(1.0, np.abs(p_ref).max())


def test_zero_state_stays_zero():
    prob = FlowProblem(closed_box(4), ModelParams.from_reynolds(100), inflow_scale=0.0)
    cfg = SolverConfig(dt=0.01, t_end=0.05)
    res = run(prob, cfg)
    assert np.all(res.state.u_now == 0)
    assert all(a.KE == 0 and a.residual == 0 for a in res.audit)
    assert energy_audit(res.audit) == 0.0


def test_decay_energy_strictly_decreases():
    res, prob = energy_audit_run(steps=20, n=6, forcing=False, u0="random", seed=3)
    ke = np.asarray(res.series.ke)
    assert np.all(np.diff(ke) < 0)
    assert np.all(ke <= ke[0])
    assert energy_audit(res.audit) <= 1e-7


def test_dirichlet_data_held_exactly(channel_coarse):
    prob = FlowProblem(channel_coarse, ModelParams.from_reynolds(200))
    res = run(prob, SolverConfig(dt=0.02, t_end=0.06))
    assert np.array_equal(res.state.u_now[prob.dirichlet_dofs], prob.dirichlet_values)
    assert np.abs(prob.B @ res.state.u_now).max() < 1e-9


def test_run_sample_count():
    prob = FlowProblem(closed_box(3), ModelParams.from_reynolds(100), inflow_scale=0.0)
    assert len(run(prob, SolverConfig(dt=0.1, t_end=0.0)).series) == 1
    res = run(prob, SolverConfig(dt=0.1, t_end=0.25))
    assert len(res.series) == math.ceil(0.25 / 0.1) + 1
    assert len(res.audit) == 3


def test_picard_failure_reports_increment():
    from blm.verify import square_vortex_forcing
    prob = FlowProblem(closed_box(4), ModelParams.from_reynolds(100),
                       forcing=square_vortex_forcing(), inflow_scale=0.0)
    cfg = SolverConfig(dt=0.01, t_end=0.02, picard_tol=1e-12, picard_max=2)
    with pytest.raises(PicardConvergenceError) as info:
        run(prob, cfg)
    assert info.value.step == 1
    assert info.value.iterations == 2
    assert info.value.increment > 1e-12


def test_audit_residual_scales_with_picard_tol():
    worst = {}
    for tol in (1e-5, 1e-7):
        res, _ = energy_audit_run(steps=5, n=5, picard_tol=tol)
        worst[tol] = energy_audit(res.audit)
        assert worst[tol] <= 10 * tol
    assert 10 <= worst[1e-5] / worst[1e-7] <= 1000


def test_write_energy_audit(tmp_path):
    rec = AuditRecord(1, 0.01, 1.0, -0.5, 0.2, 0.3, 0.0, 0.0)
    path = tmp_path / "energy_audit.csv"
    write_energy_audit([rec], path)
    rows = list(csv.reader(open(path)))
    assert rows[0] == ["step", "t", "KE", "MKE", "eps0_term", "epsM_term", "power_in",
                       "residual"]
    assert rows[1][0] == "1" and float(rows[1][3]) == -0.5


def test_state_from_velocity_is_divergence_free(rng):
    prob = FlowProblem(closed_box(4), ModelParams.from_reynolds(100), inflow_scale=0.0)
    st = state_from_velocity(prob, rng.uniform(-1, 1, prob.n_velocity))
    assert np.abs(prob.B @ st.u_now).max() < 1e-10
    assert np.all(st.u_now[prob.dirichlet_dofs] == 0)
