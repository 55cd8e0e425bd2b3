"""
scikit-learn style front ends.

``DissipationScalingRegressor`` fits ``<eps> = a + b / Re`` and predicts
dissipation for new Reynolds numbers. ``ChannelFlowSimulation`` runs the
benchmark for one configuration: ``fit`` integrates the model on a mesh and
``transform`` turns Reynolds numbers into time-averaged dissipation rates
by refitting clones, so a sweep composes with ``sklearn.base.clone``.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin, clone
from sklearn.utils.validation import check_is_fitted

from . import stats
from .mesh import Mesh, generate_channel_mesh
from .model import Mixing, ModelParams
from .solver import FlowProblem, SolverConfig, run


def check_reynolds(Re) -> np.ndarray:
    """Validate a 1-d array (or single-column 2-d array) of Reynolds numbers."""
    arr = np.asarray(Re, dtype=float)
    if arr.ndim == 2 and arr.shape[1] == 1:
        arr = arr[:, 0]
    if arr.ndim != 1:
        raise ValueError(f"expected a 1-d array of Reynolds numbers, got shape {arr.shape}")
    if arr.size == 0:
        raise ValueError("empty Reynolds-number array")
    if not np.all(np.isfinite(arr)) or np.any(arr <= 0):
        raise ValueError("Reynolds numbers must be finite and positive")
    return arr


def check_unique(Re: np.ndarray) -> np.ndarray:
    if len(np.unique(Re)) != len(Re):
        raise ValueError(f"duplicate Reynolds numbers in {Re.tolist()}")
    return Re


class DissipationScalingRegressor(RegressorMixin, BaseEstimator):
    """Least-squares model ``eps = a + b / Re``.

    Parameters
    ----------
    a0, b0 : float
        Starting guesses kept for parity with iterative fitters; the problem
        is linear and is solved directly.
    """

    def __init__(self, a0: float = 0.5, b0: float = 5.0):
        self.a0 = a0
        self.b0 = b0

    def fit(self, X, y):
        Re = check_reynolds(X)
        eps = np.asarray(y, dtype=float).ravel()
        if eps.shape != Re.shape:
            raise ValueError("X and y have inconsistent lengths")
        res = stats.fit_dissipation(np.column_stack([Re, eps]), self.a0, self.b0)
        self.a_, self.b_ = res.a, res.b
        self.rms_residual_ = res.rms_residual
        self.n_features_in_ = 1
        return self

    def predict(self, X):
        check_is_fitted(self, ("a_", "b_"))
        return self.a_ + self.b_ / check_reynolds(X)


class ChannelFlowSimulation(BaseEstimator):
    """One run of the channel-past-obstacle benchmark.

    Parameters mirror the run configuration; ``fit(mesh)`` integrates to
    ``t_end`` and stores ``series_``, ``state_``, ``audit_``, ``eps_avg_``,
    ``scales_`` and ``bound_``.
    """

    def __init__(self, Re: float = 100.0, beta: float = 10.0, mixing: str = "l1",
                 dt: float = 0.01, t_end: float = 50.0, burn_in: float = 0.2,
                 picard_tol: float = 1e-9, picard_max: int = 50,
                 linear_tol: float = 1e-10, mesh_h: float = 0.15, refine: float = 1.5):
        self.Re = Re
        self.beta = beta
        self.mixing = mixing
        self.dt = dt
        self.t_end = t_end
        self.burn_in = burn_in
        self.picard_tol = picard_tol
        self.picard_max = picard_max
        self.linear_tol = linear_tol
        self.mesh_h = mesh_h
        self.refine = refine

    def _config(self) -> SolverConfig:
        return SolverConfig(dt=self.dt, t_end=self.t_end, picard_tol=self.picard_tol,
                            picard_max=self.picard_max, linear_tol=self.linear_tol)

    def fit(self, X: Mesh | None = None, y=None):
        mesh = X if X is not None else generate_channel_mesh(
            target_h=self.mesh_h, refine_factor=self.refine)
        params = ModelParams.from_reynolds(self.Re, self.beta, Mixing.parse(self.mixing))
        problem = FlowProblem(mesh, params)
        result = run(problem, self._config())
        self.problem_ = problem
        self.series_ = result.series
        self.state_ = result.state
        self.audit_ = result.audit
        self.max_picard_ = result.max_picard
        avg = stats.time_average(result.series, self.burn_in)
        self.eps_avg_ = avg.eps
        self.scales_ = stats.compute_scales(problem.space, None, avg.usq, params.nu)
        self.ell_max_, self.ell_0_ = params.ell_bounds(problem.space)
        self.bound_ = stats.dissipation_bound(self.scales_.U, self.scales_.L, self.scales_.Re,
                                          self.ell_max_, self.eps_avg_)
        self.max_ke_ratio_ = max(result.series.ke) / result.series.ke[0]
        return self

    def transform(self, X, mesh: Mesh | None = None):
        """Time-averaged dissipation for each Reynolds number in ``X``."""
        Re = check_unique(check_reynolds(X))
        out = np.empty(len(Re))
        for i, r in enumerate(Re):
            out[i] = clone(self).set_params(Re=float(r)).fit(mesh).eps_avg_
        return out[:, None]
