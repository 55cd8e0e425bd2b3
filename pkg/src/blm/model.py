"""Model parameters, mixing-length laws and the benchmark inflow profile."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

KAPPA = 0.41          # von Karman constant in the wall law
CAP_FACTOR = 0.2      # mixing length saturates at KAPPA * CAP_FACTOR * Re^(-1/2)


def mixing_length_l1(wall_dist, Re: float):
    """Wall-distance mixing length capped at ``0.41 * 0.2 * Re**-0.5``.

    Works on scalars and arrays.
    """
    if not Re > 0:
        raise ValueError(f"Re must be positive, got {Re}")
    d = np.asarray(wall_dist, dtype=float)
    if np.any(d < 0):
        raise ValueError("wall distance must be nonnegative")
    cutoff = CAP_FACTOR * Re ** -0.5
    out = np.where(d < cutoff, KAPPA * d, KAPPA * cutoff)
    return out if out.ndim else float(out)


def mixing_length_l2(h):
    """Mesh-dependent mixing length ``h**(2/3)``."""
    h = np.asarray(h, dtype=float)
    if np.any(h <= 0):
        raise ValueError("mesh width must be positive")
    out = np.cbrt(h) ** 2
    return out if out.ndim else float(out)


def inflow_profile(y):
    """Parabolic inflow ``(4 y (1 - y), 0)`` on the unit-height inlet."""
    y = np.asarray(y, dtype=float)
    if np.any((y < 0) | (y > 1)):
        raise ValueError("inflow profile is defined for 0 <= y <= 1")
    u1 = 4.0 * y * (1.0 - y)
    if u1.ndim == 0:
        return float(u1), 0.0
    return u1, np.zeros_like(u1)


def reynolds_to_viscosity(Re: float, U_ref: float = 1.0, H_ref: float = 1.0) -> float:
    """Kinematic viscosity for a nominal Reynolds number.

    The reference velocity is the inflow peak and the reference length the
    channel height, both 1 for the benchmark, so ``nu = 1 / Re``.
    """
    if not Re > 0:
        raise ValueError(f"Re must be positive, got {Re}")
    return U_ref * H_ref / Re


@dataclass(frozen=True)
class Mixing:
    """Mixing-length law: ``"l1"``, ``"l2"`` or ``"const"`` with a value."""

    kind: str = "l1"
    value: float = 0.0

    def __post_init__(self):
        if self.kind not in ("l1", "l2", "const"):
            raise ValueError(f"unknown mixing-length kind {self.kind!r}")
        if self.kind == "const" and not (self.value >= 0 and np.isfinite(self.value)):
            raise ValueError("constant mixing length must be finite and >= 0")

    @classmethod
    def parse(cls, text: str) -> "Mixing":
        """Parse ``l1``, ``l2`` or ``const:<value>``."""
        text = text.strip()
        if text in ("l1", "l2"):
            return cls(text)
        if text.startswith("const:"):
            try:
                return cls("const", float(text[len("const:"):]))
            except ValueError:
                raise ValueError(f"bad constant mixing length {text!r}") from None
        raise ValueError(f"mixing must be 'l1', 'l2' or 'const:<value>', got {text!r}")

    def __str__(self):
        return f"const:{self.value!r}" if self.kind == "const" else self.kind


@dataclass(frozen=True)
class ModelParams:
    """Viscosity, backscatter coefficient and mixing-length law.

    ``Re`` is the nominal Reynolds number entering the l1 cap. When only
    ``Re`` is known use :meth:`from_reynolds`.
    """

    nu: float
    beta: float = 10.0
    mixing: Mixing = Mixing("l1")
    Re: float | None = None

    def __post_init__(self):
        if not self.nu > 0:
            raise ValueError(f"nu must be positive, got {self.nu}")
        if not self.beta >= 0:
            raise ValueError(f"beta must be nonnegative, got {self.beta}")
        if isinstance(self.mixing, str):
            object.__setattr__(self, "mixing", Mixing.parse(self.mixing))
        if self.Re is not None and not self.Re > 0:
            raise ValueError(f"Re must be positive, got {self.Re}")
        if self.mixing.kind == "l1" and self.Re is None:
            raise ValueError("the l1 mixing length needs a Reynolds number")

    @classmethod
    def from_reynolds(cls, Re: float, beta: float = 10.0, mixing="l1") -> "ModelParams":
        return cls(reynolds_to_viscosity(Re), beta, mixing, Re)

    def mixing_length_at_qp(self, space) -> np.ndarray:
        """Mixing length at every quadrature point of ``space``."""
        mesh = space.mesh
        if self.mixing.kind == "const":
            return np.full(space.n_qp, self.mixing.value)
        if self.mixing.kind == "l2":
            return np.repeat(mixing_length_l2(mesh.elem_width), space.nq)
        from .mesh import compute_wall_distance
        return mixing_length_l1(compute_wall_distance(mesh, space.qpoints), self.Re)

    def ell_bounds(self, space) -> tuple[float, float]:
        """``(ell_max, ell_0)``: sup and inf of the mixing length over quadrature points."""
        ell = self.mixing_length_at_qp(space)
        return float(ell.max()), float(ell.min())
