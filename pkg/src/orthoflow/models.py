"""Discretized energies and their gradients.

All models use doubly occupied orbitals, so ``rho = 2 sum_i u_i^2`` and the
gradient of every term carries a factor 4 relative to the one-electron
operator: ``grad E(U)[:, i] = 4 (-1/2 Lap + V_ext + V_H + v_xc) u_i``.

Gradients are Riesz representers in the weighted inner product, i.e.
``dE(U)[D] = tr <grad E(U)^T D>``, and are the exact derivatives of the
discrete energies (not discretizations of the continuous gradient).
"""

from __future__ import annotations

import abc
from dataclasses import dataclass, replace

import numpy as np
import scipy.sparse as sp

from .manifold import Quadrature, ShapeError

RHO_MIN = 1e-12

_CX = 0.75 * (3.0 / np.pi) ** (1.0 / 3.0)

# correlation parameters, r_s >= 1 and r_s < 1 branches
_GAMMA, _BETA1, _BETA2 = -0.1423, 1.0529, 0.3334
_A, _B, _C, _D = 0.0311, -0.048, 0.0020, -0.0116


def lda_exchange(rho):
    """Exchange energy per particle and potential, ``(eps_x, v_x)``.

    ``eps_x = -(3/4)(3/pi)^(1/3) rho^(1/3)`` and ``v_x = 4/3 eps_x``. Density is
    clamped at ``RHO_MIN``. Works on scalars and arrays.
    """
    r = np.maximum(rho, RHO_MIN)
    eps = -_CX * np.cbrt(r)
    return eps, (4.0 / 3.0) * eps


def wigner_seitz_radius(rho):
    return np.cbrt(3.0 / (4.0 * np.pi * np.maximum(rho, RHO_MIN)))


def lda_correlation(rho):
    """Perdew-Zunger 1981 correlation, ``(eps_c, v_c)``.

    ``v_c = eps_c - (r_s / 3) d eps_c / d r_s``, using the analytic derivative
    of whichever branch is active. The parametrization is slightly
    discontinuous at ``r_s = 1``; this is kept as is.
    """
    rs = wigner_seitz_radius(rho)
    scalar = np.ndim(rs) == 0
    rs = np.atleast_1d(rs).astype(float)
    # both branches are cheap; evaluate everywhere and select
    sq = np.sqrt(rs)
    den = 1.0 + _BETA1 * sq + _BETA2 * rs
    lnx = np.log(rs)
    hi = rs >= 1.0
    eps = np.where(hi, _GAMMA / den, _A * lnx + _B + _C * rs * lnx + _D * rs)
    deps = np.where(hi, -_GAMMA * (0.5 * _BETA1 / sq + _BETA2) / den**2, _A / rs + _C * (lnx + 1.0) + _D)

    v = eps - rs * deps / 3.0
    if scalar:
        return float(eps[0]), float(v[0])
    return eps, v


def xc_energy_density(rho, exchange: bool = True, correlation: bool = True):
    """Return ``(e, v)`` with ``e = rho * eps_xc(rho)`` and ``v = de/drho``.

    Below ``RHO_MIN`` the energy per particle is frozen at its floor value so
    that ``v`` stays the exact derivative of ``e``.
    """
    rho = np.asarray(rho, dtype=float)
    eps = np.zeros_like(rho)
    v = np.zeros_like(rho)
    if exchange:
        ex, vx = lda_exchange(rho)
        eps = eps + ex
        v = v + vx
    if correlation:
        ec, vc = lda_correlation(rho)
        eps = eps + ec
        v = v + vc
    floor = rho < RHO_MIN
    v = np.where(floor, eps, v)
    return rho * eps, v


def density(U: np.ndarray) -> np.ndarray:
    return 2.0 * np.einsum("gi,gi->g", U, U)


class EnergyModel(abc.ABC):
    """An energy ``E(U)`` on ``(n_grid, n_orb)`` orbital matrices."""

    n_orb: int
    quadrature: Quadrature

    @property
    def weights(self) -> np.ndarray:
        return self.quadrature.weights

    @property
    def dimension(self) -> tuple[int, int]:
        return len(self.quadrature), self.n_orb

    def _check(self, U: np.ndarray) -> None:
        if U.shape != self.dimension:
            raise ShapeError(f"expected orbitals of shape {self.dimension}, got {U.shape}")

    @abc.abstractmethod
    def energy(self, U: np.ndarray) -> float: ...

    @abc.abstractmethod
    def gradient(self, U: np.ndarray) -> np.ndarray: ...

    def scaled(self, factor: float) -> "EnergyModel":
        return ScaledModel(self, factor)


class ScaledModel(EnergyModel):
    """``factor * E``; used to check homogeneity of estimators."""

    def __init__(self, inner: EnergyModel, factor: float):
        self.inner = inner
        self.factor = float(factor)
        self.n_orb = inner.n_orb
        self.quadrature = inner.quadrature

    def energy(self, U):
        return self.factor * self.inner.energy(U)

    def gradient(self, U):
        return self.factor * self.inner.gradient(U)


class QuadraticModel(EnergyModel):
    """``E(U) = 2 sum_i <u_i, A u_i>`` for a fixed operator ``A``.

    ``A`` (dense or sparse) must be self-adjoint in the weighted inner
    product; for uniform weights that means symmetric.
    """

    def __init__(self, operator, quadrature: Quadrature, n_orb: int):
        self.operator = operator
        self.quadrature = quadrature
        self.n_orb = int(n_orb)
        if operator.shape != (len(quadrature), len(quadrature)):
            raise ShapeError("operator size does not match the quadrature")

    def energy(self, U):
        self._check(U)
        return float(2.0 * np.sum(self.weights[:, None] * U * (self.operator @ U)))

    def gradient(self, U):
        self._check(U)
        return 4.0 * np.asarray(self.operator @ U)


@dataclass(frozen=True)
class Grid1D:
    """Uniform interior grid with zero Dirichlet ghost points at both ends.

    Interior node ``g`` sits at ``origin + (g + 1) * spacing``; the domain has
    length ``(n_points + 1) * spacing``.
    """

    n_points: int
    spacing: float
    origin: float = 0.0

    def __post_init__(self):
        if self.n_points < 8:
            raise ValueError("a 1-D grid needs at least 8 interior points")
        if not self.spacing > 0:
            raise ValueError("grid spacing must be positive")

    @classmethod
    def centered(cls, n_points: int, length: float) -> "Grid1D":
        h = length / (n_points + 1)
        return cls(n_points, h, -0.5 * length)

    @property
    def length(self) -> float:
        return (self.n_points + 1) * self.spacing

    @property
    def points(self) -> np.ndarray:
        return self.origin + self.spacing * np.arange(1, self.n_points + 1)

    @property
    def quadrature(self) -> Quadrature:
        return Quadrature.uniform(self.n_points, self.spacing)

    def contains(self, x: float) -> bool:
        return self.origin < x < self.origin + self.length

    def laplacian(self) -> sp.csr_matrix:
        n, h = self.n_points, self.spacing
        return sp.diags([np.ones(n - 1), -2.0 * np.ones(n), np.ones(n - 1)], [-1, 0, 1], format="csr") / h**2


@dataclass(frozen=True)
class KohnSham1DSpec:
    grid: Grid1D
    n_orb: int
    nuclei: tuple[tuple[float, float], ...] = ()
    soft_core: float = 1.0
    hartree_soft_core: float = 1.0
    hartree_scale: float = 1.0
    exchange: bool = True
    correlation: bool = True

    def __post_init__(self):
        object.__setattr__(self, "nuclei", tuple((float(z), float(r)) for z, r in self.nuclei))
        if self.n_orb < 1 or self.n_orb > self.grid.n_points:
            raise ValueError(f"n_orb must be in [1, {self.grid.n_points}]")
        if not (self.soft_core > 0 and self.hartree_soft_core > 0):
            raise ValueError("soft-core parameters must be positive")
        for z, r in self.nuclei:
            if not z > 0:
                raise ValueError(f"nuclear charge must be positive, got {z}")
            if not self.grid.contains(r):
                raise ValueError(f"nucleus at {r} lies outside the domain")

    def linear(self) -> "KohnSham1DSpec":
        """Same grid and nuclei with every density-dependent term switched off."""
        return replace(self, hartree_scale=0.0, exchange=False, correlation=False)

    def without_xc(self) -> "KohnSham1DSpec":
        return replace(self, exchange=False, correlation=False)


def external_potential(spec: KohnSham1DSpec) -> np.ndarray:
    x = spec.grid.points
    v = np.zeros_like(x)
    for z, r in spec.nuclei:
        v -= z / np.sqrt((x - r) ** 2 + spec.soft_core**2)
    return v


def hartree_kernel(spec: KohnSham1DSpec) -> np.ndarray:
    x = spec.grid.points
    return 1.0 / np.sqrt((x[:, None] - x[None, :]) ** 2 + spec.hartree_soft_core**2)


def hartree_potential_1d(rho: np.ndarray, spec: KohnSham1DSpec, kernel: np.ndarray | None = None) -> np.ndarray:
    """``V_H(x_g) = sum_g' w_g' rho_g' / sqrt((x_g - x_g')^2 + b^2)``."""
    if kernel is None:
        kernel = hartree_kernel(spec)
    return kernel @ (spec.grid.spacing * np.asarray(rho, dtype=float))


@dataclass
class EnergyTerms:
    kinetic: float
    external: float
    hartree: float
    xc: float

    @property
    def total(self) -> float:
        return self.kinetic + self.external + self.hartree + self.xc


class KohnSham1D(EnergyModel):
    """Soft-Coulomb Kohn-Sham energy on a uniform 1-D grid.

    Kinetic energy is ``h * sum |forward difference|^2`` per orbital (the
    factor 1/2 cancels the occupation 2), which makes ``4 * (-1/2 Lap) U`` its
    exact gradient. Terms are skipped entirely when disabled, so the linear
    configuration is exactly the quadratic model.
    """

    def __init__(self, spec: KohnSham1DSpec):
        self.spec = spec
        self.n_orb = spec.n_orb
        self.quadrature = spec.grid.quadrature
        self.v_ext = external_potential(spec)
        self.lap = spec.grid.laplacian()
        self._kernel = hartree_kernel(spec) if spec.hartree_scale != 0 else None

    @property
    def is_linear(self) -> bool:
        s = self.spec
        return s.hartree_scale == 0 and not s.exchange and not s.correlation

    def hamiltonian(self) -> sp.csr_matrix:
        """One-electron operator ``-1/2 Lap + V_ext`` (the linear model's ``A``)."""
        return (-0.5 * self.lap + sp.diags(self.v_ext)).tocsr()

    def terms(self, U: np.ndarray) -> EnergyTerms:
        self._check(U)
        s, h = self.spec, self.spec.grid.spacing
        pad = np.zeros((1, U.shape[1]))
        du = np.diff(np.vstack([pad, U, pad]), axis=0) / h
        kinetic = h * float(np.sum(du * du))
        rho = density(U)
        external = h * float(self.v_ext @ rho)
        hartree = 0.0
        if self._kernel is not None:
            hartree = 0.5 * s.hartree_scale * h * float(rho @ hartree_potential_1d(rho, s, self._kernel))
        xc = 0.0
        if s.exchange or s.correlation:
            e, _ = xc_energy_density(rho, s.exchange, s.correlation)
            xc = h * float(np.sum(e))
        return EnergyTerms(kinetic, external, hartree, xc)

    def energy(self, U):
        return self.terms(U).total

    def potential(self, U: np.ndarray) -> np.ndarray:
        """Local part of the effective potential, ``V_ext + V_H + v_xc``."""
        s = self.spec
        v = self.v_ext
        if self._kernel is None and not (s.exchange or s.correlation):
            return v
        rho = density(U)
        if self._kernel is not None:
            v = v + s.hartree_scale * hartree_potential_1d(rho, s, self._kernel)
        if s.exchange or s.correlation:
            v = v + xc_energy_density(rho, s.exchange, s.correlation)[1]
        return v

    def gradient(self, U):
        self._check(U)
        return 4.0 * (-0.5 * (self.lap @ U) + self.potential(U)[:, None] * U)


def quadratic_model(spec: KohnSham1DSpec) -> KohnSham1D:
    """Linear eigenvalue model ``-1/2 Lap + V_ext`` on the spec's grid."""
    return KohnSham1D(spec.linear())


def nonlinear_hartree_model(spec: KohnSham1DSpec) -> KohnSham1D:
    """Kinetic + external + Hartree, no exchange-correlation."""
    return KohnSham1D(spec.without_xc())


def kohn_sham_model(spec: KohnSham1DSpec) -> KohnSham1D:
    return KohnSham1D(spec)
