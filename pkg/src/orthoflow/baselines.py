"""Reference methods: QR-retraction gradient descent and a dense eigensolver."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.sparse as sp

from .flow import FlowConfig, FlowResult, StepOutcome, _accepts, _finite_energy, drive, seed_dt
from .manifold import (
    Quadrature,
    ShapeError,
    cholesky_qr,
    gram,
    spectrum_bounds,
)
from .models import EnergyModel

DENSE_EIG_LIMIT = 2048


@dataclass
class RetractionStepOutcome:
    U_next: np.ndarray
    U_tilde: np.ndarray
    tilde_spectrum: tuple[float, float]
    energy_after: float
    direction_norm2: float  # ||<D^T D>||_2


def retraction_step(model: EnergyModel, U: np.ndarray, dt: float, *, grad: np.ndarray | None = None) -> RetractionStepOutcome:
    """Projected gradient step ``U + dt D`` followed by a weighted QR retraction."""
    w = model.weights
    G = model.gradient(U) if grad is None else grad
    D = -(G - U @ gram(U, G, w))
    D = D - U @ gram(U, D, w)
    U_tilde = U + dt * D
    spec = spectrum_bounds(gram(U_tilde, U_tilde, w))
    U_next = cholesky_qr(U_tilde, w) if dt != 0 else U.copy()
    dd = float(np.linalg.norm(gram(D, D, w), 2))
    return RetractionStepOutcome(U_next, U_tilde, spec, _finite_energy(model, U_next), dd)


def _retraction_stepper(model, U, dt, grad=None, energy=None):
    r = retraction_step(model, U, dt, grad=grad)
    e0 = energy if energy is not None else _finite_energy(model, U)
    return StepOutcome(r.U_next, r.U_tilde, 0, np.nan, r.tilde_spectrum, e0, r.energy_after, _accepts(e0, r.energy_after))


def run_retraction(model: EnergyModel, U0: np.ndarray, config: FlowConfig, seed: int = 0) -> FlowResult:
    """Retraction descent under the same stopping rule and dt control as :func:`run_flow`.

    The ``half_spec_*`` trace columns carry the pre-retraction spectrum.
    """
    return drive(model, U0, config, _retraction_stepper, seed_dt(model, U0, config, seed))


def dense_ground_space(operator, quadrature: Quadrature, n_orb: int) -> tuple[np.ndarray, np.ndarray]:
    """Lowest ``n_orb`` eigenpairs of a symmetric operator, weighted-orthonormal.

    Solves ``A v = lam v`` for ``A`` self-adjoint in the weighted inner
    product by symmetrizing with ``W^{1/2}``.
    """
    w = quadrature.weights
    n = w.size
    if n > DENSE_EIG_LIMIT:
        raise ShapeError(f"dense eigensolver limited to n_grid <= {DENSE_EIG_LIMIT}")
    A = operator.toarray() if sp.issparse(operator) else np.asarray(operator, dtype=float)
    if A.shape != (n, n):
        raise ShapeError("operator size does not match the quadrature")
    r = np.sqrt(w)
    S = r[:, None] * A / r[None, :]
    S = 0.5 * (S + S.T)
    try:
        lam, Y = scipy.linalg.eigh(S, subset_by_index=[0, n_orb - 1])
    except scipy.linalg.LinAlgError as exc:  # pragma: no cover
        raise RuntimeError("dense eigensolver failed") from exc
    V = Y / r[:, None]
    # deterministic signs: largest-magnitude entry positive
    idx = np.argmax(np.abs(V), axis=0)
    V = V * np.sign(V[idx, np.arange(n_orb)])
    return lam, V
