"""Weighted linear algebra on discretized orbital matrices.

Orbitals are stored as real ``(n_grid, n_orb)`` coefficient arrays; the inner
product is the diagonal quadrature rule ``<u, v> = sum_g w[g] u[g] v[g]``.
Every routine here takes the weight vector explicitly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

DENSE_LIMIT = 512


class ShapeError(ValueError):
    pass


class ManifoldError(ValueError):
    """Input is expected to lie on the Stiefel manifold but does not."""


class RankDeficiencyError(ValueError):
    def __init__(self, column: int):
        super().__init__(f"column {column} is linearly dependent on the previous columns")
        self.column = column


class NumericalBreakdown(ArithmeticError):
    """The small core system of a low-rank Cayley solve could not be factored."""

    def __init__(self, s: float, condition: float):
        super().__init__(f"singular Cayley core at s={s!r} (condition estimate {condition:.3e})")
        self.s = s
        self.condition = condition


@dataclass(frozen=True)
class Quadrature:
    weights: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if w.ndim != 1 or w.size == 0:
            raise ShapeError("quadrature weights must be a non-empty vector")
        if not np.all(w > 0):
            raise ValueError("quadrature weights must be positive")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)

    @classmethod
    def uniform(cls, n_points: int, spacing: float) -> "Quadrature":
        return cls(np.full(n_points, float(spacing)))

    def __len__(self) -> int:
        return self.weights.size


def _weights(w) -> np.ndarray:
    if isinstance(w, Quadrature):
        return w.weights
    return np.asarray(w, dtype=float)


def _check(U: np.ndarray, w: np.ndarray, name: str = "U") -> None:
    if U.ndim != 2:
        raise ShapeError(f"{name} must be a 2-D (n_grid, n_orb) array, got shape {U.shape}")
    if U.shape[0] != w.shape[0]:
        raise ShapeError(f"{name} has {U.shape[0]} grid rows but the quadrature has {w.shape[0]}")


def gram(U: np.ndarray, V: np.ndarray, w) -> np.ndarray:
    """Inner product matrix ``<U^T V>`` of shape ``(n_U, n_V)``."""
    w = _weights(w)
    _check(U, w, "U")
    _check(V, w, "V")
    return U.T @ (w[:, None] * V)


def trace_norm(U: np.ndarray, w) -> float:
    """``|||U||| = sqrt(tr <U^T U>)``."""
    w = _weights(w)
    return float(np.sqrt(np.sum(w[:, None] * U * U)))


def orth_error(U: np.ndarray, w) -> float:
    """Frobenius distance of ``<U^T U>`` from the identity."""
    M = gram(U, U, w)
    return float(np.linalg.norm(M - np.eye(M.shape[0])))


@dataclass(frozen=True)
class SkewGenerator:
    """The low-rank skew operator ``A = G U^T - U G^T`` in factored form.

    ``gradient`` is ``G`` (usually the energy gradient at ``base``); the
    ``n_grid x n_grid`` operator itself is never formed.
    """

    gradient: np.ndarray
    base: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        w = _weights(self.weights)
        object.__setattr__(self, "weights", w)
        _check(self.base, w, "base")
        if self.gradient.shape != self.base.shape:
            raise ShapeError(
                f"gradient shape {self.gradient.shape} does not match base shape {self.base.shape}"
            )

    def apply(self, V: np.ndarray) -> np.ndarray:
        return skew_apply(self, V)

    def dense(self) -> np.ndarray:
        """Matrix of the operator acting on coefficient vectors (test oracle only)."""
        G, U, w = self.gradient, self.base, self.weights
        return G @ (U.T * w) - U @ (G.T * w)


def skew_apply(A: SkewGenerator, V: np.ndarray) -> np.ndarray:
    w = A.weights
    _check(V, w, "V")
    G, U = A.gradient, A.base
    return G @ gram(U, V, w) - U @ gram(G, V, w)


def grassmann_gradient(G: np.ndarray, U: np.ndarray, w) -> np.ndarray:
    """Extended Grassmann gradient ``G <U^T U> - U <G^T U>``.

    Defined for any ``U``, not only orthonormal frames, so that the flow it
    drives keeps ``<U^T U>`` constant.
    """
    w = _weights(w)
    if G.shape != U.shape:
        raise ShapeError(f"gradient shape {G.shape} does not match U shape {U.shape}")
    return G @ gram(U, U, w) - U @ gram(G, U, w)


def cayley_solve_dense(A: SkewGenerator, s: float, rhs: np.ndarray) -> np.ndarray:
    """``(I + s A)^{-1} rhs`` by materializing ``A``. Oracle for small grids."""
    n = A.base.shape[0]
    _check(rhs, A.weights, "rhs")
    if n > DENSE_LIMIT:
        raise ShapeError(f"dense Cayley solve is limited to n_grid <= {DENSE_LIMIT}, got {n}")
    if s == 0:
        return rhs.copy()
    M = np.eye(n) + s * A.dense()
    try:
        return scipy.linalg.solve(M, rhs)
    except scipy.linalg.LinAlgError as exc:  # pragma: no cover - I + sA is never singular
        raise RuntimeError("dense Cayley solve failed") from exc


def cayley_solve_smw(A: SkewGenerator, s: float, rhs: np.ndarray) -> np.ndarray:
    """``(I + s A)^{-1} rhs`` through the Sherman-Morrison-Woodbury identity.

    With ``A V = [G, U] [<U^T V>; -<G^T V>]`` the solve reduces to a
    ``2N x 2N`` core system::

        X = rhs - s [G, U] (I + s K)^{-1} [<U^T rhs>; -<G^T rhs>]
        K = [[ <U^T G>,  <U^T U>],
             [-<G^T G>, -<G^T U>]]

    Cost is O(n_grid N^2 + N^3). No symmetry of ``<G^T U>`` is assumed.
    """
    w = A.weights
    _check(rhs, w, "rhs")
    if s == 0:
        return rhs.copy()
    G, U = A.gradient, A.base
    n = U.shape[1]
    GU = np.hstack([G, U])
    # one pass over the grid: rows are <G^T .> then <U^T .>
    with np.errstate(invalid="ignore", over="ignore"):
        M = GU.T @ (w[:, None] * np.hstack([GU, rhs]))
    GG, GUm, UU = M[:n, :n], M[:n, n : 2 * n], M[n:, n : 2 * n]
    core = np.empty((2 * n, 2 * n))
    core[:n, :n] = GUm.T
    core[:n, n:] = UU
    core[n:, :n] = -GG
    core[n:, n:] = -GUm
    core *= s
    core[np.diag_indices(2 * n)] += 1.0
    b = np.vstack([M[n:, 2 * n :], -M[:n, 2 * n :]])
    if not np.all(np.isfinite(core)):
        raise NumericalBreakdown(s, float("inf"))
    try:
        y = np.linalg.solve(core, b)
    except np.linalg.LinAlgError:
        raise NumericalBreakdown(s, float(np.linalg.cond(core))) from None
    return rhs - s * (GU @ y)


def spectrum_bounds(M: np.ndarray) -> tuple[float, float]:
    """Smallest and largest eigenvalue of the symmetric part of ``M``."""
    S = 0.5 * (M + M.T)
    lam = np.linalg.eigvalsh(S)
    return float(lam[0]), float(lam[-1])


def _require_on_manifold(U: np.ndarray, w, tol: float, name: str) -> None:
    err = orth_error(U, w)
    if not err <= tol:
        raise ManifoldError(f"{name} is off the Stiefel manifold (orthogonality error {err:.3e})")


def procrustes_rotation(U: np.ndarray, V: np.ndarray, w) -> np.ndarray:
    """Orthogonal ``P`` minimizing ``|||U - V P|||``: polar factor of ``<V^T U>``."""
    W, _, Zt = np.linalg.svd(gram(V, U, w))
    return W @ Zt


def subspace_distance(U: np.ndarray, V: np.ndarray, w, tol: float = 1e-8) -> float:
    """Distance between the subspaces spanned by two orthonormal frames.

    ``min_P |||U - V P|||`` over orthogonal ``P``, attained at the Procrustes
    solution.
    """
    w = _weights(w)
    if U.shape != V.shape:
        raise ShapeError(f"shapes differ: {U.shape} vs {V.shape}")
    _require_on_manifold(U, w, tol, "U")
    _require_on_manifold(V, w, tol, "V")
    # |||U - VP|||^2 = 2N - 2 tr(P^T <V^T U>) = 2N - 2 * (nuclear norm); the
    # direct difference is used since it does not cancel catastrophically.
    P = procrustes_rotation(U, V, w)
    return trace_norm(U - V @ P, w)


def orthonormalize(U: np.ndarray, w, rtol: float = 1e-10) -> np.ndarray:
    """Weighted modified Gram-Schmidt with one reorthogonalization pass.

    Each column is made to have its largest-magnitude entry positive.
    Raises :class:`RankDeficiencyError` if a column collapses below
    ``rtol`` times its original norm.
    """
    w = _weights(w)
    _check(U, w, "U")
    Q = np.array(U, dtype=float, copy=True)
    n = Q.shape[1]
    if n > Q.shape[0]:
        raise ShapeError(f"cannot orthonormalize {n} columns in a {Q.shape[0]}-dimensional space")
    for j in range(n):
        q = Q[:, j]
        norm0 = np.sqrt(np.sum(w * q * q))
        for _ in range(2):
            for i in range(j):
                q = q - np.sum(w * Q[:, i] * q) * Q[:, i]
        norm = np.sqrt(np.sum(w * q * q))
        if not norm > rtol * norm0 or norm0 == 0:
            raise RankDeficiencyError(j)
        q = q / norm
        if q[np.argmax(np.abs(q))] < 0:
            q = -q
        Q[:, j] = q
    return Q


def cholesky_qr(U: np.ndarray, w) -> np.ndarray:
    """Weighted QR factor ``U R^{-1}`` (positive diagonal R), applied twice."""
    Q = U
    for _ in range(2):
        M = gram(Q, Q, w)
        try:
            R = scipy.linalg.cholesky(0.5 * (M + M.T), lower=False)
        except scipy.linalg.LinAlgError:
            bad = int(np.argmin(np.diag(M)))
            raise RankDeficiencyError(bad) from None
        Q = scipy.linalg.solve_triangular(R, Q.T, trans="T", lower=False).T
    return Q
