"""Time stepping for the orthogonality-preserving gradient flow.

Both schemes solve the half step ``U_h = (I + dt/2 A_{U_h})^{-1} U_n`` by
fixed-point iteration and finish with ``U_{n+1} = 2 U_h - U_n``. The
orthogonality-preserving iteration (OPI) takes a fixed number ``p`` of inner
Cayley solves; the midpoint scheme iterates until the update stalls.
Either way ``U_{n+1}`` is an exact Cayley rotation of ``U_n`` and stays on the
Stiefel manifold.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

from .manifold import (
    NumericalBreakdown,
    SkewGenerator,
    cayley_solve_smw,
    cholesky_qr,
    gram,
    grassmann_gradient,
    orth_error,
    orthonormalize,
    spectrum_bounds,
    trace_norm,
)
from .models import EnergyModel

log = logging.getLogger(__name__)

ENERGY_RTOL = 1e-12
GROW, SHRINK, GROW_AFTER = 1.2, 0.5, 5

DT_SEEDS = ("given", "rate", "monotone")

TRACE_FIELDS = (
    "iter",
    "sim_time",
    "energy",
    "grad_norm",
    "orth_error",
    "half_spec_min",
    "half_spec_max",
    "dt",
    "inner_iters",
)


class ModelError(ArithmeticError):
    """The energy model produced a non-finite value."""


@dataclass(frozen=True)
class FlowConfig:
    dt: float = 0.01
    dt_policy: str = "adaptive"
    dt_min: float = 1e-10
    dt_max: float = 1.0
    epsilon: float = 1e-8
    max_outer: int = 10_000
    inner_mode: str = "fixed_count"
    p: int = 2
    inner_tol: float = 1e-12
    max_inner: int = 100
    dt_seed: str = "given"
    rate_probe: bool = False

    def __post_init__(self):
        if self.dt_policy not in ("fixed", "adaptive"):
            raise ValueError(f"dt_policy must be 'fixed' or 'adaptive', got {self.dt_policy!r}")
        if self.inner_mode not in ("fixed_count", "to_tolerance"):
            raise ValueError(f"inner_mode must be 'fixed_count' or 'to_tolerance', got {self.inner_mode!r}")
        if self.dt_seed not in DT_SEEDS:
            raise ValueError(f"dt_seed must be one of {DT_SEEDS}, got {self.dt_seed!r}")
        if not 0 < self.dt_min <= self.dt <= self.dt_max:
            raise ValueError("need 0 < dt_min <= dt <= dt_max")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if self.p < 1 or self.max_inner < 1 or self.max_outer < 0:
            raise ValueError("p and max_inner must be >= 1, max_outer >= 0")
        if not self.inner_tol > 0:
            raise ValueError("inner_tol must be positive")


@dataclass
class StepOutcome:
    U_next: np.ndarray
    U_half: np.ndarray
    inner_iters_used: int
    inner_residual: float
    half_spectrum: tuple[float, float]
    energy_before: float
    energy_after: float
    accepted: bool
    reason: str = ""


@dataclass(frozen=True)
class TraceRecord:
    iter: int
    sim_time: float
    energy: float
    grad_norm: float
    orth_error: float
    half_spec_min: float
    half_spec_max: float
    dt: float
    inner_iters: int


@dataclass
class FlowResult:
    final: np.ndarray
    trace: list[TraceRecord]
    status: str
    rejections: int = 0
    dt_initial: float = float("nan")
    rate: tuple[float, float] | None = None

    def __iter__(self):
        return iter((self.final, self.trace, self.status))


def _finite_energy(model: EnergyModel, U: np.ndarray) -> float:
    E = model.energy(U)
    if not math.isfinite(E):
        raise ModelError(f"energy is not finite ({E})")
    return E


def _accepts(e_before: float, e_after: float) -> bool:
    return e_after <= e_before + ENERGY_RTOL * abs(e_before)


def _identity_step(model, U, energy):
    if energy is None:
        energy = _finite_energy(model, U)
    return StepOutcome(U.copy(), U.copy(), 0, 0.0, (1.0, 1.0), energy, energy, True)


def _half_step_iteration(model, U, dt, grad, max_iter, tol):
    """Run ``U^(k) = (I + dt/2 A_{U^(k-1)})^{-1} U`` from ``U^(0) = U``.

    Stops after ``max_iter`` solves, or earlier once
    ``|||U^(k) - U^(k-1)||| <= tol * dt`` when ``tol`` is given.
    Returns ``(U_half, iterations, converged, spectrum)``.
    """
    w = model.weights
    s = 0.5 * dt
    Uh = U
    G = grad if grad is not None else model.gradient(U)
    lo, hi = math.inf, -math.inf
    converged = tol is None
    k = 0
    while k < max_iter:
        if k > 0:
            G = model.gradient(Uh)
        new = cayley_solve_smw(SkewGenerator(G, Uh, w), s, U)
        k += 1
        a, b = spectrum_bounds(gram(new, new, w))
        lo, hi = min(lo, a), max(hi, b)
        change = trace_norm(new - Uh, w)
        Uh = new
        if tol is not None and change <= tol * dt:
            converged = True
            break
    return Uh, k, converged, (lo, hi)


def implicit_residual(model: EnergyModel, U: np.ndarray, U_half: np.ndarray, dt: float) -> float:
    """``|||(U_h - U)/(dt/2) + A_{U_h} U_h|||``: zero at the exact midpoint."""
    w = model.weights
    flow = grassmann_gradient(model.gradient(U_half), U_half, w)
    return trace_norm((U_half - U) / (0.5 * dt) + flow, w)


def _finish(model, U, Uh, k, residual, spec, energy):
    if energy is None:
        energy = _finite_energy(model, U)
    U_next = 2.0 * Uh - U
    e_after = _finite_energy(model, U_next)
    return StepOutcome(U_next, Uh, k, residual, spec, energy, e_after, _accepts(energy, e_after))


def step_opi(
    model: EnergyModel,
    U: np.ndarray,
    dt: float,
    p: int = 2,
    *,
    grad: np.ndarray | None = None,
    energy: float | None = None,
) -> StepOutcome:
    """One step of the orthogonality-preserving iteration with ``p`` inner solves.

    ``grad`` and ``energy`` may be passed in if already known at ``U``.
    """
    if p < 1:
        raise ValueError("p must be >= 1")
    if dt == 0:
        return _identity_step(model, U, energy)
    try:
        Uh, k, _, spec = _half_step_iteration(model, U, dt, grad, p, None)
    except NumericalBreakdown as exc:
        e = energy if energy is not None else _finite_energy(model, U)
        return StepOutcome(U, U, 0, math.inf, (math.nan, math.nan), e, math.nan, False, str(exc))
    return _finish(model, U, Uh, k, math.nan, spec, energy)


def step_midpoint(
    model: EnergyModel,
    U: np.ndarray,
    dt: float,
    tol: float = 1e-12,
    max_inner: int = 100,
    *,
    grad: np.ndarray | None = None,
    energy: float | None = None,
) -> StepOutcome:
    """One step of the implicit midpoint scheme, inner iteration run to ``tol``.

    A step whose inner iteration fails to settle within ``max_inner`` solves
    is returned with ``accepted=False``; the caller is expected to shrink dt.
    """
    if dt == 0:
        return _identity_step(model, U, energy)
    try:
        Uh, k, converged, spec = _half_step_iteration(model, U, dt, grad, max_inner, tol)
    except NumericalBreakdown as exc:
        e = energy if energy is not None else _finite_energy(model, U)
        return StepOutcome(U, U, 0, math.inf, (math.nan, math.nan), e, math.nan, False, str(exc))
    residual = implicit_residual(model, U, Uh, dt)
    out = _finish(model, U, Uh, k, residual, spec, energy)
    if not converged:
        out.accepted = False
        out.reason = f"inner iteration did not converge in {max_inner} solves"
    return out


Stepper = Callable[..., StepOutcome]


def stepper_for(config: FlowConfig) -> Stepper:
    if config.inner_mode == "fixed_count":
        return lambda model, U, dt, **kw: step_opi(model, U, dt, config.p, **kw)
    return lambda model, U, dt, **kw: step_midpoint(model, U, dt, config.inner_tol, config.max_inner, **kw)


def drive(
    model: EnergyModel,
    U0: np.ndarray,
    config: FlowConfig,
    step: Stepper,
    dt0: float | None = None,
) -> FlowResult:
    """Outer loop shared by every scheme: stopping test, dt control, tracing."""
    w = model.weights
    U = orthonormalize(U0, w)
    dt = config.dt if dt0 is None else dt0
    G = model.gradient(U)
    gnorm = trace_norm(grassmann_gradient(G, U, w), w)
    E = _finite_energy(model, U)
    lo, hi = spectrum_bounds(gram(U, U, w))
    trace = [TraceRecord(0, 0.0, E, gnorm, orth_error(U, w), lo, hi, 0.0, 0)]

    status = "converged"
    t = 0.0
    n = 0
    streak = 0
    rejections = 0
    dt_initial = dt
    ceiling = config.dt_max
    while gnorm > config.epsilon:
        if n >= config.max_outer:
            status = "max-iterations"
            break
        out = step(model, U, dt, grad=G, energy=E)
        if not out.accepted:
            rejections += 1
            log.debug("step %d rejected at dt=%g: %s", n + 1, dt, out.reason or "energy increase")
            if config.dt_policy == "fixed" or dt <= config.dt_min:
                status = "stalled"
                break
            # growth may not return to a step size that already failed
            ceiling = max(dt * SHRINK, config.dt_min)
            dt = ceiling
            streak = 0
            continue
        n += 1
        t += dt
        U, E = out.U_next, out.energy_after
        G = model.gradient(U)
        gnorm = trace_norm(grassmann_gradient(G, U, w), w)
        trace.append(
            TraceRecord(n, t, E, gnorm, orth_error(U, w), *out.half_spectrum, dt, out.inner_iters_used)
        )
        streak += 1
        if config.dt_policy == "adaptive" and streak >= GROW_AFTER:
            dt = min(dt * GROW, ceiling)
            streak = 0

    result = FlowResult(U, trace, status, rejections, dt_initial)
    if config.rate_probe:
        try:
            result.rate = estimate_rate(trace)
        except ValueError:
            result.rate = None
    return result


def seed_dt(model: EnergyModel, U0: np.ndarray, config: FlowConfig, seed: int = 0) -> float:
    """Initial step size.

    ``rate`` uses ``2 / L`` (the rate-optimal step for a locally quadratic
    energy), ``monotone`` the more cautious ``1 / (2 N L)`` under which energy
    decrease is guaranteed; ``L`` comes from :func:`estimate_lipschitz` at
    ``U0``. Both are clipped to ``[dt_min, dt_max]``.
    """
    if config.dt_seed == "given":
        return config.dt
    U = orthonormalize(U0, model.weights)
    L = estimate_lipschitz(model, U, n_samples=30, radius=1e-4, seed=seed)
    dt = 2.0 / L if config.dt_seed == "rate" else 1.0 / (2.0 * U.shape[1] * L)
    return float(np.clip(dt, config.dt_min, config.dt_max))


def run_flow(model: EnergyModel, U0: np.ndarray, config: FlowConfig, seed: int = 0) -> FlowResult:
    """Integrate the flow until ``|||grad_G E(U_n)||| <= epsilon``.

    ``inner_mode='fixed_count'`` runs the orthogonality-preserving iteration
    with ``p`` inner solves; ``'to_tolerance'`` runs the midpoint scheme.
    Unpacks as ``(final, trace, status)``; status is one of ``converged``,
    ``max-iterations`` or ``stalled``.
    """
    return drive(model, U0, config, stepper_for(config), seed_dt(model, U0, config, seed))


def estimate_rate(trace: Sequence[TraceRecord]) -> tuple[float, float]:
    """Per-iteration contraction of the gradient norm over the last half of a trace.

    Returns ``(rho_hat, r_squared)`` from a least-squares fit of
    ``log(grad_norm)`` against the iteration index.
    """
    recs = [r for r in trace if r.grad_norm > 0]
    if len(recs) < 20:
        raise ValueError(f"need at least 20 records with positive gradient norm, got {len(recs)}")
    tail = recs[len(recs) // 2 :]
    x = np.array([r.iter for r in tail], dtype=float)
    y = np.log([r.grad_norm for r in tail])
    slope, intercept = np.polyfit(x, y, 1)
    ss_res = float(np.sum((y - (slope * x + intercept)) ** 2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return float(np.exp(slope)), r2


def _tangent(U, D, w):
    return D - U @ gram(U, D, w)


def estimate_lipschitz(
    model: EnergyModel,
    U: np.ndarray,
    n_samples: int = 20,
    radius: float = 1e-3,
    seed: int = 0,
) -> float:
    """Sampled lower bound on the Lipschitz constant of ``grad_G E`` near ``U``.

    Each sample is a pair of orthonormal frames ``R(U +/- radius D)`` and
    contributes ``|||grad_G E(V1) - grad_G E(V2)||| / |||V1 - V2|||``. The
    first direction ``D`` is random; later ones follow the previous gradient
    difference (a power iteration), which pushes the estimate towards the
    local worst case.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    w = model.weights
    rng = np.random.default_rng(seed)
    D = _tangent(U, rng.standard_normal(U.shape), w)
    best = 0.0
    for _ in range(n_samples):
        D = D / trace_norm(D, w)
        V1 = cholesky_qr(U + radius * D, w)
        V2 = cholesky_qr(U - radius * D, w)
        diff = grassmann_gradient(model.gradient(V1), V1, w) - grassmann_gradient(model.gradient(V2), V2, w)
        dist = trace_norm(V1 - V2, w)
        if dist > 0:
            best = max(best, trace_norm(diff, w) / dist)
        nxt = _tangent(U, diff, w)
        if trace_norm(nxt, w) == 0:
            nxt = _tangent(U, rng.standard_normal(U.shape), w)
        D = nxt
    return best


def _fmt(value) -> str:
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return format(float(value), ".17g")


def write_trace_csv(trace: Iterable[TraceRecord], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(TRACE_FIELDS)
        for rec in trace:
            writer.writerow([_fmt(getattr(rec, f)) for f in TRACE_FIELDS])


def read_trace_csv(path) -> list[TraceRecord]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != TRACE_FIELDS:
            raise ValueError(f"unexpected trace header {reader.fieldnames}")
        out = []
        for row in reader:
            vals = {f: float(row[f]) for f in TRACE_FIELDS}
            vals["iter"] = int(row["iter"])
            vals["inner_iters"] = int(row["inner_iters"])
            out.append(TraceRecord(**vals))
        return out
