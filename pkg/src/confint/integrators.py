"""Variational integrators for the altered system and a reference integrator.

The one-step map is defined by a two-point discrete Lagrangian that
approximates the principal action of the altered Lagrangian N(q) (L + E)
over one step.  Five quadrature variants are provided, combining midpoint
(M) and trapezoidal (T) rules for the conformal factor and for the
Lagrangian.  Every variant is a sum of terms

    w * N(a) * (L(b, v) + E),    v = (q1 - q0) / h,

where a and b are affine combinations of the endpoints, which makes values,
gradients, and the Newton Jacobian uniform chain-rule assemblies.  The
implicit step solves p0 = -d/dq0 [h Lambda] with analytic derivatives; there
is no finite differencing and no step-size fallback inside the solver.
"""

from __future__ import annotations

import dataclasses
import enum
import math
from typing import List, Optional, Tuple

import numpy as np

from .dynamics import ConformalSystem, MechanicalModel, PhaseState, conformal_vector_field

__all__ = [
    "DiscreteLagrangianKind",
    "StepperConfig",
    "ReferenceConfig",
    "NewtonDivergenceError",
    "discrete_lagrangian",
    "grad_discrete_lagrangian",
    "symplectic_step",
    "trajectory",
    "reference_trajectory",
    "reference_trajectory_array",
]


class DiscreteLagrangianKind(enum.Enum):
    """Quadrature variant of the discrete Lagrangian: factor rule then Lagrangian rule."""

    M = "M"
    MT = "MT"
    TM = "TM"
    TT = "TT"
    T = "T"


# (weight, q0-coefficient of the factor point, q0-coefficient of the Lagrangian point)
_MID, _Q0, _Q1 = 0.5, 1.0, 0.0
_TERMS = {
    DiscreteLagrangianKind.M: ((1.0, _MID, _MID),),
    DiscreteLagrangianKind.MT: ((0.5, _MID, _Q0), (0.5, _MID, _Q1)),
    DiscreteLagrangianKind.TM: ((0.5, _Q0, _MID), (0.5, _Q1, _MID)),
    DiscreteLagrangianKind.TT: (
        (0.25, _Q0, _Q0),
        (0.25, _Q0, _Q1),
        (0.25, _Q1, _Q0),
        (0.25, _Q1, _Q1),
    ),
    DiscreteLagrangianKind.T: ((0.5, _Q0, _Q0), (0.5, _Q1, _Q1)),
}


@dataclasses.dataclass(frozen=True)
class StepperConfig:
    """Step size and Newton-iteration controls for the implicit step."""

    h: float
    newton_tol: float = 1e-12
    newton_max_iter: int = 50

    def __post_init__(self):
        if not self.h > 0.0:
            raise ValueError(f"step size must be positive, got {self.h}")
        if not self.newton_tol > 0.0:
            raise ValueError("newton_tol must be positive")
        if self.newton_max_iter < 1:
            raise ValueError("newton_max_iter must be at least 1")


@dataclasses.dataclass(frozen=True)
class ReferenceConfig:
    """Substep count per output interval for the fixed-step RK4 reference."""

    substeps: int = 1000

    def __post_init__(self):
        if self.substeps < 1:
            raise ValueError("substeps must be at least 1")


class NewtonDivergenceError(RuntimeError):
    """The Newton iteration failed to reach the residual tolerance."""

    def __init__(self, residual_norm: float, iterations: int, step_index: Optional[int] = None):
        self.residual_norm = residual_norm
        self.iterations = iterations
        self.step_index = step_index
        where = "" if step_index is None else f" at trajectory step {step_index}"
        super().__init__(
            f"Newton iteration did not converge{where}: residual {residual_norm:.3e} "
            f"after {iterations} iterations"
        )


def _factor_data(model: MechanicalModel, q: np.ndarray, second: bool):
    # N = exp(phi) and its q-derivatives via the chain rule.
    value = math.exp(model.phi(q))
    grad = value * model.grad_phi(q)
    if not second:
        return value, grad, None
    gphi = model.grad_phi(q)
    hess = value * (np.outer(gphi, gphi) + model.hess_phi(q))
    return value, grad, hess


def _lagrangian_data(model: MechanicalModel, q: np.ndarray, v: np.ndarray, second: bool):
    # L(q, v) = 0.5 v^T G(q) v - U(q) and the derivative blocks used below.
    metric = model.mass_metric(q)
    d_metric = model.d_mass_metric(q)
    value = 0.5 * float(v @ metric @ v) - float(model.potential(q))
    grad_q = 0.5 * np.einsum("ijk,j,k->i", d_metric, v, v) - model.grad_potential(q)
    grad_v = metric @ v
    if not second:
        return value, grad_q, grad_v, None, None, None
    hess_qq = 0.5 * np.einsum("ijkl,k,l->ij", model.d2_mass_metric(q), v, v) - model.hess_potential(q)
    hess_qv = np.einsum("ijk,k->ij", d_metric, v)  # [i, j] = d^2 L / (dq_i dv_j)
    return value, grad_q, grad_v, hess_qq, hess_qv, metric


def _lambda_derivs(
    kind: DiscreteLagrangianKind,
    model: MechanicalModel,
    q0: np.ndarray,
    q1: np.ndarray,
    h: float,
    energy: float,
    mixed: bool,
):
    """Value, endpoint gradients, and optionally the d^2/dq0 dq1 block of Lambda."""
    n = model.n
    v = (q1 - q0) / h
    factor_cache = {}
    lag_cache = {}

    def point(c0: float) -> np.ndarray:
        if c0 == _Q0:
            return q0
        if c0 == _Q1:
            return q1
        return 0.5 * (q0 + q1)

    value = 0.0
    d1 = np.zeros(n)
    d2 = np.zeros(n)
    m01 = np.zeros((n, n)) if mixed else None

    for weight, c_fac, c_lag in _TERMS[kind]:
        if c_fac not in factor_cache:
            factor_cache[c_fac] = _factor_data(model, point(c_fac), mixed)
        if c_lag not in lag_cache:
            lag_cache[c_lag] = _lagrangian_data(model, point(c_lag), v, mixed)
        nf, nf_q, nf_qq = factor_cache[c_fac]
        lag, lag_q, lag_v, lag_qq, lag_qv, metric = lag_cache[c_lag]

        total = lag + energy
        g0 = c_lag * lag_q - lag_v / h
        g1 = (1.0 - c_lag) * lag_q + lag_v / h

        value += weight * nf * total
        d1 += weight * (c_fac * nf_q * total + nf * g0)
        d2 += weight * ((1.0 - c_fac) * nf_q * total + nf * g1)

        if mixed:
            block = c_lag * (1.0 - c_lag) * lag_qq
            block = block + (c_lag / h) * lag_qv
            block = block - ((1.0 - c_lag) / h) * lag_qv.T
            block = block - metric / (h * h)
            m01 += weight * (
                c_fac * (1.0 - c_fac) * total * nf_qq
                + np.outer(c_fac * nf_q, g1)
                + np.outer(g0, (1.0 - c_fac) * nf_q)
                + nf * block
            )

    return value, d1, d2, m01


def discrete_lagrangian(
    kind: DiscreteLagrangianKind,
    model: MechanicalModel,
    q0: np.ndarray,
    q1: np.ndarray,
    h: float,
    energy: float,
) -> float:
    """Value of the chosen quadrature variant at endpoints (q0, q1)."""
    if not h > 0.0:
        raise ValueError("step size must be positive")
    value, _, _, _ = _lambda_derivs(kind, model, np.asarray(q0, float), np.asarray(q1, float), h, energy, False)
    return value


def grad_discrete_lagrangian(
    kind: DiscreteLagrangianKind,
    model: MechanicalModel,
    q0: np.ndarray,
    q1: np.ndarray,
    h: float,
    energy: float,
) -> Tuple[np.ndarray, np.ndarray]:
    """Analytic partial derivatives of the discrete Lagrangian wrt q0 and q1."""
    _, d1, d2, _ = _lambda_derivs(kind, model, np.asarray(q0, float), np.asarray(q1, float), h, energy, False)
    return d1, d2


def _predictor_velocity(model: MechanicalModel, q: np.ndarray, p: np.ndarray) -> np.ndarray:
    # dq-component of the altered field; for exp(phi)-conformal factors it is
    # G(q)^{-1} p / N(q), independent of the energy parameter.
    factor = math.exp(model.phi(q))
    return np.linalg.solve(model.mass_metric(q), p) / factor


def symplectic_step(
    kind: DiscreteLagrangianKind,
    model: MechanicalModel,
    state: PhaseState,
    cfg: StepperConfig,
    energy: float,
) -> PhaseState:
    """One step of the variational map for the altered system at parameter E.

    Solves p0 = -d/dq0 [h Lambda](q0, q1) for q1 by Newton iteration with the
    analytic Jacobian, then sets p1 = d/dq1 [h Lambda](q0, q1).  Raises
    :class:`NewtonDivergenceError` when the residual does not reach
    ``cfg.newton_tol`` within ``cfg.newton_max_iter`` iterations.
    """
    if state.n != model.n:
        raise ValueError(f"state dimension {state.n} does not match model dimension {model.n}")
    h = cfg.h
    q0, p0 = state.q, state.p
    q1 = q0 + h * _predictor_velocity(model, q0, p0)

    for iteration in range(cfg.newton_max_iter + 1):
        _, d1, d2, m01 = _lambda_derivs(kind, model, q0, q1, h, energy, True)
        residual = p0 + h * d1
        res_norm = float(np.linalg.norm(residual))
        if res_norm <= cfg.newton_tol:
            return PhaseState(q1, h * d2)
        if iteration == cfg.newton_max_iter or not math.isfinite(res_norm):
            raise NewtonDivergenceError(res_norm, iteration)
        q1 = q1 - np.linalg.solve(h * m01, residual)

    raise AssertionError("unreachable")


def trajectory(
    kind: DiscreteLagrangianKind,
    model: MechanicalModel,
    state0: PhaseState,
    cfg: StepperConfig,
    energy: float,
    steps: int,
) -> List[PhaseState]:
    """Iterate the variational step; returns steps + 1 states starting at state0."""
    if steps < 0:
        raise ValueError("steps must be non-negative")
    out = [state0]
    current = state0
    for index in range(steps):
        try:
            current = symplectic_step(kind, model, current, cfg, energy)
        except NewtonDivergenceError as exc:
            raise NewtonDivergenceError(exc.residual_norm, exc.iterations, step_index=index) from exc
        out.append(current)
    return out


def reference_trajectory(
    system: ConformalSystem,
    state0: PhaseState,
    h_out: float,
    steps: int,
    rcfg: ReferenceConfig = ReferenceConfig(),
) -> List[PhaseState]:
    """Classical RK4 on the conformal field, substepped, sampled every h_out.

    ``h_out`` may be negative to integrate backward.  Fixed-step and
    deterministic; with the default 1000 substeps the integration error is
    negligible at experiment scale.
    """
    if steps < 0:
        raise ValueError("steps must be non-negative")

    if system.vector_field_array is not None:
        field = system.vector_field_array
    else:
        def field(arr: np.ndarray) -> np.ndarray:
            tangent = conformal_vector_field(system, PhaseState.from_array(arr))
            return tangent.as_array()

    dt = h_out / rcfg.substeps
    x = state0.as_array()
    out = [state0]
    for _ in range(steps):
        for _ in range(rcfg.substeps):
            k1 = field(x)
            k2 = field(x + 0.5 * dt * k1)
            k3 = field(x + 0.5 * dt * k2)
            k4 = field(x + dt * k3)
            x = x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        out.append(PhaseState.from_array(x))
    return out


def reference_trajectory_array(
    system: ConformalSystem,
    points: np.ndarray,
    h_out: float,
    steps: int,
    rcfg: ReferenceConfig = ReferenceConfig(),
) -> List[np.ndarray]:
    """RK4 reference flow applied to a whole (m, 2n) batch of points at once.

    Identical arithmetic to :func:`reference_trajectory` but broadcast over
    the batch; requires the system's vectorized field.
    """
    if steps < 0:
        raise ValueError("steps must be non-negative")
    if system.vector_field_array is None:
        raise ValueError("system has no vectorized field; use reference_trajectory per point")
    field = system.vector_field_array
    dt = h_out / rcfg.substeps
    x = np.asarray(points, dtype=float).copy()
    out = [x.copy()]
    for _ in range(steps):
        for _ in range(rcfg.substeps):
            k1 = field(x)
            k2 = field(x + 0.5 * dt * k1)
            k3 = field(x + 0.5 * dt * k2)
            k4 = field(x + dt * k3)
            x = x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        out.append(x.copy())
    return out
