"""Numerical backward error analysis of one-step maps.

Fits the step-size expansion of a one-step map on a geometric ladder of
step sizes and converts the Taylor coefficients into the coefficients of
the modified equation.  This provides an oracle for the closed-form series
coefficients that is independent of how those were derived.

All tolerances here are limited by finite-difference noise on extracted
data; this module is a cross-check, not a precision instrument.
"""

from __future__ import annotations

import dataclasses
from typing import Callable, List

import numpy as np

from .dynamics import ConformalSystem, MechanicalModel, PhaseState
from .integrators import (
    DiscreteLagrangianKind,
    NewtonDivergenceError,
    ReferenceConfig,
    reference_trajectory,
)
from .integrators import _lambda_derivs, _predictor_velocity

__all__ = [
    "OneStepMap",
    "TaylorData",
    "ModifiedFieldData",
    "ExtractionUnreliableError",
    "taylor_coefficients",
    "modified_field_coefficients",
    "variational_one_step_map",
    "flow_map",
]

_MAX_CONDITION = 1e12


class ExtractionUnreliableError(RuntimeError):
    """The least-squares fit of the step expansion is ill conditioned."""


@dataclasses.dataclass(frozen=True)
class OneStepMap:
    """A one-step map parametrized by the step size; apply(s, 0) must equal s."""

    apply: Callable[[PhaseState, float], PhaseState]
    dimension: int


@dataclasses.dataclass(frozen=True)
class TaylorData:
    """Coefficients d_1..d_order of apply(s, h) = s + h d_1 + h^2 d_2 + ..."""

    d: List[np.ndarray]
    order: int
    base_h: float
    levels: int


@dataclasses.dataclass(frozen=True)
class ModifiedFieldData:
    """Coefficients f_0, f_1, ... of the modified equation dx/dt = sum_k h^k f_k."""

    f: List[np.ndarray]


def taylor_coefficients(
    one_step: OneStepMap,
    state: PhaseState,
    order: int,
    base_h: float = 1e-2,
    levels: int = 8,
) -> TaylorData:
    """Least-squares fit of the first ``order`` step-expansion coefficients.

    The displacements apply(s, h_i) - s are fitted to sum_k h_i^k d_k over
    the ladder h_i = base_h 2^{-i}, i = 0..levels-1.  When the ladder has
    room, two guard terms beyond ``order`` are included in the fit (and
    discarded) so that the returned coefficients are not biased by the
    first neglected orders.  Rows are weighted proportionally to h_i: the
    roundoff floor of a one-step displacement grows like 1/h, so the
    weighting equalizes the effective noise across the ladder.  Columns
    are rescaled before solving and a condition estimate above 1e12 raises
    :class:`ExtractionUnreliableError`.
    """
    if not 1 <= order <= 3:
        raise ValueError("order must be between 1 and 3")
    if levels < order + 2:
        raise ValueError("levels must be at least order + 2")
    if not base_h > 0.0:
        raise ValueError("base_h must be positive")

    steps = base_h * 2.0 ** (-np.arange(levels))
    base = state.as_array()
    displacements = np.empty((levels, one_step.dimension))
    for i, h in enumerate(steps):
        displacements[i] = one_step.apply(state, float(h)).as_array() - base

    terms = order + 2 if levels >= order + 4 else order
    weights = steps / steps.max()
    design = np.column_stack([steps ** (k + 1) for k in range(terms)]) * weights[:, None]
    scale = np.linalg.norm(design, axis=0)
    if not np.all(scale > 0.0) or not np.all(np.isfinite(scale)):
        raise ExtractionUnreliableError(f"degenerate step ladder starting at base_h={base_h}")
    scaled = design / scale
    condition = np.linalg.cond(scaled)
    if not condition < _MAX_CONDITION:
        raise ExtractionUnreliableError(f"fit condition estimate {condition:.3e} exceeds {_MAX_CONDITION:.0e}")

    coeffs, *_ = np.linalg.lstsq(scaled, displacements * weights[:, None], rcond=None)
    coeffs = coeffs / scale[:, None]
    return TaylorData(d=[coeffs[k].copy() for k in range(order)], order=order, base_h=base_h, levels=levels)


def _d_series(one_step, state, base_h, levels):
    data = taylor_coefficients(one_step, state, 3, base_h, levels)
    return data.d


def _d1_jacobian(one_step, state, base_h, levels, fd_step):
    dim = one_step.dimension
    jac = np.empty((dim, dim))
    base = state.as_array()
    for j in range(dim):
        shift = np.zeros(dim)
        shift[j] = fd_step
        plus = _d_series(one_step, PhaseState.from_array(base + shift), base_h, levels)[0]
        minus = _d_series(one_step, PhaseState.from_array(base - shift), base_h, levels)[0]
        jac[:, j] = (plus - minus) / (2.0 * fd_step)
    return jac


def modified_field_coefficients(
    one_step: OneStepMap,
    state: PhaseState,
    base_h: float = 1e-2,
    levels: int = 8,
    fd_step: float = 1e-5,
    dir_step: float = 2e-2,
    second_step: float = 1e-2,
) -> ModifiedFieldData:
    """Coefficients f_0, f_1, f_2 of the modified equation of a one-step map.

    Matching the exact-flow expansion of dx/dt = f_0 + h f_1 + h^2 f_2,

        x(h) = x + h f + (h^2/2) f'f + (h^3/6) (f''(f, f) + f'f'f) + O(h^4),

    against apply(s, h) = s + h d_1 + h^2 d_2 + h^3 d_3 + O(h^4) order by
    order in h gives

        h^1:  f_0 = d_1
        h^2:  f_1 = d_2 - (1/2) f_0' f_0
        h^3:  f_2 = d_3 - (1/2) (f_0' f_1 + f_1' f_0)
                      - (1/6) (f_0''(f_0, f_0) + f_0' f_0' f_0).

    The Jacobian of d_1 entering f_1 uses central differences with step
    ``fd_step``.  The f_2 terms difference quantities that are themselves
    extracted (hence carry roundoff-level roughness), so they use the
    wider steps ``dir_step`` (for f_1' f_0) and ``second_step`` (for the
    second directional derivative of f_0); widening trades negligible
    truncation error against the 1/step amplification of that roughness.
    """
    base = state.as_array()
    d1, d2, d3 = _d_series(one_step, state, base_h, levels)
    jac0 = _d1_jacobian(one_step, state, base_h, levels, fd_step)
    f0 = d1
    f1 = d2 - 0.5 * jac0 @ f0

    speed = float(np.linalg.norm(f0))
    if speed == 0.0:
        # equilibrium of the leading field: all directional terms vanish
        f2 = d3 - 0.5 * jac0 @ f1
        return ModifiedFieldData(f=[f0, f1, f2])

    unit = f0 / speed

    def f1_at(point: np.ndarray) -> np.ndarray:
        st = PhaseState.from_array(point)
        dd = _d_series(one_step, st, base_h, levels)
        jac = _d1_jacobian(one_step, st, base_h, levels, fd_step)
        return dd[1] - 0.5 * jac @ dd[0]

    # f_1' f_0 by a central difference of the full f_1 assembly along f_0
    f1_plus = f1_at(base + dir_step * unit)
    f1_minus = f1_at(base - dir_step * unit)
    df1_f0 = (f1_plus - f1_minus) / (2.0 * dir_step) * speed

    # f_0''(f_0, f_0) by a second central difference of d_1 along f_0
    d1_plus = _d_series(one_step, PhaseState.from_array(base + second_step * unit), base_h, levels)[0]
    d1_minus = _d_series(one_step, PhaseState.from_array(base - second_step * unit), base_h, levels)[0]
    hess_dir = (d1_plus - 2.0 * d1 + d1_minus) / (second_step * second_step) * (speed * speed)

    f2 = d3 - 0.5 * (jac0 @ f1 + df1_f0) - (hess_dir + jac0 @ (jac0 @ f0)) / 6.0
    return ModifiedFieldData(f=[f0, f1, f2])


def variational_one_step_map(
    kind: DiscreteLagrangianKind,
    model: MechanicalModel,
    energy: float,
    newton_iterations: int = 8,
    guard_tol: float = 1e-9,
) -> OneStepMap:
    """The variational step at fixed energy parameter, as a map family in h.

    Unlike the production stepper, the Newton iteration count here is fixed
    rather than residual-adaptive: a fixed iteration count makes the map a
    smooth function of the state, which the nested finite differencing of
    the extraction requires (an adaptive exit injects tolerance-sized jumps
    that differencing amplifies by 1/step).  Eight iterations from the
    order-h^2 predictor converge to the roundoff floor for every ladder
    step; the final residual is checked only against a loose guard.
    """

    def apply(state: PhaseState, h: float) -> PhaseState:
        if h == 0.0:
            return state
        q0, p0 = state.q, state.p
        q1 = q0 + h * _predictor_velocity(model, q0, p0)
        for _ in range(newton_iterations):
            _, d1, _, m01 = _lambda_derivs(kind, model, q0, q1, h, energy, True)
            residual = p0 + h * d1
            q1 = q1 - np.linalg.solve(h * m01, residual)
        _, d1, d2, _ = _lambda_derivs(kind, model, q0, q1, h, energy, False)
        res_norm = float(np.linalg.norm(p0 + h * d1))
        if not res_norm <= guard_tol:
            raise NewtonDivergenceError(res_norm, newton_iterations)
        return PhaseState(q1, h * d2)

    return OneStepMap(apply=apply, dimension=2 * model.n)


def flow_map(system: ConformalSystem, substeps: int = 64) -> OneStepMap:
    """The (near-)exact time-h flow of the conformal field, as a one-step map."""

    def apply(state: PhaseState, h: float) -> PhaseState:
        if h == 0.0:
            return state
        return reference_trajectory(system, state, h, 1, ReferenceConfig(substeps=substeps))[-1]

    return OneStepMap(apply=apply, dimension=2 * system.n)
