"""Conformally Hamiltonian systems and the nonholonomic particle models.

A conformally Hamiltonian vector field is a canonically Hamiltonian field
scaled by a strictly positive phase-space function, the conformal factor.
Equivalently it is a Hamiltonian system under the state-dependent time
reparametrization dt = N dtau.  This module provides the value types, the
altered system whose Hamiltonian flow agrees with the conformal flow on a
fixed energy level set, the reduction of phi-simple mechanical systems to
conformal form, and the concrete particle models used by the experiments.

Gradients are supplied analytically by the model constructors; finite
differences appear only in tests.
"""

from __future__ import annotations

import dataclasses
import math
from typing import Callable, Optional, Union

import numpy as np

__all__ = [
    "DimensionMismatchError",
    "ModelDomainError",
    "PhaseState",
    "Tangent",
    "ConformalSystem",
    "MechanicalModel",
    "Potential",
    "eval_hamiltonian",
    "eval_conformal_factor",
    "conformal_vector_field",
    "altered_hamiltonian",
    "altered_vector_field",
    "phi_simple_to_conformal",
    "particle_model",
    "build_particle",
    "HARMONIC",
    "FREE",
]


class DimensionMismatchError(ValueError):
    """A state does not match the dimension expected by a system."""


class ModelDomainError(ValueError):
    """A model was evaluated outside its admissible domain."""


def _as_vector(value, name: str) -> np.ndarray:
    arr = np.asarray(value, dtype=float)
    if arr.ndim != 1:
        raise DimensionMismatchError(f"{name} must be a 1-d real vector, got shape {arr.shape}")
    if arr.size < 1:
        raise DimensionMismatchError(f"{name} must have length >= 1")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries: {arr}")
    return arr


@dataclasses.dataclass(frozen=True, eq=False)
class PhaseState:
    """A point (q, p) in 2n-dimensional phase space."""

    q: np.ndarray
    p: np.ndarray

    def __post_init__(self):
        q = _as_vector(self.q, "q")
        p = _as_vector(self.p, "p")
        if q.size != p.size:
            raise DimensionMismatchError(f"q and p must have equal length, got {q.size} and {p.size}")
        q = q.copy()
        p = p.copy()
        q.setflags(write=False)
        p.setflags(write=False)
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "p", p)

    @property
    def n(self) -> int:
        return self.q.size

    def as_array(self) -> np.ndarray:
        """Concatenated (q, p) coordinates."""
        return np.concatenate([self.q, self.p])

    @classmethod
    def from_array(cls, arr) -> "PhaseState":
        arr = _as_vector(arr, "state array")
        if arr.size % 2 != 0:
            raise DimensionMismatchError("state array length must be even")
        n = arr.size // 2
        return cls(arr[:n], arr[n:])

    def __repr__(self):
        return f"PhaseState(q={self.q.tolist()}, p={self.p.tolist()})"


@dataclasses.dataclass(frozen=True, eq=False)
class Tangent:
    """A phase-space velocity (dq, dp)."""

    dq: np.ndarray
    dp: np.ndarray

    def __post_init__(self):
        dq = _as_vector(self.dq, "dq")
        dp = _as_vector(self.dp, "dp")
        if dq.size != dp.size:
            raise DimensionMismatchError("dq and dp must have equal length")
        dq = dq.copy()
        dp = dp.copy()
        dq.setflags(write=False)
        dp.setflags(write=False)
        object.__setattr__(self, "dq", dq)
        object.__setattr__(self, "dp", dp)

    def as_array(self) -> np.ndarray:
        return np.concatenate([self.dq, self.dp])


@dataclasses.dataclass(frozen=True)
class ConformalSystem:
    """A conformally Hamiltonian system on R^{2n}.

    ``hamiltonian`` and ``conformal_factor`` map a :class:`PhaseState` to a
    real number; the gradient callables return length-2n vectors ordered
    (d/dq, d/dp).  The conformal factor must be strictly positive on the
    admissible domain.  The canonical pairing is fixed by the (dq, dp) block
    layout of :class:`Tangent`.

    ``vector_field_array`` and ``conformal_factor_array``, when present, are
    vectorized fast paths operating on arrays of shape (..., 2n); they must
    agree with the per-state callables.
    """

    n: int
    hamiltonian: Callable[[PhaseState], float]
    grad_h: Callable[[PhaseState], np.ndarray]
    conformal_factor: Callable[[PhaseState], float]
    grad_n: Callable[[PhaseState], np.ndarray]
    label: str = ""
    vector_field_array: Optional[Callable[[np.ndarray], np.ndarray]] = None
    conformal_factor_array: Optional[Callable[[np.ndarray], np.ndarray]] = None


@dataclasses.dataclass(frozen=True)
class MechanicalModel:
    """Mechanical data (mass metric, potential, phi) on an n-dimensional shape space.

    ``mass_metric(q)`` is symmetric positive definite.  Derivative layouts:
    ``d_mass_metric(q)[i, j, k] = d G_jk / d q_i`` and
    ``d2_mass_metric(q)[i, j, k, l] = d^2 G_kl / (d q_i d q_j)``.  Second
    derivatives are required by the implicit stepper, which assembles its
    Newton Jacobian in closed form.
    """

    n: int
    mass_metric: Callable[[np.ndarray], np.ndarray]
    d_mass_metric: Callable[[np.ndarray], np.ndarray]
    d2_mass_metric: Callable[[np.ndarray], np.ndarray]
    potential: Callable[[np.ndarray], float]
    grad_potential: Callable[[np.ndarray], np.ndarray]
    hess_potential: Callable[[np.ndarray], np.ndarray]
    phi: Callable[[np.ndarray], float]
    grad_phi: Callable[[np.ndarray], np.ndarray]
    hess_phi: Callable[[np.ndarray], np.ndarray]
    label: str = ""


def _check_state(system: ConformalSystem, state: PhaseState) -> None:
    if state.n != system.n:
        raise DimensionMismatchError(
            f"state dimension {state.n} does not match system dimension {system.n}"
        )


def eval_hamiltonian(system: ConformalSystem, state: PhaseState) -> float:
    """Value of the Hamiltonian at a state."""
    _check_state(system, state)
    return float(system.hamiltonian(state))


def eval_conformal_factor(system: ConformalSystem, state: PhaseState) -> float:
    """Value of the conformal factor at a state; must be positive."""
    _check_state(system, state)
    value = float(system.conformal_factor(state))
    if value <= 0.0:
        raise ModelDomainError(f"conformal factor {value} is not positive at {state}")
    return value


def conformal_vector_field(system: ConformalSystem, state: PhaseState) -> Tangent:
    """Right-hand side dq = N dH/dp, dp = -N dH/dq."""
    _check_state(system, state)
    n = system.n
    factor = eval_conformal_factor(system, state)
    grad = np.asarray(system.grad_h(state), dtype=float)
    return Tangent(factor * grad[n:], -factor * grad[:n])


def altered_hamiltonian(system: ConformalSystem, state: PhaseState, energy: float) -> float:
    """N(state) * (H(state) - energy), the Hamiltonian of the altered system."""
    _check_state(system, state)
    return eval_conformal_factor(system, state) * (eval_hamiltonian(system, state) - energy)


def altered_vector_field(system: ConformalSystem, state: PhaseState, energy: float) -> Tangent:
    """Hamiltonian vector field of the altered Hamiltonian.

    Its gradient is (H - E) grad N + N grad H, so on the level set {H = E}
    the field coincides with :func:`conformal_vector_field`.
    """
    _check_state(system, state)
    n = system.n
    h_val = eval_hamiltonian(system, state)
    n_val = eval_conformal_factor(system, state)
    grad = (h_val - energy) * np.asarray(system.grad_n(state), dtype=float)
    grad += n_val * np.asarray(system.grad_h(state), dtype=float)
    return Tangent(grad[n:], -grad[:n])


def phi_simple_to_conformal(model: MechanicalModel) -> ConformalSystem:
    """Conformal system of a phi-simple mechanical model.

    After rescaling momenta by exp(phi), the reduced dynamics become
    conformally Hamiltonian with

        H(q, p) = 0.5 exp(-2 phi(q)) p^T G(q)^{-1} p + U(q),
        N(q)    = exp(phi(q)),

    with all gradients assembled by the chain rule.
    """
    n = model.n

    def _inv_metric_apply(q: np.ndarray, p: np.ndarray) -> np.ndarray:
        metric = model.mass_metric(q)
        try:
            return np.linalg.solve(metric, p)
        except np.linalg.LinAlgError as exc:
            raise ModelDomainError(f"singular mass metric at q={q}") from exc

    def hamiltonian(state: PhaseState) -> float:
        w = _inv_metric_apply(state.q, state.p)
        kinetic = 0.5 * math.exp(-2.0 * model.phi(state.q)) * float(state.p @ w)
        return kinetic + float(model.potential(state.q))

    def grad_h(state: PhaseState) -> np.ndarray:
        q, p = state.q, state.p
        w = _inv_metric_apply(q, p)
        scale = math.exp(-2.0 * model.phi(q))
        quad = float(p @ w)
        d_metric = model.d_mass_metric(q)
        out = np.empty(2 * n)
        # d/dq_i of 0.5 e^{-2 phi} p^T G^{-1} p
        out[:n] = (
            -model.grad_phi(q) * scale * quad
            - 0.5 * scale * np.einsum("ijk,j,k->i", d_metric, w, w)
            + model.grad_potential(q)
        )
        out[n:] = scale * w
        return out

    def conformal_factor(state: PhaseState) -> float:
        return math.exp(model.phi(state.q))

    def grad_n(state: PhaseState) -> np.ndarray:
        out = np.zeros(2 * n)
        out[:n] = math.exp(model.phi(state.q)) * model.grad_phi(state.q)
        return out

    return ConformalSystem(
        n=n,
        hamiltonian=hamiltonian,
        grad_h=grad_h,
        conformal_factor=conformal_factor,
        grad_n=grad_n,
        label=f"phi-simple({model.label})",
    )


@dataclasses.dataclass(frozen=True)
class Potential:
    """Potential energy on the particle shape space (value, gradient, Hessian).

    ``value_array``/``grad_array`` are optional vectorized forms over arrays of
    shape (..., 2); when present they enable the fast batched vector field.
    A missing Hessian is replaced by central differences of the gradient.
    """

    value: Callable[[np.ndarray], float]
    grad: Callable[[np.ndarray], np.ndarray]
    hess: Optional[Callable[[np.ndarray], np.ndarray]] = None
    label: str = "custom"
    value_array: Optional[Callable[[np.ndarray, np.ndarray], np.ndarray]] = None
    grad_array: Optional[Callable[[np.ndarray, np.ndarray], tuple]] = None


HARMONIC = Potential(
    value=lambda q: 0.5 * float(q @ q),
    grad=lambda q: np.asarray(q, dtype=float).copy(),
    hess=lambda q: np.eye(2),
    label="harmonic",
    value_array=lambda x, y: 0.5 * (x * x + y * y),
    grad_array=lambda x, y: (x, y),
)

FREE = Potential(
    value=lambda q: 0.0,
    grad=lambda q: np.zeros(2),
    hess=lambda q: np.zeros((2, 2)),
    label="free",
    value_array=lambda x, y: np.zeros_like(x),
    grad_array=lambda x, y: (np.zeros_like(x), np.zeros_like(y)),
)

_NAMED_POTENTIALS = {"harmonic": HARMONIC, "free": FREE}


def _fd_jacobian(fn: Callable[[np.ndarray], np.ndarray], q: np.ndarray, step: float = 1e-6) -> np.ndarray:
    n = q.size
    out = np.empty((n, n))
    for j in range(n):
        dq = np.zeros(n)
        dq[j] = step
        out[:, j] = (np.asarray(fn(q + dq)) - np.asarray(fn(q - dq))) / (2.0 * step)
    return 0.5 * (out + out.T)


def _resolve_potential(potential: Union[str, Potential]) -> Potential:
    if isinstance(potential, str):
        try:
            return _NAMED_POTENTIALS[potential]
        except KeyError:
            raise ValueError(f"unknown potential {potential!r}; expected 'harmonic', 'free', or a Potential")
    if isinstance(potential, Potential):
        if potential.hess is None:
            grad = potential.grad
            return dataclasses.replace(potential, hess=lambda q: _fd_jacobian(grad, q))
        return potential
    raise TypeError(f"potential must be a name or Potential, got {type(potential)!r}")


def particle_model(potential: Union[str, Potential] = "harmonic") -> MechanicalModel:
    """Nonholonomic particle reduced to shape space: G = diag(1 + y^2, 1), phi = -0.5 ln(1 + y^2)."""
    pot = _resolve_potential(potential)

    def mass_metric(q):
        return np.array([[1.0 + q[1] * q[1], 0.0], [0.0, 1.0]])

    def d_mass_metric(q):
        out = np.zeros((2, 2, 2))
        out[1, 0, 0] = 2.0 * q[1]
        return out

    def d2_mass_metric(q):
        out = np.zeros((2, 2, 2, 2))
        out[1, 1, 0, 0] = 2.0
        return out

    def phi(q):
        return -0.5 * math.log(1.0 + q[1] * q[1])

    def grad_phi(q):
        y = q[1]
        return np.array([0.0, -y / (1.0 + y * y)])

    def hess_phi(q):
        y = q[1]
        den = 1.0 + y * y
        return np.array([[0.0, 0.0], [0.0, (y * y - 1.0) / (den * den)]])

    return MechanicalModel(
        n=2,
        mass_metric=mass_metric,
        d_mass_metric=d_mass_metric,
        d2_mass_metric=d2_mass_metric,
        potential=pot.value,
        grad_potential=pot.grad,
        hess_potential=pot.hess,
        phi=phi,
        grad_phi=grad_phi,
        hess_phi=hess_phi,
        label=f"particle-{pot.label}",
    )


def build_particle(potential: Union[str, Potential] = "harmonic") -> ConformalSystem:
    """Conformal system of the n=2 nonholonomic particle for the given potential."""
    pot = _resolve_potential(potential)
    model = particle_model(pot)
    system = phi_simple_to_conformal(model)

    factor_array = None
    field_array = None
    if pot.grad_array is not None:
        grad_array = pot.grad_array

        def factor_array(points: np.ndarray) -> np.ndarray:
            y = np.asarray(points, dtype=float)[..., 1]
            return 1.0 / np.sqrt(1.0 + y * y)

        def field_array(points: np.ndarray) -> np.ndarray:
            pts = np.asarray(points, dtype=float)
            x, y, px, py = pts[..., 0], pts[..., 1], pts[..., 2], pts[..., 3]
            one_y2 = 1.0 + y * y
            factor = 1.0 / np.sqrt(one_y2)
            ux, uy = grad_array(x, y)
            out = np.empty_like(pts)
            out[..., 0] = factor * px
            out[..., 1] = factor * one_y2 * py
            out[..., 2] = -factor * ux
            out[..., 3] = -factor * (y * py * py + uy)
            return out

    return dataclasses.replace(
        system,
        label=system.label.replace("phi-simple(", "").rstrip(")"),
        vector_field_array=field_array,
        conformal_factor_array=factor_array,
    )
