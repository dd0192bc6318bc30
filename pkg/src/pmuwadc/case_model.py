"""Classical multi-machine power system on a reduced network.

Generators are constant EMFs behind transient reactance, swinging against each
other through the Kron-reduced admittance matrix.  This module owns the
physical ground truth: electrical power, the angle Jacobian, the operating
point and the linearised Ornstein-Uhlenbeck matrices ``A`` and ``B``.

Units: angles in rad, speeds in rad/s as deviations from synchronous speed,
powers in per unit, ``M_i = 2 H_i / omega_s``.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Mapping

import numpy as np

from .errors import CaseFormatError, DimensionError, EquilibriumError, ValidationError

EQUILIBRIUM_TOL = 1e-9
MAX_NEWTON_ITER = 50

_VECTOR_KEYS = ("M", "D", "E", "Pm", "sigma")
_MATRIX_KEYS = ("Y_mag", "Y_ang_rad")


def _frozen(a, dtype=float):
    a = np.array(a, dtype=dtype)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class PowerCase:
    """Generator parameters plus reduced network of an ``n``-machine system."""

    M: np.ndarray
    D: np.ndarray
    E: np.ndarray
    Pm: np.ndarray
    Y_mag: np.ndarray
    Y_ang: np.ndarray
    sigma: np.ndarray
    omega_s: float = 2 * np.pi * 60
    name: str = ""

    def __post_init__(self):
        for key in ("M", "D", "E", "Pm", "sigma", "Y_mag", "Y_ang"):
            object.__setattr__(self, key, _frozen(getattr(self, key)))
        object.__setattr__(self, "omega_s", float(self.omega_s))
        _validate(self)

    @property
    def n(self) -> int:
        return self.M.shape[0]

    @property
    def G(self) -> np.ndarray:
        """Diagonal conductances ``Y_ii cos(phi_ii)``."""
        return np.diag(self.Y_mag) * np.cos(np.diag(self.Y_ang))

    def with_sigma(self, sigma) -> "PowerCase":
        sigma = np.broadcast_to(np.asarray(sigma, dtype=float), (self.n,))
        return PowerCase(self.M, self.D, self.E, self.Pm, self.Y_mag, self.Y_ang,
                         sigma, self.omega_s, self.name)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "n": self.n,
            "M": self.M.tolist(),
            "D": self.D.tolist(),
            "E": self.E.tolist(),
            "Pm": self.Pm.tolist(),
            "sigma": self.sigma.tolist(),
            "omega_s": self.omega_s,
            "Y_mag": self.Y_mag.tolist(),
            "Y_ang_rad": self.Y_ang.tolist(),
        }


@dataclass(frozen=True)
class OperatingPoint:
    delta_star: np.ndarray
    residual_norm: float
    converged: bool
    iterations: int = 0


@dataclass(frozen=True)
class GroundTruthModel:
    A: np.ndarray
    B: np.ndarray
    J: np.ndarray
    op: OperatingPoint = field(repr=False, default=None)


def _validate(case: PowerCase):
    n = case.M.shape[0] if case.M.ndim == 1 else -1
    if n < 2:
        raise ValidationError("a case needs at least two generators")
    for key in ("M", "D", "E", "Pm", "sigma"):
        arr = getattr(case, key)
        if arr.shape != (n,):
            raise ValidationError(f"{key} must have length {n}, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValidationError(f"{key} has non-finite entries")
    for key in ("Y_mag", "Y_ang"):
        arr = getattr(case, key)
        if arr.shape != (n, n):
            raise ValidationError(f"{key} must be {n}x{n}, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValidationError(f"{key} has non-finite entries")
    if np.any(case.M <= 0):
        raise ValidationError("inertia M must be positive for every generator")
    if np.any(case.D < 0):
        raise ValidationError("damping D must be non-negative")
    if np.any(case.E <= 0):
        raise ValidationError("EMF magnitude E must be positive")
    if np.any(case.Y_mag < 0):
        raise ValidationError("admittance magnitudes must be non-negative")
    if not np.allclose(case.Y_mag, case.Y_mag.T, rtol=1e-12, atol=1e-12):
        raise ValidationError("Y_mag is not symmetric (network must be reciprocal)")
    if not np.allclose(case.Y_ang, case.Y_ang.T, rtol=1e-12, atol=1e-12):
        raise ValidationError("Y_ang_rad is not symmetric (network must be reciprocal)")
    if not case.omega_s > 0:
        raise ValidationError("omega_s must be positive")


def parse_case(data: Mapping[str, Any] | str) -> PowerCase:
    """Build a `PowerCase` from case-file content (JSON text or decoded mapping)."""
    if isinstance(data, str):
        try:
            data = json.loads(data)
        except json.JSONDecodeError as exc:
            raise CaseFormatError("<document>", f"not valid JSON ({exc})") from None
    if not isinstance(data, Mapping):
        raise CaseFormatError("<document>", "top level must be an object")
    if "n" not in data:
        raise CaseFormatError("n", "missing")
    n = data["n"]
    if not isinstance(n, int) or isinstance(n, bool):
        raise CaseFormatError("n", "must be an integer")

    def number_array(key, shape):
        if key not in data:
            raise CaseFormatError(key, "missing")
        try:
            arr = np.array(data[key], dtype=float)
        except (TypeError, ValueError):
            raise CaseFormatError(key, "must contain only numbers") from None
        if arr.shape != shape:
            raise CaseFormatError(key, f"expected shape {shape}, got {arr.shape}")
        return arr

    vectors = {key: number_array(key, (n,)) for key in _VECTOR_KEYS}
    matrices = {key: number_array(key, (n, n)) for key in _MATRIX_KEYS}
    omega_s = data.get("omega_s", 2 * np.pi * 60)
    if not isinstance(omega_s, (int, float)) or isinstance(omega_s, bool):
        raise CaseFormatError("omega_s", "must be a number")
    return PowerCase(
        M=vectors["M"], D=vectors["D"], E=vectors["E"], Pm=vectors["Pm"],
        Y_mag=matrices["Y_mag"], Y_ang=matrices["Y_ang_rad"], sigma=vectors["sigma"],
        omega_s=omega_s, name=str(data.get("name", "")),
    )


def load_case(source) -> PowerCase:
    """Load a case from a path, JSON text or mapping."""
    if isinstance(source, Mapping):
        return parse_case(source)
    if isinstance(source, (str, os.PathLike)) and not str(source).lstrip().startswith("{"):
        return parse_case(Path(source).read_text(encoding="utf-8"))
    return parse_case(str(source))


def dump_case(case: PowerCase, path) -> None:
    Path(path).write_text(json.dumps(case.to_dict(), indent=1) + "\n", encoding="utf-8")


def shipped_case_path(name: str) -> Path:
    """Path of a case file bundled with the package (``two_machine`` or ``ten_machine``)."""
    return Path(str(resources.files("pmuwadc") / "data" / f"{name}.json"))


def _angle_vector(case, delta):
    delta = np.asarray(delta, dtype=float)
    if delta.shape != (case.n,):
        raise DimensionError(f"angle vector must have length {case.n}, got shape {delta.shape}")
    return delta


def electrical_power(case: PowerCase, delta) -> np.ndarray:
    """``P_e,i = E_i sum_j E_j Y_ij cos(delta_i - delta_j - phi_ij)``."""
    delta = _angle_vector(case, delta)
    theta = delta[:, None] - delta[None, :] - case.Y_ang
    return case.E * ((case.Y_mag * np.cos(theta)) @ case.E)


def analytic_jacobian(case: PowerCase, delta) -> np.ndarray:
    """Matrix ``dP_e/d delta``; rows sum to zero."""
    delta = _angle_vector(case, delta)
    theta = delta[:, None] - delta[None, :] - case.Y_ang
    J = np.outer(case.E, case.E) * case.Y_mag * np.sin(theta)
    np.fill_diagonal(J, 0.0)
    J[np.diag_indices_from(J)] = -J.sum(axis=1)
    return J


def solve_equilibrium(case: PowerCase, initial_guess=None) -> OperatingPoint:
    """Newton solve for the rotor angles at which ``P_m = P_e``.

    The first angle stays at its initial value.  Iterates drive the mismatch
    with its total redistributed in proportion to inertia; the returned
    residual is the raw ``max |P_m - P_e|``, so an unbalanced case (total
    generation not matching load plus losses) is reported as a failure.
    """
    if initial_guess is None:
        initial_guess = np.zeros(case.n)
    delta = _angle_vector(case, initial_guess).copy()
    share = case.M / case.M.sum()

    def balanced(d):
        g = case.Pm - electrical_power(case, d)
        return g - share * g.sum()

    r = balanced(delta)
    for it in range(MAX_NEWTON_ITER + 1):
        if np.max(np.abs(r)) <= EQUILIBRIUM_TOL:
            break
        if it == MAX_NEWTON_ITER:
            raise EquilibriumError("Newton iteration did not converge in "
                                   f"{MAX_NEWTON_ITER} iterations", float(np.max(np.abs(r))))
        J = analytic_jacobian(case, delta)
        jac = -(J - np.outer(share, J.sum(axis=0)))[:, 1:]
        step, *_ = np.linalg.lstsq(jac, -r, rcond=None)
        delta[1:] += step
        r = balanced(delta)
        if not np.all(np.isfinite(r)):
            raise EquilibriumError("Newton iteration produced non-finite angles", np.inf)

    raw = float(np.max(np.abs(case.Pm - electrical_power(case, delta))))
    if raw > EQUILIBRIUM_TOL:
        raise EquilibriumError("angle differences balance but total power does not "
                               "(Pm must cover load and losses)", raw)
    delta.setflags(write=False)
    return OperatingPoint(delta_star=delta, residual_norm=raw, converged=True, iterations=it)


def build_ground_truth(case: PowerCase, op: OperatingPoint) -> GroundTruthModel:
    """Linearised OU matrices around the operating point."""
    if not op.converged:
        raise ValidationError("operating point did not converge")
    n = case.n
    J = analytic_jacobian(case, op.delta_star)
    A = np.zeros((2 * n, 2 * n))
    A[:n, n:] = np.eye(n)
    A[n:, :n] = -J / case.M[:, None]
    A[n:, n:] = -np.diag(case.D / case.M)
    B = np.zeros((2 * n, n))
    B[n:, :] = -np.diag(case.E ** 2 * case.G * case.sigma / case.M)
    return GroundTruthModel(A=A, B=B, J=J, op=op)


def synthetic_case(n: int, seed: int, sigma: float = 1.0) -> tuple[PowerCase, OperatingPoint]:
    """Random, stable, lossy ``n``-machine case with a known operating point.

    The operating point is chosen first and ``Pm`` is set to the electrical
    power there, so the case is balanced by construction.
    """
    rng = np.random.default_rng(seed)
    M = rng.uniform(0.05, 0.3, n)
    D = M * rng.uniform(0.2, 0.8, n)
    E = rng.uniform(0.95, 1.1, n)
    mag = rng.uniform(0.5, 3.0, (n, n))
    ang = np.pi / 2 + rng.uniform(0.0, 0.15, (n, n))
    mag = np.triu(mag, 1)
    mag = mag + mag.T
    ang = np.triu(ang, 1)
    ang = ang + ang.T
    Y = -mag * np.exp(1j * ang)
    np.fill_diagonal(Y, 0.0)
    diag = -Y.sum(axis=1) + rng.uniform(0.02, 0.2, n)
    np.fill_diagonal(mag, np.abs(diag))
    np.fill_diagonal(ang, np.angle(diag))
    delta = rng.uniform(-0.15, 0.15, n)
    delta[0] = 0.0
    draft = PowerCase(M, D, E, np.zeros(n), mag, ang, np.full(n, sigma), name=f"synthetic-{n}-{seed}")
    Pm = electrical_power(draft, delta)
    case = PowerCase(M, D, E, Pm, mag, ang, np.full(n, sigma), name=draft.name)
    delta.setflags(write=False)
    return case, OperatingPoint(delta, float(np.max(np.abs(Pm - electrical_power(case, delta)))), True)
