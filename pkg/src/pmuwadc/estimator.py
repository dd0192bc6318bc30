"""State-matrix estimation from ambient PMU statistics.

Under ambient load noise the system is a stationary OU process, so its
covariance obeys ``A C + C A^T = -B B^T``.  The angle/speed block of that
identity involves only the angle Jacobian, inertia and damping:

    J = (M C_ww - D C_wd) C_dd^+

which lets the Jacobian be read off measured covariances without any network
data.  Angles are referenced to their cross-machine average before the
covariance is taken (``detrend="centroid"``); that removes the undamped
uniform-angle drift while keeping the identity exact, so ``C_dd`` loses rank
only along the all-ones direction, which ``J`` annihilates anyway.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import null_space

from .ambient_sim import PmuWindow
from .errors import (ConfigurationError, DegenerateWindowError, DimensionError,
                     InsufficientDataError, StabilityError)

DETREND_MODES = ("none", "mean", "coi", "centroid")
DEFAULT_RTOL = 1e-8
MARGINAL_TOL = 1e-9


@dataclass(frozen=True)
class CovarianceBlocks:
    Q_dd: np.ndarray
    Q_dw: np.ndarray
    Q_wd: np.ndarray
    Q_ww: np.ndarray
    N: int | None
    mu: np.ndarray
    detrend: str

    @property
    def n(self) -> int:
        return self.Q_dd.shape[0]

    @property
    def full(self) -> np.ndarray:
        return np.block([[self.Q_dd, self.Q_dw], [self.Q_wd, self.Q_ww]])

    @classmethod
    def from_full(cls, C, N=None, mu=None, detrend="exact"):
        C = 0.5 * (C + C.T)
        n = C.shape[0] // 2
        Q_wd = C[n:, :n].copy()
        mu = np.zeros(2 * n) if mu is None else mu
        return cls(C[:n, :n].copy(), Q_wd.T.copy(), Q_wd, C[n:, n:].copy(), N, mu, detrend)


@dataclass(frozen=True)
class Conditioning:
    sigma_max: float
    smallest_retained: float
    truncated: int
    rtol: float


@dataclass(frozen=True)
class EstimatedModel:
    J_hat: np.ndarray
    A_hat: np.ndarray
    M: np.ndarray
    D: np.ndarray
    conditioning: Conditioning | None = None
    meta: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return self.J_hat.shape[0]

    def to_dict(self) -> dict:
        cond = self.conditioning
        return {
            "kind": "estimated_model",
            "n": self.n,
            "J_hat": matrix_to_json(self.J_hat),
            "A_hat": matrix_to_json(self.A_hat),
            "M": self.M.tolist(),
            "D": self.D.tolist(),
            "conditioning": None if cond is None else {
                "sigma_max": cond.sigma_max,
                "smallest_retained_singular_value": cond.smallest_retained,
                "truncated_directions": cond.truncated,
                "rtol": cond.rtol,
            },
            "meta": self.meta,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1)

    @classmethod
    def from_dict(cls, data) -> "EstimatedModel":
        cond = data.get("conditioning")
        if cond is not None:
            cond = Conditioning(cond["sigma_max"], cond["smallest_retained_singular_value"],
                                cond["truncated_directions"], cond["rtol"])
        return cls(J_hat=matrix_from_json(data["J_hat"]), A_hat=matrix_from_json(data["A_hat"]),
                   M=np.array(data["M"], dtype=float), D=np.array(data["D"], dtype=float),
                   conditioning=cond, meta=dict(data.get("meta", {})))


def matrix_to_json(a) -> dict:
    a = np.asarray(a, dtype=float)
    return {"rows": a.shape[0], "cols": a.shape[1], "data": a.ravel().tolist()}


def matrix_from_json(obj) -> np.ndarray:
    try:
        a = np.array(obj["data"], dtype=float).reshape(obj["rows"], obj["cols"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigurationError(f"malformed matrix record: {exc}") from None
    return a


def sample_covariance(window: PmuWindow | np.ndarray, detrend: str = "centroid",
                      M=None) -> CovarianceBlocks:
    """Unbiased (``1/(N-1)``) sample covariance blocks of a PMU window.

    detrend
        ``"none"``: raw second moments, no mean removal.
        ``"mean"``: per-channel sample mean removed.
        ``"coi"``: inertia-weighted average angle and speed subtracted from
        every angle and speed channel at each sample (needs ``M``), then
        per-channel means removed.
        ``"centroid"``: the plain average angle across machines subtracted
        from every angle channel at each sample, then per-channel means
        removed.  Speeds are left as measured.
    """
    X = np.asarray(window.samples if isinstance(window, PmuWindow) else window, dtype=float)
    if X.ndim != 2 or X.shape[1] % 2:
        raise DimensionError("samples must form an N x 2n matrix")
    N = X.shape[0]
    if N < 2:
        raise InsufficientDataError("at least two samples are needed for a covariance")
    if detrend not in DETREND_MODES:
        raise ConfigurationError(f"unknown detrend mode {detrend!r}; expected one of {DETREND_MODES}")
    n = X.shape[1] // 2
    X = X.copy()
    if detrend == "coi":
        if M is None:
            raise ConfigurationError("detrend='coi' needs the inertia vector M")
        w = _diag_vector(M, n)
        w = w / w.sum()
        X[:, :n] -= (X[:, :n] @ w)[:, None]
        X[:, n:] -= (X[:, n:] @ w)[:, None]
    elif detrend == "centroid":
        X[:, :n] -= X[:, :n].mean(axis=1, keepdims=True)
    if detrend != "none":
        # shifting by the first sample keeps large angle offsets out of the rounding
        x0 = X[0].copy()
        X -= x0
        shift = X.mean(axis=0)
        X -= shift
        mu = x0 + shift
    else:
        mu = X.mean(axis=0)
    Q = X.T @ X / (N - 1)
    return CovarianceBlocks.from_full(Q, N=N, mu=mu, detrend=detrend)


def theoretical_covariance(A, B) -> CovarianceBlocks:
    """Stationary covariance of ``dx = A x dt + B dW`` (the Lyapunov solution).

    Directions belonging to eigenvalues with ``|Re| < 1e-9`` (the neutral
    uniform-angle mode of a swing model) are projected out orthogonally,
    the reduced Lyapunov equation is solved through its Kronecker-product
    linear system, and the result is lifted back with zero variance along the
    removed directions.  For a swing model this is the covariance of the
    centroid-referenced process.
    """
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    n2 = A.shape[0]
    if A.shape != (n2, n2) or B.ndim != 2 or B.shape[0] != n2 or n2 % 2:
        raise DimensionError("A must be 2n x 2n and B must have 2n rows")
    lam, V = np.linalg.eig(A)
    marginal = np.abs(lam.real) < MARGINAL_TOL
    unstable = lam[(lam.real > MARGINAL_TOL)]
    if unstable.size:
        raise StabilityError(unstable)
    if marginal.any():
        U = np.concatenate([V[:, marginal].real, V[:, marginal].imag], axis=1)
        basis = null_space(U.T, rcond=1e-10)
    else:
        basis = np.eye(n2)
    Ar = basis.T @ A @ basis
    Br = basis.T @ B
    C_r = _lyapunov_kron(Ar, Br @ Br.T)
    C = basis @ C_r @ basis.T
    return CovarianceBlocks.from_full(C, N=None, detrend="exact")


def _lyapunov_kron(A, Q):
    """Solve ``A X + X A^T = -Q`` by vectorisation: ``(I kron A + A kron I) vec X = -vec Q``."""
    m = A.shape[0]
    I = np.eye(m)
    K = np.kron(I, A) + np.kron(A, I)
    try:
        x = np.linalg.solve(K, -Q.reshape(-1, order="F"))
    except np.linalg.LinAlgError:
        lam = np.linalg.eigvals(A)
        raise StabilityError(lam[lam.real > -MARGINAL_TOL]) from None
    X = x.reshape(m, m, order="F")
    return 0.5 * (X + X.T)


def lyapunov_residual(A, cov: CovarianceBlocks, B) -> float:
    """Relative Frobenius residual of the Lyapunov identity on the unprojected subspace."""
    A = np.asarray(A, float)
    B = np.asarray(B, float)
    C = cov.full
    lam, V = np.linalg.eig(A)
    marginal = np.abs(lam.real) < MARGINAL_TOL
    basis = np.eye(A.shape[0])
    if marginal.any():
        U = np.concatenate([V[:, marginal].real, V[:, marginal].imag], axis=1)
        basis = null_space(U.T, rcond=1e-10)
    Ar = basis.T @ A @ basis
    Cr = basis.T @ C @ basis
    Qr = basis.T @ B @ B.T @ basis
    denom = np.linalg.norm(Qr)
    res = np.linalg.norm(Ar @ Cr + Cr @ Ar.T + Qr)
    return float(res / denom) if denom > 0 else float(res)


def _diag_vector(X, n):
    X = np.asarray(X, dtype=float)
    if X.ndim == 2:
        if X.shape != (n, n):
            raise DimensionError(f"expected a {n}x{n} diagonal matrix")
        X = np.diag(X)
    if X.shape != (n,):
        raise DimensionError(f"expected {n} diagonal entries, got shape {X.shape}")
    return X


def truncated_pinv(Q, rtol=DEFAULT_RTOL):
    """Pseudo-inverse dropping singular values below ``rtol * s_max``."""
    U, s, Vt = np.linalg.svd(Q)
    if s[0] < 1e-14:
        raise DegenerateWindowError(
            f"angle covariance is numerically zero (largest singular value {s[0]:.3e}); "
            "the window carries no angle variation")
    keep = s >= rtol * s[0]
    pinv = (Vt[keep].T / s[keep]) @ U[:, keep].T
    cond = Conditioning(float(s[0]), float(s[keep][-1]), int((~keep).sum()), float(rtol))
    return pinv, cond


def estimate_jacobian(cov: CovarianceBlocks, M, D, rtol: float = DEFAULT_RTOL):
    """``J = (M Q_ww - D Q_wd) pinv(Q_dd)``; returns ``(J_hat, Conditioning)``."""
    n = cov.n
    m = _diag_vector(M, n)
    d = _diag_vector(D, n)
    if np.any(m <= 0):
        raise ConfigurationError("inertia constants must be positive")
    pinv, cond = truncated_pinv(cov.Q_dd, rtol)
    J = (m[:, None] * cov.Q_ww - d[:, None] * cov.Q_wd) @ pinv
    return J, cond


def assemble_state_matrix(J_hat, M, D, conditioning: Conditioning | None = None,
                          meta: dict | None = None) -> EstimatedModel:
    """``A = [[0, I], [-M^-1 J, -M^-1 D]]``."""
    J_hat = np.asarray(J_hat, dtype=float)
    n = J_hat.shape[0]
    if J_hat.shape != (n, n):
        raise DimensionError("J_hat must be square")
    m = _diag_vector(M, n)
    d = _diag_vector(D, n)
    A = np.zeros((2 * n, 2 * n))
    A[:n, n:] = np.eye(n)
    A[n:, :n] = -J_hat / m[:, None]
    A[n:, n:] = np.diag(-d / m)
    return EstimatedModel(J_hat=J_hat, A_hat=A, M=m.copy(), D=d.copy(),
                          conditioning=conditioning, meta=dict(meta or {}))


def estimate_state_matrix(window: PmuWindow, M, D, detrend: str = "centroid",
                          rtol: float = DEFAULT_RTOL) -> EstimatedModel:
    """Covariance, Jacobian and state-matrix assembly in one call."""
    cov = sample_covariance(window, detrend=detrend, M=M)
    J, cond = estimate_jacobian(cov, M, D, rtol=rtol)
    meta = {
        "window_length_s": window.duration,
        "sample_rate_hz": window.sample_rate,
        "samples": cov.N,
        "detrend": detrend,
        "truncated_directions": cond.truncated,
    }
    return assemble_state_matrix(J, M, D, cond, meta)


def projected_error(J_hat, J_ref) -> float:
    """Relative Frobenius error after removing the uniform-angle direction from both."""
    n = J_ref.shape[0]
    P = np.eye(n) - np.full((n, n), 1.0 / n)
    ref = J_ref @ P
    return float(np.linalg.norm(J_hat @ P - ref) / np.linalg.norm(ref))
