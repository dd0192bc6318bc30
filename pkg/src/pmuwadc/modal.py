"""Modal analysis of a swing-model state matrix.

Left eigenvectors are taken as the rows of ``Phi^-1`` rather than from a
separate left eigenproblem, so ``Psi Phi = I`` holds to solver precision and
participation factors sum to one per mode.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.signal import find_peaks

from .errors import ConjugationError, DimensionError, InsufficientDataError, NonDiagonalizableError

PAIR_TOL = 1e-8
ZERO_MODE_TOL = 1e-6
MAX_CONDITION = 1e12


@dataclass(frozen=True)
class ModalDecomposition:
    eigenvalues: np.ndarray
    Phi: np.ndarray
    Psi: np.ndarray
    pairs: tuple
    f: np.ndarray
    zeta: np.ndarray

    @property
    def n(self) -> int:
        return self.Phi.shape[0] // 2

    def pair_eigenvalue(self, k: int) -> complex:
        return complex(self.eigenvalues[self.pairs[k][0]])

    def pair_frequency(self, k: int) -> float:
        return float(self.f[self.pairs[k][0]])

    def pair_damping(self, k: int) -> float:
        return float(self.zeta[self.pairs[k][0]])


@dataclass(frozen=True)
class ParticipationFactors:
    complex: np.ndarray
    normalized: np.ndarray

    def generator_magnitudes(self, mode: int, state: str = "speed") -> np.ndarray:
        n = self.complex.shape[0] // 2
        rows = slice(n, 2 * n) if state == "speed" else slice(0, n)
        return np.abs(self.complex[rows, mode])


def decompose(A) -> ModalDecomposition:
    """Eigen-decomposition with deterministic ordering, pairing and phase.

    Order: eigenvalues with ``Im >= 0`` first, then by descending ``|Im|``,
    then ascending ``Re``.  Each conjugate pair is listed in ``pairs`` as
    ``(k1, k2)`` with ``Im(lambda_k1) > 0``.  Every right eigenvector is
    rotated so its largest-magnitude entry is real and positive, and the
    lower member of a pair is stored as the exact conjugate of the upper.
    """
    A = np.asarray(A)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise DimensionError("state matrix must be square")
    if not np.all(np.isfinite(A)):
        raise DimensionError("state matrix has non-finite entries")
    A = A.astype(float)
    lam, V = np.linalg.eig(A)
    order = np.lexsort((lam.real, -np.abs(lam.imag), (lam.imag < 0).astype(int)))
    lam = lam[order]
    V = V[:, order]

    V = V / _unit_phase(V)
    pairs = []
    used = set()
    scale = max(1.0, float(np.max(np.abs(lam))))
    lower = [j for j in range(lam.size) if lam[j].imag < 0]
    for i in range(lam.size):
        if lam[i].imag <= 0:
            continue
        cands = [j for j in lower if j not in used]
        if not cands:
            raise ConjugationError(f"eigenvalue {lam[i]:.6g} has no conjugate partner")
        j = min(cands, key=lambda c: abs(lam[c] - np.conj(lam[i])))
        if abs(lam[j] - np.conj(lam[i])) > PAIR_TOL * scale:
            raise ConjugationError(f"eigenvalue {lam[i]:.6g} has no conjugate partner")
        used.add(j)
        lam[j] = np.conj(lam[i])
        V[:, j] = np.conj(V[:, i])
        pairs.append((i, j))

    cond = np.linalg.cond(V)
    if not np.isfinite(cond) or cond > MAX_CONDITION:
        raise NonDiagonalizableError(
            f"eigenvector matrix is ill-conditioned (cond {cond:.3e}); A is defective "
            "or nearly so")
    Psi = np.linalg.inv(V)
    mag = np.abs(lam)
    with np.errstate(invalid="ignore", divide="ignore"):
        zeta = np.where(mag > 0, -lam.real / mag, np.nan)
    f = np.abs(lam.imag) / (2 * np.pi)
    for arr in (lam, V, Psi, f, zeta):
        arr.setflags(write=False)
    return ModalDecomposition(lam, V, Psi, tuple(pairs), f, zeta)


def _unit_phase(V):
    idx = np.argmax(np.abs(V), axis=0)
    lead = V[idx, np.arange(V.shape[1])]
    return lead / np.abs(lead)


def participation_factors(dec: ModalDecomposition) -> ParticipationFactors:
    """``P[j, i] = Phi[j, i] * Psi[i, j]``, plus per-mode magnitudes scaled to max 1."""
    P = dec.Phi * dec.Psi.T
    mag = np.abs(P)
    peak = mag.max(axis=0)
    peak[peak == 0] = 1.0
    return ParticipationFactors(complex=P, normalized=mag / peak)


def mode_shape(dec: ModalDecomposition, k: int) -> np.ndarray:
    """Rotor-angle components of pair ``k``'s right eigenvector, max magnitude 1 at phase 0."""
    if not 0 <= k < len(dec.pairs):
        raise IndexError(f"pair index {k} out of range (0..{len(dec.pairs) - 1})")
    v = dec.Phi[: dec.n, dec.pairs[k][0]]
    lead = v[np.argmax(np.abs(v))]
    return v / lead


def is_translational(dec: ModalDecomposition, k: int) -> bool:
    lam = dec.pair_eigenvalue(k)
    return abs(lam.imag) < ZERO_MODE_TOL and abs(lam) < ZERO_MODE_TOL


def weak_modes(dec: ModalDecomposition, threshold: float = 0.10) -> list[int]:
    """Indices into ``dec.pairs`` of oscillatory modes with ``zeta < threshold``, weakest first."""
    picked = [k for k in range(len(dec.pairs))
              if not is_translational(dec, k) and dec.pair_damping(k) < threshold]
    return sorted(picked, key=lambda k: (dec.pair_damping(k), k))


def modes_by_damping(dec: ModalDecomposition) -> list[int]:
    """All oscillatory pair indices sorted ascending by damping ratio."""
    return weak_modes(dec, threshold=np.inf)


def match_eigenvalues(reference, other) -> np.ndarray:
    """Permutation ``p`` minimising ``sum |reference[i] - other[p[i]]|``."""
    reference = np.asarray(reference)
    other = np.asarray(other)
    _, cols = linear_sum_assignment(np.abs(reference[:, None] - other[None, :]))
    return cols


def modal_report(dec: ModalDecomposition) -> dict:
    """JSON-ready table of oscillatory modes, indexed 1.. by ascending damping."""
    pf = participation_factors(dec)
    modes = []
    for rank, k in enumerate(modes_by_damping(dec), start=1):
        k1 = dec.pairs[k][0]
        lam = dec.eigenvalues[k1]
        shape = mode_shape(dec, k)
        modes.append({
            "index": rank,
            "pair": list(dec.pairs[k]),
            "eigenvalue": {"re": float(lam.real), "im": float(lam.imag)},
            "f_Hz": float(dec.f[k1]),
            "zeta": float(dec.zeta[k1]),
            "shape": {"magnitude": np.abs(shape).tolist(), "phase_rad": np.angle(shape).tolist()},
            "participation": {
                "speed": pf.generator_magnitudes(k1, "speed").tolist(),
                "angle": pf.generator_magnitudes(k1, "angle").tolist(),
            },
        })
    return {
        "kind": "modal_report",
        "n": dec.n,
        "eigenvalues": [{"re": float(v.real), "im": float(v.imag)} for v in dec.eigenvalues],
        "modes": modes,
    }


def modal_report_csv(report: dict) -> str:
    buf = io.StringIO()
    w = csv.writer(buf)
    n = report["n"]
    w.writerow(["index", "re", "im", "f_Hz", "zeta"]
               + [f"pf_speed_{g + 1}" for g in range(n)]
               + [f"shape_mag_{g + 1}" for g in range(n)]
               + [f"shape_phase_{g + 1}" for g in range(n)])
    for m in report["modes"]:
        w.writerow([m["index"], m["eigenvalue"]["re"], m["eigenvalue"]["im"], m["f_Hz"], m["zeta"]]
                   + m["participation"]["speed"] + m["shape"]["magnitude"] + m["shape"]["phase_rad"])
    return buf.getvalue()


@dataclass(frozen=True)
class RingdownFit:
    zeta: float
    frequency: float
    decay_rate: float
    peaks: int


def fit_ringdown(t, y, min_peaks: int = 4) -> RingdownFit:
    """Logarithmic-decrement fit of a single damped oscillation.

    Peaks of ``|y|`` are located to sub-sample accuracy by parabolic
    interpolation, ``log|peak|`` is fitted linearly in time for the decay
    rate, and the half-period spacing of the peaks gives the damped
    frequency.
    """
    t = np.asarray(t, dtype=float)
    y = np.asarray(y, dtype=float)
    if t.shape != y.shape or t.ndim != 1:
        raise DimensionError("t and y must be equal-length vectors")
    a = np.abs(y)
    idx, _ = find_peaks(a)
    idx = idx[(idx > 0) & (idx < a.size - 1)]
    if idx.size < min_peaks:
        raise InsufficientDataError(f"only {idx.size} peaks found; need {min_peaks}")
    l, c, r = np.log(a[idx - 1]), np.log(a[idx]), np.log(a[idx + 1])
    denom = l - 2 * c + r
    off = np.where(denom != 0, 0.5 * (l - r) / np.where(denom != 0, denom, 1), 0.0)
    h = t[1] - t[0]
    tp = t[idx] + off * h
    lp = c - 0.25 * (l - r) * off
    rate = -np.polyfit(tp, lp, 1)[0]
    # |y| peaks twice per period
    half_period = np.polyfit(np.arange(tp.size), tp, 1)[0]
    omega = np.pi / half_period
    zeta = rate / np.hypot(rate, omega)
    return RingdownFit(zeta=float(zeta), frequency=float(omega / (2 * np.pi)),
                       decay_rate=float(rate), peaks=int(idx.size))
