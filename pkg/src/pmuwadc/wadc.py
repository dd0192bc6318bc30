"""Wide-area damping gain design and closed-loop evaluation.

The gain for a target mode is the rank-2 spectral projector of that mode
scaled by ``sigma``::

    K = sigma * (phi_k1 psi_k1 + phi_k2 psi_k2)

With every generator actuated (``B_c = I``) the target pair moves by exactly
``sigma`` and nothing else moves.  With a partial actuator mask the modal
perturbation ``Psi B_c K Phi`` is still nonzero only in the two target
columns, so every other eigenvalue stays put and the target pair becomes the
eigenvalues of a 2x2 block.

Sign convention: callers pass ``shift > 0`` meaning "move the target pair
left by ``shift``"; internally ``sigma = -shift``.
"""

from __future__ import annotations

import csv
import io
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, ConjugationError, DimensionError
from .modal import ModalDecomposition, decompose, is_translational, match_eigenvalues, participation_factors

IMAG_RESIDUE_TOL = 1e-10
COLLISION_TOL = 1e-10


class DegeneracyWarning(UserWarning):
    """A shifted target eigenvalue landed on an untargeted one."""


@dataclass(frozen=True)
class ControlPlan:
    pair: int
    target_pair: tuple
    shift: float
    actuators: tuple
    K: np.ndarray
    B_c: np.ndarray
    target_eigenvalue: complex
    target_vector: np.ndarray
    predicted_first_order: np.ndarray
    predicted_exact: np.ndarray
    warnings: tuple = ()

    @property
    def sigma(self) -> float:
        return -self.shift

    @property
    def n(self) -> int:
        return self.K.shape[0] // 2

    def to_dict(self) -> dict:
        def cpair(z):
            return [{"re": float(v.real), "im": float(v.imag)} for v in z]

        return {
            "kind": "control_plan",
            "n": self.n,
            "pair": self.pair,
            "target_pair": list(self.target_pair),
            "shift": self.shift,
            "sigma": self.sigma,
            "generators": [g + 1 for g in self.actuators],
            "target_eigenvalue": {"re": self.target_eigenvalue.real, "im": self.target_eigenvalue.imag},
            "target_vector": {"re": self.target_vector.real.tolist(), "im": self.target_vector.imag.tolist()},
            "K": {"rows": self.K.shape[0], "cols": self.K.shape[1], "data": self.K.ravel().tolist()},
            "B_c_diagonal": np.diag(self.B_c).tolist(),
            "predicted_first_order": cpair(self.predicted_first_order),
            "predicted_exact": cpair(self.predicted_exact),
            "warnings": list(self.warnings),
        }

    @classmethod
    def from_dict(cls, d) -> "ControlPlan":
        try:
            K = np.array(d["K"]["data"], dtype=float).reshape(d["K"]["rows"], d["K"]["cols"])
            vec = np.array(d["target_vector"]["re"]) + 1j * np.array(d["target_vector"]["im"])

            def unpair(items):
                return np.array([complex(z["re"], z["im"]) for z in items])

            return cls(
                pair=int(d["pair"]), target_pair=tuple(d["target_pair"]), shift=float(d["shift"]),
                actuators=tuple(int(g) - 1 for g in d["generators"]), K=K,
                B_c=np.diag(np.array(d["B_c_diagonal"], dtype=float)),
                target_eigenvalue=complex(d["target_eigenvalue"]["re"], d["target_eigenvalue"]["im"]),
                target_vector=vec,
                predicted_first_order=unpair(d["predicted_first_order"]),
                predicted_exact=unpair(d["predicted_exact"]),
                warnings=tuple(d.get("warnings", ())),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigurationError(f"malformed control plan: {exc}") from None


@dataclass(frozen=True)
class ClosedLoopReport:
    label: str
    actuators: tuple
    shift: float
    open_eigenvalues: np.ndarray
    closed_eigenvalues: np.ndarray
    target_indices: tuple
    target_open: complex
    target_closed: complex
    zeta_open: float
    zeta_closed: float
    max_nontarget_displacement: float
    relative_nontarget_displacement: float
    first_order_error: float
    exact_error: float
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        def clist(z):
            return [{"re": float(v.real), "im": float(v.imag)} for v in z]

        return {
            "kind": "closed_loop_report",
            "label": self.label,
            "generators": [g + 1 for g in self.actuators],
            "shift": self.shift,
            "open_loop": clist(self.open_eigenvalues),
            "closed_loop": clist(self.closed_eigenvalues),
            "target": {
                "open": {"re": self.target_open.real, "im": self.target_open.imag},
                "closed": {"re": self.target_closed.real, "im": self.target_closed.imag},
                "f_open_Hz": abs(self.target_open.imag) / (2 * np.pi),
                "zeta_open": self.zeta_open,
                "zeta_closed": self.zeta_closed,
            },
            "max_nontarget_displacement": self.max_nontarget_displacement,
            "relative_nontarget_displacement": self.relative_nontarget_displacement,
            "first_order_error": self.first_order_error,
            "exact_error": self.exact_error,
            **self.extra,
        }


def _pair_of(dec: ModalDecomposition, k: int):
    if not 0 <= k < len(dec.pairs):
        raise ConfigurationError(f"pair index {k} out of range (0..{len(dec.pairs) - 1})")
    if is_translational(dec, k):
        raise ConfigurationError(f"pair {k} is not an oscillatory mode")
    return dec.pairs[k]


def _mask_vector(B_c, n2):
    B_c = np.asarray(B_c, dtype=float)
    if B_c.ndim == 2:
        if B_c.shape != (n2, n2):
            raise DimensionError(f"B_c must be {n2}x{n2}")
        return np.diag(B_c)
    if B_c.shape != (n2,):
        raise DimensionError(f"B_c diagonal must have {n2} entries")
    return B_c


def actuator_mask(n: int, generators) -> np.ndarray:
    """Diagonal 0/1 matrix selecting both the angle and the speed row of each generator."""
    gens = sorted(set(int(g) for g in generators))
    if any(g < 0 or g >= n for g in gens):
        raise ConfigurationError(f"generator indices must lie in 0..{n - 1}")
    diag = np.zeros(2 * n)
    diag[gens] = 1.0
    diag[[n + g for g in gens]] = 1.0
    return np.diag(diag)


def participation_ranking(dec: ModalDecomposition, k: int) -> list[int]:
    """Generators ordered by speed-state participation in pair ``k``; ties go to the lower index."""
    k1, _ = _pair_of(dec, k)
    mags = participation_factors(dec).generator_magnitudes(k1, "speed")
    # magnitudes equal to ~1e-9 relative count as ties
    key = np.round(mags / mags.max(), 9)
    return sorted(range(dec.n), key=lambda g: (-key[g], g))


def select_actuators(dec: ModalDecomposition, k: int, count: int) -> tuple:
    if not 1 <= count <= dec.n:
        raise ConfigurationError(f"actuator count must lie in 1..{dec.n}, got {count}")
    return tuple(participation_ranking(dec, k)[:count])


def _check_shift(dec, k, shift):
    lam = dec.pair_eigenvalue(k)
    if lam.real - shift >= 0:
        raise ConfigurationError(
            f"shift {shift} would move mode {k} (Re {lam.real:.4g}) into the right half plane")


def design_gain(dec: ModalDecomposition, k: int, shift: float) -> np.ndarray:
    """Real 2n x 2n gain moving pair ``k`` left by ``shift`` when applied at all generators."""
    k1, k2 = _pair_of(dec, k)
    _check_shift(dec, k, shift)
    sigma = -float(shift)
    Kc = sigma * (np.outer(dec.Phi[:, k1], dec.Psi[k1]) + np.outer(dec.Phi[:, k2], dec.Psi[k2]))
    residue = np.max(np.abs(Kc.imag))
    if residue > IMAG_RESIDUE_TOL * max(np.max(np.abs(Kc.real)), 1e-300) and residue > 0:
        raise ConjugationError(
            f"gain has imaginary residue {residue:.3e}; the eigenvector pair is not conjugate")
    return np.ascontiguousarray(Kc.real)


def closed_loop_matrix(A, B_c, K) -> np.ndarray:
    A = np.asarray(A, dtype=float)
    mask = _mask_vector(B_c, A.shape[0])
    K = np.asarray(K, dtype=float)
    if K.shape != A.shape:
        raise DimensionError("K must have the shape of A")
    return A + mask[:, None] * K


def _modal_block(dec, mask, k, shift):
    k1, k2 = _pair_of(dec, k)
    sigma = -float(shift)
    idx = [k1, k2]
    Bphi = mask[:, None] * dec.Phi[:, idx]
    coupling = dec.Psi[idx] @ Bphi
    return np.diag(dec.eigenvalues[idx]) + sigma * coupling


def predict_shift_first_order(dec: ModalDecomposition, B_c, k: int, shift: float) -> np.ndarray:
    """First-order eigenvalue perturbation: ``lambda_i + sigma * psi_i B_c phi_i``."""
    block = _modal_block(dec, _mask_vector(B_c, 2 * dec.n), k, shift)
    return np.diag(block).copy()


def predict_shift_exact(dec: ModalDecomposition, B_c, k: int, shift: float) -> np.ndarray:
    """Closed-loop target pair as the eigenvalues of the 2x2 modal block.

    Warns with `DegeneracyWarning` if a result coincides with an untargeted
    open-loop eigenvalue.
    """
    block = _modal_block(dec, _mask_vector(B_c, 2 * dec.n), k, shift)
    ev = np.linalg.eigvals(block)
    ev = ev[np.argsort(-ev.imag)]
    others = np.delete(dec.eigenvalues, list(dec.pairs[k]))
    if others.size:
        gap = np.min(np.abs(ev[:, None] - others[None, :]))
        if gap <= COLLISION_TOL:
            warnings.warn(f"closed-loop target eigenvalue within {gap:.2e} of an untargeted "
                          "eigenvalue; the block prediction is degenerate", DegeneracyWarning,
                          stacklevel=2)
    return ev


def make_plan(dec: ModalDecomposition, k: int, shift: float, actuators) -> ControlPlan:
    """Gain, actuator mask and both eigenvalue predictions for one design."""
    actuators = tuple(sorted(set(int(g) for g in actuators), key=list(actuators).index))
    K = design_gain(dec, k, shift)
    B_c = actuator_mask(dec.n, actuators)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", DegeneracyWarning)
        exact = predict_shift_exact(dec, B_c, k, shift)
    k1, _ = dec.pairs[k]
    return ControlPlan(
        pair=k, target_pair=dec.pairs[k], shift=float(shift), actuators=actuators, K=K, B_c=B_c,
        target_eigenvalue=complex(dec.eigenvalues[k1]), target_vector=dec.Phi[:, k1].copy(),
        predicted_first_order=predict_shift_first_order(dec, B_c, k, shift),
        predicted_exact=exact, warnings=tuple(str(w.message) for w in caught),
    )


def evaluate_plan(A_reference, plan: ControlPlan, dec_open: ModalDecomposition | None = None,
                  label: str = "") -> ClosedLoopReport:
    """Apply a plan to ``A_reference`` and compare closed- with open-loop spectra.

    Closed-loop eigenvalues are matched to open-loop ones by minimum-cost
    assignment.  The target is the open-loop pair that moved the most (the
    pair nearest the design eigenvalue when nothing moved), which keeps the
    report meaningful when a plan designed on an estimate is evaluated on the
    true matrix and near-degenerate modes have swapped places.
    """
    A_reference = np.asarray(A_reference, dtype=float)
    if A_reference.shape != plan.K.shape:
        raise DimensionError("plan and reference matrix sizes differ")
    if dec_open is None:
        dec_open = decompose(A_reference)
    lam_o = np.asarray(dec_open.eigenvalues)
    lam_c = np.linalg.eigvals(closed_loop_matrix(A_reference, plan.B_c, plan.K))
    matched = lam_c[match_eigenvalues(lam_o, lam_c)]

    moved = np.abs(matched - lam_o)
    scale = float(np.max(np.abs(lam_o)))
    upper = np.flatnonzero(lam_o.imag > 0)
    if upper.size and moved[upper].max() > 1e-8 * max(scale, 1.0):
        # the pair the gain actually moved; robust to swapped near-degenerate modes
        t1 = int(upper[np.argmax(moved[upper])])
    else:
        t1 = int(np.argmin(np.abs(lam_o - plan.target_eigenvalue)))
    dist = np.abs(lam_o - np.conj(lam_o[t1]))
    dist[t1] = np.inf
    t2 = int(np.argmin(dist))
    target_closed = matched[t1]
    if target_closed.imag < 0:
        target_closed = np.conj(target_closed)
    rest = np.ones(lam_o.size, bool)
    rest[[t1, t2]] = False
    disp = float(np.max(moved[rest])) if rest.any() else 0.0

    def zeta(z):
        return float(-z.real / abs(z)) if abs(z) > 0 else float("nan")

    return ClosedLoopReport(
        label=label, actuators=plan.actuators, shift=plan.shift,
        open_eigenvalues=lam_o, closed_eigenvalues=matched, target_indices=(t1, t2),
        target_open=complex(lam_o[t1]), target_closed=complex(target_closed),
        zeta_open=zeta(lam_o[t1]), zeta_closed=zeta(target_closed),
        max_nontarget_displacement=disp,
        relative_nontarget_displacement=disp / scale if scale > 0 else disp,
        first_order_error=float(abs(plan.predicted_first_order[0] - target_closed)),
        exact_error=float(abs(plan.predicted_exact[0] - target_closed)),
    )


def damping_table_csv(reports) -> str:
    """Actuator set against closed-loop damping ratio (%), one row per report."""
    buf = io.StringIO()
    w = csv.writer(buf)
    w.writerow(["generators", "closed_loop_damping_ratio_pct"])
    for r in reports:
        w.writerow([" ".join(f"G{g + 1}" for g in r.actuators), f"{100 * r.zeta_closed:.4f}"])
    return buf.getvalue()
