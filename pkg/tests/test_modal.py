import csv
import io

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.linalg import block_diag

from pmuwadc.case_model import build_ground_truth, solve_equilibrium, synthetic_case
from pmuwadc.errors import DimensionError, InsufficientDataError, NonDiagonalizableError
from pmuwadc.modal import (
    decompose,
    fit_ringdown,
    is_translational,
    match_eigenvalues,
    modal_report,
    modal_report_csv,
    mode_shape,
    modes_by_damping,
    participation_factors,
    weak_modes,
)

from conftest import lossless_pair


def oscillator(f, zeta):
    w0 = 2 * np.pi * f / np.sqrt(1 - zeta ** 2)
    return np.array([[0.0, 1.0], [-w0 ** 2, -2 * zeta * w0]])


def symmetric_pair():
    case = lossless_pair(Pm=(0.0, 0.0))
    return decompose(build_ground_truth(case, solve_equilibrium(case)).A)


class TestDecompose:
    def test_diagonal(self):
        dec = decompose(np.diag([-1.0, -2.0]))
        np.testing.assert_allclose(sorted(dec.eigenvalues.real), [-2.0, -1.0])
        assert dec.pairs == ()
        np.testing.assert_allclose(np.abs(dec.Psi), np.abs(dec.Phi.T), atol=1e-15)
        np.testing.assert_allclose(np.abs(dec.Phi) @ np.abs(dec.Phi.T), np.eye(2), atol=1e-15)

    def test_second_order_closed_form(self):
        w0, z0 = 2 * np.pi, 0.05
        dec = decompose([[0.0, 1.0], [-w0 ** 2, -2 * z0 * w0]])
        lam = -z0 * w0 + 1j * w0 * np.sqrt(1 - z0 ** 2)
        assert dec.pair_eigenvalue(0) == pytest.approx(lam, rel=1e-14)
        assert dec.pair_frequency(0) == pytest.approx(0.99875, abs=5e-6)
        assert dec.pair_frequency(0) == pytest.approx(w0 * np.sqrt(1 - z0 ** 2) / (2 * np.pi), rel=1e-13)
        assert dec.pair_damping(0) == pytest.approx(0.05, rel=1e-12)

    def test_benchmark_normalisation(self, bench):
        dec = bench.dec
        assert np.linalg.norm(dec.Psi @ dec.Phi - np.eye(20)) < 1e-8
        L = dec.Psi @ bench.gt.A @ dec.Phi
        off = L - np.diag(np.diag(L))
        assert np.linalg.norm(off) < 1e-8 * np.linalg.norm(np.diag(L))
        np.testing.assert_allclose(np.diag(L), dec.eigenvalues, atol=1e-10)

    def test_ordering_and_pairs(self, bench):
        lam = bench.dec.eigenvalues
        upper = lam[lam.imag >= 0]
        assert np.all(lam[: upper.size].imag >= 0)
        assert np.all(np.diff(np.abs(upper.imag)) <= 0)
        for k1, k2 in bench.dec.pairs:
            assert lam[k2] == np.conj(lam[k1])
            assert np.array_equal(bench.dec.Phi[:, k2], np.conj(bench.dec.Phi[:, k1]))
        assert len(bench.dec.pairs) == 9

    def test_phase_convention(self, bench):
        Phi = bench.dec.Phi
        lead = Phi[np.argmax(np.abs(Phi), axis=0), np.arange(20)]
        k1s = [k1 for k1, _ in bench.dec.pairs]
        assert np.all(np.abs(lead[k1s].imag) < 1e-15)
        assert np.all(lead[k1s].real > 0)

    def test_frequency_and_damping_formulas(self, bench):
        lam = bench.dec.eigenvalues
        np.testing.assert_allclose(bench.dec.f, np.abs(lam.imag) / (2 * np.pi))
        osc = np.abs(lam) > 0
        np.testing.assert_allclose(bench.dec.zeta[osc], -lam.real[osc] / np.abs(lam[osc]))

    def test_deterministic(self, bench):
        again = decompose(bench.gt.A)
        assert np.array_equal(again.eigenvalues, bench.dec.eigenvalues)
        assert np.array_equal(again.Phi, bench.dec.Phi)

    def test_defective_rejected(self):
        with pytest.raises(NonDiagonalizableError):
            decompose([[-1.0, 1.0], [0.0, -1.0]])

    def test_non_finite_rejected(self):
        with pytest.raises(DimensionError):
            decompose([[np.nan, 0.0], [0.0, 1.0]])
        with pytest.raises(DimensionError):
            decompose(np.zeros((2, 3)))

    @settings(max_examples=25, deadline=None)
    @given(st.sampled_from([3, 5, 10]), st.integers(0, 10_000))
    def test_random_cases(self, n, seed):
        case, op = synthetic_case(n, seed)
        dec = decompose(build_ground_truth(case, op).A)
        assert np.linalg.norm(dec.Psi @ dec.Phi - np.eye(2 * n)) < 1e-8
        sums = participation_factors(dec).complex.sum(axis=0)
        assert np.max(np.abs(sums - 1)) < 1e-8


class TestParticipation:
    def test_column_sums(self, bench):
        P = participation_factors(bench.dec)
        assert np.max(np.abs(P.complex.sum(axis=0) - 1)) < 1e-8
        assert np.all(P.normalized.max(axis=0) == pytest.approx(1.0))

    def test_symmetric_pair_equal_angle_participation(self):
        dec = symmetric_pair()
        k1 = dec.pairs[0][0]
        mags = participation_factors(dec).generator_magnitudes(k1, "angle")
        assert abs(mags[0] - mags[1]) < 1e-8

    def test_ranking_matches_sensitivity(self, bench):
        dec = bench.dec
        k = weak_modes(dec)[0]
        k1 = dec.pairs[k][0]
        lam0 = dec.eigenvalues[k1]
        h = 1e-6
        sens = np.empty(10)
        for g in range(10):
            A = bench.gt.A.copy()
            A[10 + g, 10 + g] += h
            lam = np.linalg.eigvals(A)
            sens[g] = abs(lam[np.argmin(np.abs(lam - lam0))] - lam0) / h
        pf = participation_factors(dec).generator_magnitudes(k1, "speed")
        assert list(np.argsort(-sens)) == list(np.argsort(-pf))


class TestModeShape:
    def test_two_machine_antiphase(self):
        shape = mode_shape(symmetric_pair(), 0)
        assert abs(abs(np.angle(shape[1]) - np.angle(shape[0])) - np.pi) < 1e-8

    def test_normalisation(self, bench):
        for k in range(len(bench.dec.pairs)):
            s = mode_shape(bench.dec, k)
            i = np.argmax(np.abs(s))
            assert s[i] == pytest.approx(1.0 + 0j, abs=1e-15)
            assert np.max(np.abs(s)) == pytest.approx(1.0)

    def test_benchmark_weakest_mode_two_groups(self, bench):
        s = mode_shape(bench.dec, weak_modes(bench.dec)[0])
        strong = np.abs(s) > 0.1
        ph = np.angle(s[strong])
        near0 = np.abs(ph) <= np.pi / 3
        nearpi = np.abs(np.abs(ph) - np.pi) <= np.pi / 3
        assert np.all(near0 | nearpi)
        assert near0.any() and nearpi.any()

    def test_out_of_range(self, bench):
        with pytest.raises(IndexError):
            mode_shape(bench.dec, 99)


class TestWeakModes:
    def test_all_well_damped(self):
        dec = decompose(block_diag(oscillator(1.0, 0.2), oscillator(0.5, 0.15)))
        assert weak_modes(dec) == []

    def test_motivating_magnitude_first(self):
        dec = decompose(block_diag(oscillator(0.7, 0.05), oscillator(1.66, 0.0103), oscillator(1.2, 0.3)))
        picked = weak_modes(dec)
        assert len(picked) == 2
        assert dec.pair_damping(picked[0]) == pytest.approx(0.0103, rel=1e-10)
        assert dec.pair_frequency(picked[0]) == pytest.approx(1.66, rel=1e-10)

    def test_zero_threshold(self, bench):
        assert weak_modes(bench.dec, 0.0) == []

    def test_translational_excluded(self):
        dec = symmetric_pair()
        assert not any(is_translational(dec, k) for k in weak_modes(dec, np.inf))
        assert modes_by_damping(dec) == [0]

    def test_benchmark_weakest(self, bench):
        k = weak_modes(bench.dec)[0]
        assert bench.dec.pair_damping(k) == pytest.approx(0.0103, abs=5e-4)


class TestMatching:
    def test_permutation_recovered(self):
        rng = np.random.default_rng(0)
        ref = rng.normal(size=8) + 1j * rng.normal(size=8)
        perm = rng.permutation(8)
        other = ref[perm] + 1e-9
        np.testing.assert_allclose(other[match_eigenvalues(ref, other)], ref + 1e-9)


class TestReport:
    def test_json_fields(self, bench):
        rep = modal_report(bench.dec)
        assert rep["kind"] == "modal_report"
        assert [m["index"] for m in rep["modes"]] == list(range(1, 10))
        zetas = [m["zeta"] for m in rep["modes"]]
        assert zetas == sorted(zetas)
        m = rep["modes"][0]
        assert len(m["shape"]["magnitude"]) == 10
        assert max(m["participation"]["speed"]) > 0

    def test_csv(self, bench):
        rows = list(csv.reader(io.StringIO(modal_report_csv(modal_report(bench.dec)))))
        assert rows[0][:5] == ["index", "re", "im", "f_Hz", "zeta"]
        assert len(rows) == 10
        assert len(rows[1]) == 5 + 30


class TestRingdown:
    @pytest.mark.parametrize("zeta,f", [(0.01, 1.9), (0.05, 0.6), (0.17, 1.5)])
    def test_damped_sinusoid(self, zeta, f):
        wd = 2 * np.pi * f
        sig = zeta * wd / np.sqrt(1 - zeta ** 2)
        t = np.arange(0, 12, 0.005)
        y = np.exp(-sig * t) * np.cos(wd * t + 0.3)
        fit = fit_ringdown(t, y)
        assert fit.zeta == pytest.approx(zeta, rel=1e-3)
        assert fit.frequency == pytest.approx(f, rel=1e-4)

    def test_too_short(self):
        t = np.linspace(0, 0.5, 50)
        with pytest.raises(InsufficientDataError):
            fit_ringdown(t, np.cos(2 * np.pi * t))
