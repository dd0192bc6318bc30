"""Regenerate the shipped case files under src/pmuwadc/data/.

The ten-machine case is a synthetic three-area system: ten generator internal
nodes behind transient reactance, ten terminal buses, six transmission hubs
carrying small constant-impedance loads.  The bus network is Kron-reduced to
the internal nodes here, once, so the toolkit itself only ever sees the
reduced admittance matrix.  Mechanical powers are set to the electrical
powers at a chosen angle profile, which makes the case balanced by
construction.

    python scripts/build_benchmark_case.py
"""

from pathlib import Path

import numpy as np

from pmuwadc.case_model import PowerCase, dump_case, electrical_power

DATA = Path(__file__).resolve().parents[1] / "src" / "pmuwadc" / "data"
OMEGA_S = 2 * np.pi * 60

# inertia constants H (s) on the system base
H = [60, 30, 36, 29, 26, 35, 26, 24, 34, 42]
# damping per unit inertia (1/s); generators 4-7 are lightly damped, which puts
# the weakest interarea mode at about 1% damping
D_OVER_M = [0.45, 0.45, 0.45, 0.25, 0.25, 0.25, 0.25, 0.45, 0.45, 0.45]
E = [1.03, 1.05, 1.04, 1.02, 1.05, 1.04, 1.06, 1.03, 1.05, 1.02]
XD = [0.006, 0.03, 0.025, 0.03, 0.03, 0.025, 0.03, 0.03, 0.025, 0.02]
DELTA_STAR = [0.0, 0.05, 0.08, 0.12, 0.15, 0.1, 0.12, 0.02, -0.02, -0.05]
R_OVER_X = 0.002
LOAD = 0.003
SIGMA = 5.0

# generator terminal -> hub; hubs 20..25
TERMINAL_HUB = {0: 20, 1: 20, 2: 21, 3: 22, 4: 22, 5: 23, 6: 23, 7: 24, 8: 24, 9: 25}
HUB_LINES = [(20, 21, 0.01), (21, 22, 0.03), (22, 23, 0.05), (23, 24, 0.03),
             (24, 25, 0.01), (20, 25, 0.04)]


def kron_reduce(n_keep, branches, shunts):
    nb = max(max(a, b) for a, b, _ in branches) + 1
    Y = np.zeros((nb, nb), complex)
    for a, b, z in branches:
        y = 1 / z
        Y[a, a] += y
        Y[b, b] += y
        Y[a, b] -= y
        Y[b, a] -= y
    for k, y in shunts.items():
        Y[k, k] += y
    g = np.arange(n_keep)
    l = np.arange(n_keep, nb)
    return Y[np.ix_(g, g)] - Y[np.ix_(g, l)] @ np.linalg.solve(Y[np.ix_(l, l)], Y[np.ix_(l, g)])


def ten_machine():
    n = 10
    branches = [(i, 10 + i, complex(0.0, XD[i])) for i in range(n)]
    branches += [(10 + g, h, complex(0.02 * R_OVER_X, 0.02)) for g, h in TERMINAL_HUB.items()]
    branches += [(a, b, complex(x * R_OVER_X, x)) for a, b, x in HUB_LINES]
    shunts = {h: complex(LOAD, -0.3 * LOAD) for h in range(20, 26)}
    Yr = kron_reduce(n, branches, shunts)
    Yr = 0.5 * (Yr + Yr.T)
    M = 2 * np.array(H, float) / OMEGA_S
    D = np.array(D_OVER_M) * M
    mag, ang = np.abs(Yr), np.angle(Yr)
    draft = PowerCase(M, D, E, np.zeros(n), mag, ang, np.full(n, SIGMA), OMEGA_S)
    Pm = electrical_power(draft, np.array(DELTA_STAR))
    return PowerCase(M, D, E, Pm, mag, ang, np.full(n, SIGMA), OMEGA_S, name="ten_machine")


def two_machine():
    ang = np.array([[0.0, np.pi / 2], [np.pi / 2, 0.0]])
    mag = np.array([[0.05, 1.0], [1.0, 0.05]])
    return PowerCase(M=[0.1, 0.1], D=[0.02, 0.02], E=[1.0, 1.0], Pm=[0.55, -0.45],
                     Y_mag=mag, Y_ang=ang, sigma=[1.0, 1.0], omega_s=OMEGA_S, name="two_machine")


if __name__ == "__main__":
    DATA.mkdir(parents=True, exist_ok=True)
    dump_case(ten_machine(), DATA / "ten_machine.json")
    dump_case(two_machine(), DATA / "two_machine.json")
    print("wrote", DATA / "ten_machine.json", DATA / "two_machine.json")
