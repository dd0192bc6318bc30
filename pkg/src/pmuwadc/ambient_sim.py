"""Ambient stochastic simulation and PMU emulation.

All integrators share one noise discipline: channel ``i`` draws its Wiener
increments from its own stream keyed on ``(seed, i)``, so adding or removing
channels never reshuffles the others, and equal seeds give bit-identical
trajectories.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import expm

from .case_model import GroundTruthModel, OperatingPoint, PowerCase, electrical_power
from .errors import ConfigurationError, DimensionError, InsufficientDataError, InstabilityError

SCHEMES = ("heun", "euler_maruyama", "exact")
DIVERGENCE_LIMIT = np.pi

# stream tags keep simulation noise and measurement noise independent for one seed
_PROCESS_STREAM = 0
_MEASUREMENT_STREAM = 1


@dataclass(frozen=True)
class SimConfig:
    """Integration settings.

    ``scheme`` is ``"heun"`` (stochastic Heun, the default), ``"euler_maruyama"``
    or, for linear models only, ``"exact"`` (exact OU transition).
    """

    dt: float = 0.005
    duration: float = 450.0
    seed: int = 0
    scheme: str = "heun"
    initial_state: np.ndarray | None = None

    def __post_init__(self):
        if not self.dt > 0:
            raise ConfigurationError("dt must be positive")
        if not self.duration >= self.dt:
            raise ConfigurationError("duration must be at least one step")
        if self.scheme not in SCHEMES:
            raise ConfigurationError(f"unknown scheme {self.scheme!r}; expected one of {SCHEMES}")

    @property
    def steps(self) -> int:
        return int(np.floor(self.duration / self.dt + 1e-9))


@dataclass(frozen=True)
class Trajectory:
    dt: float
    states: np.ndarray
    seed: int
    model_tag: str

    @property
    def n(self) -> int:
        return self.states.shape[1] // 2

    @property
    def times(self) -> np.ndarray:
        return self.dt * np.arange(self.states.shape[0])


@dataclass(frozen=True)
class PmuWindow:
    sample_rate: float
    samples: np.ndarray
    noise_std_angle: float = 0.0
    noise_std_speed: float = 0.0
    seed: int | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=float)
        if samples.ndim != 2 or samples.shape[1] % 2:
            raise DimensionError("PMU samples must be an N x 2n matrix")
        if samples.shape[0] < 2:
            raise InsufficientDataError("a PMU window needs at least two samples")

    @property
    def n(self) -> int:
        return self.samples.shape[1] // 2

    @property
    def duration(self) -> float:
        return (self.samples.shape[0] - 1) / self.sample_rate

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.samples.shape[0]) / self.sample_rate


class _NoiseStreams:
    """Standard-normal draws, one generator per (seed, channel), served in chunks."""

    def __init__(self, seeds, channels, stream=_PROCESS_STREAM, chunk=2048):
        self.gens = [[np.random.default_rng(np.random.SeedSequence(
            entropy=int(seed), spawn_key=(stream, i))) for i in range(channels)]
            for seed in seeds]
        self.chunk = chunk
        self.buf = None
        self.pos = chunk

    def next(self):
        if self.pos == self.chunk:
            self.buf = np.stack([np.stack([g.standard_normal(self.chunk) for g in row], axis=1)
                                 for row in self.gens], axis=1)
            self.pos = 0
        z = self.buf[self.pos]
        self.pos += 1
        return z


def _standard_normals(seed, channels, count, stream):
    out = np.empty((count, channels))
    for i in range(channels):
        ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(stream, i))
        out[:, i] = np.random.default_rng(ss).standard_normal(count)
    return out


def _relative_excursion(delta, delta_ref):
    # the uniform-angle drift is neutral, so the guard watches angles relative to their mean
    dev = delta - delta_ref
    return np.max(np.abs(dev - dev.mean(axis=-1, keepdims=True)), axis=-1)


def _integrate(drift, x0, noise_gain, cfg, seeds, ref, transition=None):
    """Fixed-step loop for additive-noise SDEs ``dx = f(x) dt + G dW``.

    ``x0`` has shape ``(R, 2n)``, one row per seed; ``drift`` maps such a
    batch to its derivative.  With ``transition = (F, L)`` the step is the
    exact linear update ``x F^T + z L^T`` instead.
    """
    steps = cfg.steps
    R, n2 = x0.shape
    n = n2 // 2
    dt = cfg.dt
    out = np.empty((steps + 1, R, n2))
    out[0] = x = x0
    if transition is not None:
        F, L = transition
        gain_t = L.T
        step_t = F.T
    else:
        gain_t = noise_gain.T * np.sqrt(dt)
    streams = _NoiseStreams(seeds, gain_t.shape[0])
    silent = not np.any(gain_t)
    euler = cfg.scheme == "euler_maruyama"
    for k in range(steps):
        dw = 0.0 if silent else streams.next() @ gain_t
        if transition is not None:
            x = x @ step_t + dw
        elif euler:
            x = x + drift(x) * dt + dw
        else:
            f0 = drift(x)
            x = x + 0.5 * (f0 + drift(x + f0 * dt + dw)) * dt + dw
        out[k + 1] = x
        bad = (_relative_excursion(x[:, :n], ref) > DIVERGENCE_LIMIT) | ~np.isfinite(x).all(axis=1)
        if bad.any():
            raise InstabilityError(k + 1, (k + 1) * dt)
    return out


def _pack(states, dt, seeds, tag, offset=0.0):
    trajs = []
    for r, seed in enumerate(seeds):
        s = states[:, r, :] + offset
        s.setflags(write=False)
        trajs.append(Trajectory(dt=dt, states=s, seed=int(seed), model_tag=tag))
    return trajs


def _nonlinear_drift(case, extra=None):
    Minv = 1.0 / case.M
    DM = case.D / case.M
    EEY = np.outer(case.E, case.E) * case.Y_mag
    # cos(a - b - phi) expanded so each step needs only 2n trig evaluations
    Gt = (EEY * np.cos(case.Y_ang)).T
    Bt = (EEY * np.sin(case.Y_ang)).T
    Pm_over_M = case.Pm * Minv
    n = case.n

    def drift(x):
        delta, omega = x[:, :n], x[:, n:]
        c, s = np.cos(delta), np.sin(delta)
        pe = c * (c @ Gt - s @ Bt) + s * (s @ Gt + c @ Bt)
        f = np.concatenate([omega, Pm_over_M - pe * Minv - DM * omega], axis=1)
        if extra is not None:
            f += extra(x)
        return f

    return drift


def _initial_state(cfg, x_star):
    if cfg.initial_state is None:
        return x_star.copy()
    x0 = np.asarray(cfg.initial_state, dtype=float)
    if x0.shape != x_star.shape:
        raise DimensionError(f"initial state must have length {x_star.shape[0]}")
    return x0.copy()


def _nonlinear_noise_gain(case):
    n = case.n
    gain = np.zeros((2 * n, n))
    gain[n:, :] = -np.diag(case.E ** 2 * case.G * case.sigma / case.M)
    return gain


def _seed_list(cfg, seeds):
    seeds = [cfg.seed] if seeds is None else [int(s) for s in seeds]
    if not seeds:
        raise ConfigurationError("at least one seed is required")
    return seeds


def simulate_nonlinear(case: PowerCase, op: OperatingPoint, cfg: SimConfig) -> Trajectory:
    """Ambient trajectory of the stochastic swing equations.

    Load noise enters only the speed equations as
    ``-E_i^2 G_ii sigma_i dW_i / M_i``.
    """
    return nonlinear_ensemble(case, op, cfg, [cfg.seed])[0]


def nonlinear_ensemble(case: PowerCase, op: OperatingPoint, cfg: SimConfig, seeds) -> list[Trajectory]:
    """`simulate_nonlinear` for several seeds, integrated side by side."""
    if not op.converged:
        raise ConfigurationError("operating point did not converge")
    if cfg.scheme == "exact":
        raise ConfigurationError("the exact scheme applies to linear models only")
    seeds = _seed_list(cfg, seeds)
    x_star = np.concatenate([op.delta_star, np.zeros(case.n)])
    x0 = np.tile(_initial_state(cfg, x_star), (len(seeds), 1))
    states = _integrate(_nonlinear_drift(case), x0, _nonlinear_noise_gain(case), cfg,
                        seeds, op.delta_star)
    return _pack(states, cfg.dt, seeds, "nonlinear")


def simulate_linear(model, cfg: SimConfig, B=None, x_star=None) -> Trajectory:
    """Trajectory of the OU process ``dx = A x dt + B dW``.

    ``model`` is a `GroundTruthModel` or a bare state matrix (then ``B`` is
    required).  States are deviations added to ``x_star``: zero by default,
    or the model's operating point.
    """
    return linear_ensemble(model, cfg, [cfg.seed], B=B, x_star=x_star)[0]


def linear_ensemble(model, cfg: SimConfig, seeds, B=None, x_star=None) -> list[Trajectory]:
    if isinstance(model, GroundTruthModel):
        A = model.A
        B = model.B if B is None else B
        if x_star is None and model.op is not None:
            x_star = np.concatenate([model.op.delta_star, np.zeros(model.A.shape[0] // 2)])
    else:
        A = np.asarray(model, dtype=float)
        if B is None:
            raise ConfigurationError("B is required when passing a bare state matrix")
    B = np.asarray(B, dtype=float)
    n2 = A.shape[0]
    if A.shape != (n2, n2) or B.ndim != 2 or B.shape[0] != n2:
        raise DimensionError("A must be square and B must have as many rows as A")
    seeds = _seed_list(cfg, seeds)
    x_star = np.zeros(n2) if x_star is None else np.asarray(x_star, dtype=float)
    x0 = np.tile(_initial_state(cfg, x_star) - x_star, (len(seeds), 1))
    transition = _exact_transition(A, B, cfg.dt) if cfg.scheme == "exact" else None
    At = A.T
    states = _integrate(lambda x: x @ At, x0, B, cfg, seeds, np.zeros(n2 // 2), transition)
    return _pack(states, cfg.dt, seeds, "linear", offset=x_star)


def _exact_transition(A, B, dt):
    """``(F, L)`` with ``x_{k+1} = F x_k + L z_k``, ``z_k`` standard normal."""
    # Van Loan block exponential gives F and the integrated noise covariance
    n2 = A.shape[0]
    blk = np.zeros((2 * n2, 2 * n2))
    blk[:n2, :n2] = -A
    blk[:n2, n2:] = B @ B.T
    blk[n2:, n2:] = A.T
    E = expm(blk * dt)
    F = E[n2:, n2:].T
    Qd = F @ E[:n2, n2:]
    w, V = np.linalg.eigh(0.5 * (Qd + Qd.T))
    w = np.clip(w, 0.0, None)
    return F, V * np.sqrt(w)


def simulate_closed_loop(case: PowerCase, op: OperatingPoint, plan, cfg: SimConfig,
                         excitation: float = 0.0, noise: bool = False) -> Trajectory:
    """Nonlinear run with the state feedback ``B_c K (x - x*)`` switched in.

    The feedback is added to the state derivative, so its speed rows act as a
    power injection divided by inertia and the linearisation of the
    controlled plant is exactly ``A + B_c K``.  ``excitation`` sets
    ``x0 = x* + excitation * Re(phi_k)`` for the plan's target mode unless
    ``cfg.initial_state`` is given.
    """
    n = case.n
    K = np.asarray(plan.K, dtype=float)
    Bc = np.asarray(plan.B_c, dtype=float)
    if K.shape != (2 * n, 2 * n) or Bc.shape != (2 * n, 2 * n):
        raise DimensionError(f"plan is sized for {K.shape[0] // 2} machines, case has {n}")
    if cfg.scheme == "exact":
        raise ConfigurationError("the exact scheme applies to linear models only")
    x_star = np.concatenate([op.delta_star, np.zeros(n)])
    gain_t = (Bc @ K).T
    if cfg.initial_state is None:
        x0 = x_star + excitation * np.real(np.asarray(plan.target_vector))
    else:
        x0 = _initial_state(cfg, x_star)
    drift = _nonlinear_drift(case, extra=lambda x: (x - x_star) @ gain_t)
    G = _nonlinear_noise_gain(case) if noise else np.zeros((2 * n, n))
    states = _integrate(drift, x0[None, :], G, cfg, [cfg.seed], op.delta_star)
    return _pack(states, cfg.dt, [cfg.seed], "closed-loop")[0]


def emulate_pmu(traj: Trajectory, sample_rate: float, noise_std_angle: float = 0.0,
                noise_std_speed: float = 0.0, seed: int | None = None) -> PmuWindow:
    """Decimate a trajectory to the PMU rate and add white measurement noise."""
    stride_f = 1.0 / (sample_rate * traj.dt)
    stride = int(round(stride_f))
    if stride < 1 or abs(stride_f - stride) > 1e-9 * max(stride_f, 1.0):
        raise ConfigurationError(
            f"sample rate {sample_rate} Hz is not an integer divisor of the "
            f"integration rate {1.0 / traj.dt:g} Hz")
    clean = traj.states[::stride]
    n = traj.n
    seed = traj.seed if seed is None else seed
    samples = np.array(clean, dtype=float)
    if noise_std_angle > 0 or noise_std_speed > 0:
        z = _standard_normals(seed, 2 * n, clean.shape[0], _MEASUREMENT_STREAM)
        scale = np.r_[np.full(n, noise_std_angle), np.full(n, noise_std_speed)]
        samples += z * scale
    samples.setflags(write=False)
    return PmuWindow(sample_rate=float(sample_rate), samples=samples,
                     noise_std_angle=float(noise_std_angle),
                     noise_std_speed=float(noise_std_speed), seed=seed,
                     meta={"source_dt": traj.dt, "model_tag": traj.model_tag})


def _csv_header(n):
    return ["t"] + [f"delta_{i + 1}" for i in range(n)] + [f"omega_{i + 1}" for i in range(n)]


def write_csv(data, path) -> None:
    """Write a `Trajectory` or `PmuWindow` as ``t,delta_1..,omega_1..`` CSV."""
    t = data.times
    states = data.states if isinstance(data, Trajectory) else data.samples
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(_csv_header(states.shape[1] // 2))
        for ti, row in zip(t, states):
            w.writerow([repr(float(ti))] + [format(v, ".17g") for v in row])


def read_pmu_csv(path, sample_rate: float | None = None) -> PmuWindow:
    """Read PMU samples from CSV; the rate is inferred from the time column if omitted."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise InsufficientDataError(f"{path} is empty")
    header = rows[0]
    if not header or header[0] != "t" or (len(header) - 1) % 2:
        raise ConfigurationError(f"{path}: header must be t,delta_1..delta_n,omega_1..omega_n")
    n = (len(header) - 1) // 2
    if header != _csv_header(n):
        raise ConfigurationError(f"{path}: unexpected column names {header}")
    try:
        data = np.array([[float(v) for v in r] for r in rows[1:] if r], dtype=float)
    except ValueError as exc:
        raise ConfigurationError(f"{path}: {exc}") from None
    if data.shape[0] < 2:
        raise InsufficientDataError(f"{path} holds fewer than two samples")
    if sample_rate is None:
        spacing = np.diff(data[:, 0])
        if np.any(spacing <= 0):
            raise ConfigurationError(f"{path}: time column must increase")
        sample_rate = 1.0 / float(np.median(spacing))
    return PmuWindow(sample_rate=float(sample_rate), samples=data[:, 1:], meta={"source": str(path)})


def read_trajectory_csv(path, seed: int = 0) -> Trajectory:
    """Read a trajectory written by `write_csv`; ``dt`` comes from the time column."""
    window = read_pmu_csv(path)
    return Trajectory(dt=1.0 / window.sample_rate, states=np.asarray(window.samples),
                      seed=seed, model_tag="csv")
