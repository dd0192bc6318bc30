"""End-to-end experiment runner: simulate, estimate, analyse, design, evaluate."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import os
import tempfile
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .ambient_sim import SCHEMES, SimConfig, emulate_pmu, linear_ensemble, nonlinear_ensemble
from .case_model import build_ground_truth, load_case, shipped_case_path, solve_equilibrium
from .errors import ConfigurationError, WadcError
from .estimator import (
    DEFAULT_RTOL,
    DETREND_MODES,
    assemble_state_matrix,
    estimate_jacobian,
    estimate_state_matrix,
    projected_error,
    theoretical_covariance,
)
from .modal import decompose, is_translational, match_eigenvalues, modal_report, modal_report_csv, weak_modes
from .wadc import evaluate_plan, make_plan, select_actuators

_SECTIONS = {
    "case": None,
    "sim": {"duration", "dt", "sigma", "seeds", "model", "scheme"},
    "pmu": {"rate", "noise_angle", "noise_speed"},
    "estimation": {"detrend", "rtol", "exact_covariance"},
    "control": {"target", "shift", "actuator_counts"},
    "output_dir": None,
}


@dataclass(frozen=True)
class ExperimentConfig:
    case: str
    seeds: tuple = (0,)
    duration: float = 450.0
    dt: float = 0.005
    sigma: float | None = None
    model: str = "nonlinear"
    scheme: str = "heun"
    rate: float = 20.0
    noise_angle: float = 0.0
    noise_speed: float = 0.0
    detrend: str = "centroid"
    rtol: float = DEFAULT_RTOL
    exact_covariance: bool = False
    target: object = "weakest"
    shift: float = 2.0
    actuator_counts: tuple = (1, 2, 3)
    output_dir: str | None = None
    base_dir: str = "."

    def __post_init__(self):
        if not self.seeds:
            raise ConfigurationError("seed list must not be empty")
        if any(not isinstance(s, int) or s < 0 for s in self.seeds):
            raise ConfigurationError("seeds must be non-negative integers")
        if self.model not in ("nonlinear", "linear"):
            raise ConfigurationError(f"sim.model must be 'nonlinear' or 'linear', got {self.model!r}")
        if self.scheme not in SCHEMES:
            raise ConfigurationError(f"sim.scheme must be one of {SCHEMES}")
        if self.scheme == "exact" and self.model != "linear":
            raise ConfigurationError("the exact scheme needs sim.model = 'linear'")
        if self.detrend not in DETREND_MODES:
            raise ConfigurationError(f"estimation.detrend must be one of {DETREND_MODES}")
        if not self.rate > 0 or not self.duration > 0 or not self.dt > 0:
            raise ConfigurationError("rate, duration and dt must be positive")
        if self.noise_angle < 0 or self.noise_speed < 0:
            raise ConfigurationError("noise standard deviations must be non-negative")
        if not self.shift >= 0:
            raise ConfigurationError("control.shift must be non-negative")
        if not self.actuator_counts or any(int(c) < 1 for c in self.actuator_counts):
            raise ConfigurationError("control.actuator_counts must be positive integers")
        if self.target != "weakest":
            if not (isinstance(self.target, dict) and set(self.target) == {"f", "zeta"}):
                raise ConfigurationError("control.target must be 'weakest' or {\"f\": .., \"zeta\": ..}")
        self.case_path()

    def case_path(self) -> Path:
        p = Path(self.base_dir) / self.case
        if p.is_file():
            return p
        try:
            shipped = shipped_case_path(Path(self.case).name.removesuffix(".json"))
        except (FileNotFoundError, ValueError):
            shipped = None
        if shipped is not None and shipped.is_file():
            return shipped
        raise ConfigurationError(f"case file {self.case!r} not found")

    def to_dict(self) -> dict:
        return {
            "case": self.case,
            "sim": {"duration": self.duration, "dt": self.dt, "sigma": self.sigma,
                    "seeds": list(self.seeds), "model": self.model, "scheme": self.scheme},
            "pmu": {"rate": self.rate, "noise_angle": self.noise_angle, "noise_speed": self.noise_speed},
            "estimation": {"detrend": self.detrend, "rtol": self.rtol,
                           "exact_covariance": self.exact_covariance},
            "control": {"target": self.target, "shift": self.shift,
                        "actuator_counts": list(self.actuator_counts)},
            "output_dir": self.output_dir,
        }

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    @classmethod
    def from_dict(cls, data: dict, base_dir=".") -> "ExperimentConfig":
        if not isinstance(data, dict):
            raise ConfigurationError("config must be a JSON object")
        unknown = set(data) - set(_SECTIONS)
        if unknown:
            raise ConfigurationError(f"unknown config keys: {sorted(unknown)}")
        if "case" not in data:
            raise ConfigurationError("config needs a 'case' entry")
        kw = {"case": data["case"], "output_dir": data.get("output_dir"), "base_dir": str(base_dir)}
        for section, keys in _SECTIONS.items():
            if keys is None or section not in data:
                continue
            body = data[section]
            if not isinstance(body, dict):
                raise ConfigurationError(f"'{section}' must be an object")
            extra = set(body) - keys
            if extra:
                raise ConfigurationError(f"unknown keys in '{section}': {sorted(extra)}")
            kw.update(body)
        for key in ("seeds", "actuator_counts"):
            if key in kw:
                if not isinstance(kw[key], list):
                    raise ConfigurationError(f"'{key}' must be a list")
                kw[key] = tuple(kw[key])
        try:
            return cls(**kw)
        except TypeError as exc:
            raise ConfigurationError(str(exc)) from None

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        path = Path(path)
        try:
            data = json.loads(path.read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise ConfigurationError(f"config file {path} not found") from None
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"{path}: invalid JSON ({exc})") from None
        return cls.from_dict(data, base_dir=path.parent)


@dataclass
class RunReport:
    config: dict
    provenance: dict
    truth: dict
    seeds: list
    summary: dict
    timing: dict = field(default_factory=dict)

    @property
    def all_failed(self) -> bool:
        return all(s.get("error") for s in self.seeds)

    def to_dict(self, timing: bool = True) -> dict:
        out = {"kind": "run_report", "config": self.config, "provenance": self.provenance,
               "truth": self.truth, "seeds": self.seeds, "summary": self.summary}
        if timing:
            out["timing"] = self.timing
        return out


def atomic_write(path, text: str) -> None:
    """Write via a temporary file in the same directory, then rename over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _upper_oscillatory(dec):
    return [dec.pairs[k][0] for k in range(len(dec.pairs)) if not is_translational(dec, k)]


def mode_errors(dec_true, dec_hat) -> dict:
    """Relative frequency and damping-ratio errors (%) for every oscillatory true mode."""
    perm = match_eigenvalues(dec_true.eigenvalues, dec_hat.eigenvalues)
    lam_hat = dec_hat.eigenvalues[perm]
    rows = []
    for i in _upper_oscillatory(dec_true):
        lt, lh = dec_true.eigenvalues[i], lam_hat[i]
        ft, fh = abs(lt.imag) / (2 * np.pi), abs(lh.imag) / (2 * np.pi)
        zt, zh = -lt.real / abs(lt), -lh.real / abs(lh)
        rows.append({"f_true_Hz": ft, "f_est_Hz": fh, "zeta_true": zt, "zeta_est": zh,
                     "f_err_pct": 100 * abs(fh - ft) / ft, "zeta_err_pct": 100 * abs(zh - zt) / abs(zt)})
    return {
        "modes": rows,
        "max_f_err_pct": max(r["f_err_pct"] for r in rows),
        "max_zeta_err_pct": max(r["zeta_err_pct"] for r in rows),
    }


def select_target(dec, target="weakest") -> int:
    """Pair index of the target mode: the weakest, or the one nearest an explicit (f, zeta)."""
    cands = [k for k in range(len(dec.pairs)) if not is_translational(dec, k)]
    if not cands:
        raise ConfigurationError("model has no oscillatory modes")
    if target == "weakest":
        return weak_modes(dec, threshold=np.inf)[0]
    f, z = float(target["f"]), float(target["zeta"])
    return min(cands, key=lambda k: (abs(dec.pair_frequency(k) - f) / max(f, 1e-12)
                                     + abs(dec.pair_damping(k) - z) / max(abs(z), 1e-12), k))


def _control_rows(dec, A_eval, k, cfg, n):
    rows = []
    for count in cfg.actuator_counts:
        count = min(int(count), n)
        plan = make_plan(dec, k, cfg.shift, select_actuators(dec, k, count))
        row = {"count": count, "generators": [g + 1 for g in plan.actuators]}
        for tag, A in A_eval.items():
            rep = evaluate_plan(A, plan, dec if tag == "design" else None)
            row[f"zeta_{tag}"] = rep.zeta_closed
            row[f"displacement_{tag}"] = rep.max_nontarget_displacement
        rows.append(row)
    return rows


def _estimate_one(window, case, cfg):
    t0 = time.perf_counter()
    model = estimate_state_matrix(window, case.M, case.D, detrend=cfg.detrend, rtol=cfg.rtol)
    return model, time.perf_counter() - t0


def run_pipeline(cfg: ExperimentConfig, write: bool = True) -> RunReport:
    """Run every seed through estimation, modal analysis, design and evaluation.

    A stage failure is recorded against its seed and the remaining seeds
    still run.  Outputs are written atomically to ``cfg.output_dir`` when
    ``write`` is true and an output directory is configured.
    """
    t_start = time.perf_counter()
    case = load_case(cfg.case_path())
    if cfg.sigma is not None:
        case = case.with_sigma(cfg.sigma)
    op = solve_equilibrium(case)
    gt = build_ground_truth(case, op)
    n = case.n
    dec_true = decompose(gt.A)
    k_true = select_target(dec_true, cfg.target)
    truth = {
        "target_f_Hz": dec_true.pair_frequency(k_true),
        "target_zeta": dec_true.pair_damping(k_true),
        "control": _control_rows(dec_true, {"design": gt.A}, k_true, cfg, n),
        "modal": modal_report(dec_true),
    }

    windows = {}
    errors = {}
    timing = {}
    if cfg.exact_covariance:
        seeds_run = [None]
    else:
        seeds_run = list(cfg.seeds)
        sim = SimConfig(dt=cfg.dt, duration=cfg.duration, seed=seeds_run[0], scheme=cfg.scheme)
        t0 = time.perf_counter()
        try:
            if cfg.model == "nonlinear":
                trajs = nonlinear_ensemble(case, op, sim, seeds_run)
            else:
                x_star = np.concatenate([op.delta_star, np.zeros(n)])
                trajs = linear_ensemble(gt, sim, seeds_run, x_star=x_star)
            for s, tr in zip(seeds_run, trajs):
                windows[s] = emulate_pmu(tr, cfg.rate, cfg.noise_angle, cfg.noise_speed)
        except WadcError as exc:
            for s in seeds_run:
                errors[s] = exc
        timing["simulation_s"] = time.perf_counter() - t0

    seed_rows = []
    est_times = []
    for s in seeds_run:
        row = {"seed": s}
        try:
            if s in errors:
                raise errors[s]
            if s is None:
                t0 = time.perf_counter()
                cov = theoretical_covariance(gt.A, gt.B)
                J_hat, cond = estimate_jacobian(cov, case.M, case.D, cfg.rtol)
                model = assemble_state_matrix(J_hat, case.M, case.D, cond)
                dt_est = time.perf_counter() - t0
            else:
                model, dt_est = _estimate_one(windows[s], case, cfg)
            est_times.append(dt_est)
            dec_hat = decompose(model.A_hat)
            errs = mode_errors(dec_true, dec_hat)
            k_hat = select_target(dec_hat, cfg.target)
            row.update({
                "J_projected_error": projected_error(model.J_hat, gt.J),
                "truncated": model.conditioning.truncated,
                "max_f_err_pct": errs["max_f_err_pct"],
                "max_zeta_err_pct": errs["max_zeta_err_pct"],
                "modes": errs["modes"],
                "target_f_Hz": dec_hat.pair_frequency(k_hat),
                "target_zeta": dec_hat.pair_damping(k_hat),
                "control": _control_rows(dec_hat, {"design": model.A_hat, "true": gt.A}, k_hat, cfg, n),
                "error": None,
            })
        except WadcError as exc:
            row["error"] = {"type": type(exc).__name__, "message": str(exc)}
        seed_rows.append(row)

    ok = [r for r in seed_rows if not r["error"]]
    summary = {"seeds_ok": len(ok), "seeds_failed": len(seed_rows) - len(ok)}
    if ok:
        summary["median_max_f_err_pct"] = float(np.median([r["max_f_err_pct"] for r in ok]))
        summary["median_max_zeta_err_pct"] = float(np.median([r["max_zeta_err_pct"] for r in ok]))
        summary["median_J_projected_error"] = float(np.median([r["J_projected_error"] for r in ok]))
        table = []
        for j, count in enumerate(cfg.actuator_counts):
            table.append({
                "count": min(int(count), n),
                "median_zeta_true": float(np.median([r["control"][j]["zeta_true"] for r in ok])),
                "median_zeta_design": float(np.median([r["control"][j]["zeta_design"] for r in ok])),
                "truth_designed_zeta": truth["control"][j]["zeta_design"],
            })
        summary["damping_table"] = table

    timing["estimation_s"] = est_times
    timing["total_s"] = time.perf_counter() - t_start
    report = RunReport(
        config=cfg.to_dict(),
        provenance={"config_sha256": cfg.digest(), "version": __version__,
                    "seeds": [s for s in seeds_run]},
        truth=truth, seeds=seed_rows, summary=summary, timing=timing,
    )
    if write and cfg.output_dir is not None:
        write_outputs(report, Path(cfg.base_dir) / cfg.output_dir, dec_true)
    return report


def write_outputs(report: RunReport, out_dir, dec_true=None) -> None:
    out_dir = Path(out_dir)
    atomic_write(out_dir / "report.json", json.dumps(report.to_dict(), indent=2) + "\n")

    buf = io.StringIO()
    w = csv.writer(buf)
    w.writerow(["seed", "max_f_err_pct", "max_zeta_err_pct", "J_projected_error", "error"])
    for r in report.seeds:
        if r["error"]:
            w.writerow([r["seed"], "", "", "", r["error"]["type"]])
        else:
            w.writerow([r["seed"], r["max_f_err_pct"], r["max_zeta_err_pct"], r["J_projected_error"], ""])
    atomic_write(out_dir / "seed_errors.csv", buf.getvalue())

    if "damping_table" in report.summary:
        buf = io.StringIO()
        w = csv.writer(buf)
        w.writerow(["actuator_count", "median_zeta_true_pct", "median_zeta_design_pct",
                    "truth_designed_zeta_pct"])
        for row in report.summary["damping_table"]:
            w.writerow([row["count"], 100 * row["median_zeta_true"], 100 * row["median_zeta_design"],
                        100 * row["truth_designed_zeta"]])
        atomic_write(out_dir / "damping_table.csv", buf.getvalue())
    if dec_true is not None:
        atomic_write(out_dir / "modal_truth.csv", modal_report_csv(report.truth["modal"]))


__all__ = [
    "ExperimentConfig", "RunReport", "atomic_write", "mode_errors", "run_pipeline",
    "select_target", "write_outputs",
]
