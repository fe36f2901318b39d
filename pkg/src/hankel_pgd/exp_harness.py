"""Seeded Monte Carlo experiment families.

Every trial seed is derived from ``(master seed, experiment kind, cell
coordinates, trial index)`` with :class:`numpy.random.SeedSequence`, so the
tables do not depend on scheduling or on the number of worker processes.
Inside a trial the seed is split into independent streams for the signal
model, the sampling pattern and the noise.
"""
from __future__ import annotations

import csv
import io
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from threadpoolctl import threadpool_limits

from . import reference_oracle
from .hankel_core import d_scale, make_shape
from .pgd_solver import PGDConfig, rank_sweep, solve
from .sampling import WITHOUT_REPLACEMENT, draw
from .signal_lab import SUCCESS_RMSE, add_noise, random_model, rmse, snr_db, synthesize

KINDS = ("phase_transition", "noise", "model_order", "rank_heuristic", "single_recover")
_KIND_CODE = {k: i for i, k in enumerate(KINDS)}

# Stopping rules per experiment family; the phase-transition cap is our own
# choice and is written to every output's metadata.
DEFAULT_PROFILES = {
    "phase_transition": {"stop": {"tol_x": 1e-7, "tol_F": 1e-5, "max_iters": 2500}},
    "noise": {"stop": {"tol_x": 1e-5, "tol_F": 0.0, "max_iters": 5000}},
    "model_order": {"stop": {"tol_x": 1e-6, "tol_F": 0.0, "max_iters": 5000}},
    "rank_heuristic": {"stop": {"tol_x": 1e-5, "tol_F": 0.0, "max_iters": 3000}},
    "single_recover": {},
}

SCALING_NOTE = (
    "3D runs use reduced grids; the reference experiments used 64x128x512 signals, "
    "which exceed a desk-scale budget."
)


class SpecError(ValueError):
    """Invalid experiment specification."""


@dataclass
class ExperimentSpec:
    """One experiment family and its grid.

    ``p_grid`` holds sampling ratios (``m = round(p n)``); ``theta_grid`` noise
    levels; ``r_grid`` model orders.  ``damping`` is ``None`` (undamped),
    ``"scaled"`` (``1/tau`` uniform on ``[N_i/8, N_i/4]`` per axis) or an
    explicit list of per-axis ``[lo, hi]`` ranges.
    """

    kind: str
    dims: tuple = (127,)
    p_grid: list = field(default_factory=list)
    r_grid: list = field(default_factory=list)
    theta_grid: list = field(default_factory=list)
    trials: int = 20
    r_true: int = 3
    r_max: int = 0
    theta: float = 0.0
    separated: bool = False
    damping: object = None
    sampling_mode: str = WITHOUT_REPLACEMENT
    improvement_threshold: float = 1.25
    success_threshold: float = SUCCESS_RMSE
    profile: dict = field(default_factory=dict)
    seed: int = 0

    def validate(self) -> "ExperimentSpec":
        if self.kind not in KINDS:
            raise SpecError(f"unknown experiment kind {self.kind!r}")
        self.dims = tuple(int(N) for N in np.atleast_1d(self.dims))
        try:
            make_shape(self.dims)
        except ValueError as exc:
            raise SpecError(str(exc)) from exc
        if self.trials < 1:
            raise SpecError("trials must be >= 1")
        need = {
            "phase_transition": ("p_grid",),
            "noise": ("p_grid", "theta_grid"),
            "model_order": ("p_grid", "r_grid"),
            "rank_heuristic": ("p_grid",),
            "single_recover": ("p_grid",),
        }[self.kind]
        for name in need:
            if len(getattr(self, name)) == 0:
                raise SpecError(f"{self.kind} needs a nonempty {name}")
        if any(not 0 < p <= 1 for p in self.p_grid):
            raise SpecError("sampling ratios must lie in (0, 1]")
        if self.kind == "noise" and any(t < 0 for t in self.theta_grid):
            raise SpecError("noise levels must be nonnegative")
        if self.kind == "model_order" and not (
            min(self.r_grid) <= self.r_true <= max(self.r_grid) and min(self.r_grid) >= 1
        ):
            raise SpecError("model_order r_grid must bracket r_true")
        if self.kind == "rank_heuristic" and self.r_max < 1:
            raise SpecError("rank_heuristic needs r_max >= 1")
        try:
            self.config(1)
        except (TypeError, ValueError) as exc:
            raise SpecError(f"bad solver profile: {exc}") from exc
        return self

    @property
    def n(self) -> int:
        return math.prod(self.dims)

    def config(self, r: int) -> PGDConfig:
        merged = _merge(DEFAULT_PROFILES[self.kind], self.profile)
        merged = dict(merged, r=r)
        return PGDConfig.from_dict(merged)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["dims"] = list(self.dims)
        return out

    @classmethod
    def from_dict(cls, obj: dict) -> "ExperimentSpec":
        known = {f for f in cls.__dataclass_fields__}
        extra = set(obj) - known
        if extra:
            raise SpecError(f"unknown spec fields: {sorted(extra)}")
        return cls(**obj)


def _merge(base: dict, over: dict) -> dict:
    out = dict(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def trial_seed(master: int, kind: str, cell: tuple, trial: int) -> int:
    """63-bit seed for one trial, a pure function of its coordinates."""
    ss = np.random.SeedSequence(int(master), spawn_key=(_KIND_CODE[kind], *cell, trial))
    hi, lo = ss.generate_state(2, dtype=np.uint32)
    return int((int(hi) << 32 | int(lo)) & (2**63 - 1))


@dataclass
class Instance:
    shape: object
    model: object
    x: np.ndarray
    samples: object
    x_obs: np.ndarray


def make_instance(spec: ExperimentSpec, r_true: int, m: int, theta: float, seed: int) -> Instance:
    """Signal, sampling pattern and (noisy) observations for one trial."""
    model_ss, sample_ss, noise_ss = np.random.SeedSequence(seed).spawn(3)
    dims = spec.dims
    sep = [1.5 / N for N in dims] if spec.separated else None
    if spec.damping == "scaled":
        damping = [[N / 8, N / 4] for N in dims]
    else:
        damping = spec.damping
    model = random_model(len(dims), r_true, sep, damping, rng=np.random.default_rng(model_ss))
    x = synthesize(model, dims).reshape(-1)
    samples = draw(spec.n, m, spec.sampling_mode, seed=sample_ss)
    x_obs = np.where(samples.multiplicity > 0, x, 0)
    if theta > 0:
        x_obs = add_noise(x_obs, samples, theta, rng=np.random.default_rng(noise_ss))
    return Instance(make_shape(dims), model, x, samples, x_obs)


def _m_of(spec, p) -> int:
    """Sample count ``floor(p n)``, guarded against representation error."""
    return max(1, math.floor(p * spec.n + 1e-9))


def _run_trial(task):
    kind, spec_dict, cell, trial, seed = task
    spec = ExperimentSpec.from_dict(spec_dict)
    with threadpool_limits(limits=1):
        return _TRIALS[kind](spec, cell, trial, seed)


def _trial_recover(spec, cell, trial, seed, r=None, r_true=None, theta=None, p=None):
    p = spec.p_grid[cell[0]] if p is None else p
    r_true = spec.r_true if r_true is None else r_true
    theta = spec.theta if theta is None else theta
    r = r_true if r is None else r
    m = _m_of(spec, p)
    inst = make_instance(spec, r_true, m, theta, seed)
    res = solve(inst.shape, inst.samples, inst.x_obs, spec.config(r))
    e = rmse(res.x_rec, inst.x)
    return {
        "p": p, "m": m, "r": r, "trial": trial, "seed": seed, "rmse": e,
        "iterations": res.iterations, "termination": res.termination_reason,
        "success": int(e <= spec.success_threshold),
    }


def _trial_phase(spec, cell, trial, seed):
    p_idx, r = cell
    return _trial_recover(spec, cell, trial, seed, r=r, r_true=r, theta=0.0)


def _trial_noise(spec, cell, trial, seed):
    t_idx, p_idx = cell
    theta = spec.theta_grid[t_idx]
    row = _trial_recover(spec, cell, trial, seed, p=spec.p_grid[p_idx], theta=theta)
    return dict(row, theta=theta)


def _oracle_snr(inst, r):
    shape = inst.shape
    if shape.rows * shape.cols > reference_oracle.SIZE_GUARD:
        return math.nan
    y = d_scale(shape, inst.x, "forward")
    L = reference_oracle.best_rank_approx(reference_oracle.dense_g(shape, y), r)
    return snr_db(d_scale(shape, reference_oracle.dense_gstar(shape, L), "inverse"), inst.x)


def _trial_model_order(spec, cell, trial, seed):
    (r_idx,) = cell
    r = spec.r_grid[r_idx]
    m = _m_of(spec, spec.p_grid[0])
    inst = make_instance(spec, spec.r_true, m, spec.theta, seed)
    res = solve(inst.shape, inst.samples, inst.x_obs, spec.config(r))
    e = rmse(res.x_rec, inst.x)
    return {
        "r_test": r, "m": m, "trial": trial, "seed": seed, "iterations": res.iterations,
        "rmse": e, "snr_out": snr_db(res.x_rec, inst.x), "oracle_snr": _oracle_snr(inst, r),
        "termination": res.termination_reason, "success": int(e <= spec.success_threshold),
    }


def _trial_rank(spec, cell, trial, seed):
    m = _m_of(spec, spec.p_grid[0])
    inst = make_instance(spec, spec.r_true, m, spec.theta, seed)
    sweep = rank_sweep(
        inst.shape, inst.samples, inst.x_obs, spec.config(1), spec.r_max,
        spec.improvement_threshold, exhaustive=True,
    )
    rows, prev = [], None
    for r, res_r in sweep.residuals.items():
        rows.append({
            "trial": trial, "seed": seed, "r": r, "relative_residual": res_r,
            "delta_residual": math.nan if prev is None else prev - res_r,
            "improvement": math.nan if prev is None else (prev / res_r if res_r else math.inf),
            "iterations": sweep.results[r].iterations, "chosen_r": sweep.chosen_r,
        })
        prev = res_r
    return rows


_TRIALS = {
    "phase_transition": _trial_phase,
    "noise": _trial_noise,
    "model_order": _trial_model_order,
    "rank_heuristic": _trial_rank,
    "single_recover": _trial_recover,
}


def run_tasks(tasks: list, threads: int = 1) -> list:
    """Map trials over a process pool; results keep task order."""
    if threads <= 1 or len(tasks) <= 1:
        return [_run_trial(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(_run_trial, tasks, chunksize=max(1, len(tasks) // (4 * threads))))


def _tasks(spec, cell, seed_cell=None):
    sd = spec.to_dict()
    seed_cell = cell if seed_cell is None else seed_cell
    return [
        (spec.kind, sd, cell, t, trial_seed(spec.seed, spec.kind, seed_cell, t))
        for t in range(spec.trials)
    ]


@dataclass
class ExperimentResult:
    kind: str
    trials: list
    summary: list
    extra: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)


def _meta(spec: ExperimentSpec) -> dict:
    meta = {
        "spec": spec.to_dict(),
        "solver_profile": spec.config(1).to_dict(),
        "success_threshold": spec.success_threshold,
    }
    if len(spec.dims) == 3:
        meta["note"] = SCALING_NOTE
    return meta


def run_phase_transition(spec: ExperimentSpec, threads: int = 1) -> ExperimentResult:
    """Success rates over ``(p, r)``; ``r`` grows per ``p`` until every trial
    fails (or ``r_max`` / the lifted size is reached)."""
    spec.validate()
    shape = make_shape(spec.dims)
    r_cap = spec.r_max or min(shape.rows, shape.cols)
    trials, summary, curve = [], [], []
    for p_idx, p in enumerate(spec.p_grid):
        best = 0
        for r in range(1, r_cap + 1):
            rows = run_tasks(_tasks(spec, (p_idx, r)), threads)
            trials.extend(rows)
            wins = sum(row["success"] for row in rows)
            rate = wins / spec.trials
            summary.append({"p": p, "m": _m_of(spec, p), "r": r, "successes": wins,
                            "trials": spec.trials, "success_rate": rate})
            if rate >= 0.8:
                best = r
            if wins == 0:
                break
        curve.append({"p": p, "m": _m_of(spec, p), "r80": best})
    _flag_inversions(summary)
    return ExperimentResult(spec.kind, trials, summary, {"curve": curve}, _meta(spec))


def _flag_inversions(summary: list):
    """Mark cells whose success rate exceeds that of the next-smaller ``r``."""
    prev = {}
    for row in summary:
        last = prev.get(row["p"])
        row["inversion"] = int(last is not None and row["success_rate"] > last)
        prev[row["p"]] = row["success_rate"]


def run_noise(spec: ExperimentSpec, threads: int = 1) -> ExperimentResult:
    """Mean relative error per noise level and sample size.  Trials at the
    same ``(theta, trial)`` share their signal across sample sizes."""
    spec.validate()
    tasks = []
    for t_idx in range(len(spec.theta_grid)):
        for p_idx in range(len(spec.p_grid)):
            tasks += _tasks(spec, (t_idx, p_idx), seed_cell=(t_idx,))
    trials = run_tasks(tasks, threads)
    summary = []
    for t_idx, theta in enumerate(spec.theta_grid):
        for p_idx, p in enumerate(spec.p_grid):
            errs = [row["rmse"] for row in trials if row["theta"] == theta and row["p"] == p]
            mean = float(np.mean(errs))
            summary.append({
                "theta": theta, "snr_db_in": _db(theta), "m": _m_of(spec, p),
                "rmse_mean": mean, "rmse_db_out": _db(mean),
            })
    return ExperimentResult(spec.kind, trials, summary, meta=_meta(spec))


def _db(v: float) -> float:
    return math.inf if v == 0 else -20 * math.log10(v)


def run_model_order(spec: ExperimentSpec, threads: int = 1) -> ExperimentResult:
    """Median iterations and output SNR per tested rank on shared instances."""
    spec.validate()
    tasks = []
    for r_idx in range(len(spec.r_grid)):
        tasks += _tasks(spec, (r_idx,), seed_cell=())
    trials = run_tasks(tasks, threads)
    summary = []
    for r in spec.r_grid:
        rows = [row for row in trials if row["r_test"] == r]
        summary.append({
            "r_test": r,
            "iterations_median": float(np.median([row["iterations"] for row in rows])),
            "snr_out_median": float(np.median([row["snr_out"] for row in rows])),
            "oracle_snr_median": float(np.median([row["oracle_snr"] for row in rows])),
            "success_rate": float(np.mean([row["success"] for row in rows])),
        })
    return ExperimentResult(spec.kind, trials, summary, meta=_meta(spec))


def run_rank_heuristic(spec: ExperimentSpec, threads: int = 1) -> ExperimentResult:
    """Observed-residual curves of the rank-increasing heuristic."""
    spec.validate()
    nested = run_tasks(_tasks(spec, ()), threads)
    trials = [row for rows in nested for row in rows]
    summary = []
    for r in range(1, spec.r_max + 1):
        rows = [row for row in trials if row["r"] == r]
        summary.append({
            "r": r,
            "relative_residual": float(np.median([row["relative_residual"] for row in rows])),
            "delta_residual": float(np.median([row["delta_residual"] for row in rows]))
            if r > 1 else math.nan,
        })
    chosen = [rows[0]["chosen_r"] for rows in nested]
    counts = {str(r): chosen.count(r) for r in sorted(set(chosen))}
    return ExperimentResult(spec.kind, trials, summary, {"chosen_counts": counts}, _meta(spec))


def run_single(spec: ExperimentSpec, threads: int = 1) -> ExperimentResult:
    spec.validate()
    trials = run_tasks(_tasks(spec, (0,)), threads)
    summary = [{
        "p": spec.p_grid[0], "r": spec.r_true, "trials": len(trials),
        "successes": sum(t["success"] for t in trials),
        "rmse_median": float(np.median([t["rmse"] for t in trials])),
    }]
    return ExperimentResult(spec.kind, trials, summary, meta=_meta(spec))


RUNNERS = {
    "phase_transition": run_phase_transition,
    "noise": run_noise,
    "model_order": run_model_order,
    "rank_heuristic": run_rank_heuristic,
    "single_recover": run_single,
}


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    if isinstance(v, complex):
        raise TypeError("complex values must be split into re/im columns")
    return str(v)


def to_csv(rows: list) -> str:
    if not rows:
        return ""
    buf = io.StringIO()
    header = list(rows[0])
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(row.get(k, "")) for k in header])
    return buf.getvalue()


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        f = float(obj)
        return f if math.isfinite(f) else repr(f)
    return obj


def write_result(result: ExperimentResult, out: Optional[str], fmt: str = "csv") -> list:
    """Write trial rows to ``out`` plus ``.summary`` and ``.meta.json``
    siblings; returns the paths written.  ``out=None`` writes nothing."""
    if out is None:
        return []
    path = Path(out)
    path.parent.mkdir(parents=True, exist_ok=True)
    written = []
    if fmt == "csv":
        path.write_text(to_csv(result.trials))
        summ = path.with_name(path.stem + ".summary.csv")
        summ.write_text(to_csv(result.summary))
        written += [path, summ]
        for name, rows in result.extra.items():
            if isinstance(rows, list):
                extra = path.with_name(f"{path.stem}.{name}.csv")
                extra.write_text(to_csv(rows))
                written.append(extra)
    elif fmt == "json":
        doc = {"kind": result.kind, "trials": result.trials, "summary": result.summary,
               **result.extra}
        path.write_text(json.dumps(_jsonable(doc), indent=1, sort_keys=True) + "\n")
        written.append(path)
    else:
        raise SpecError(f"unknown output format {fmt!r}")
    meta = path.with_name(path.stem + ".meta.json")
    meta.write_text(json.dumps(_jsonable({**result.meta, **{
        k: v for k, v in result.extra.items() if not isinstance(v, list)}}),
        indent=1, sort_keys=True) + "\n")
    written.append(meta)
    return written


def default_threads() -> int:
    try:
        return max(1, int(os.environ.get("HANKEL_PGD_THREADS", "1")))
    except ValueError:
        return 1
