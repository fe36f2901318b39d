"""Projected gradient descent on the factored Hankel model.

The solver runs a one-step hard-thresholding initialization followed by
projected gradient steps with an Armijo backtracking line search.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field, replace
from typing import Optional, Union

import numpy as np

from .factor_linalg import (
    FactorPair,
    ProjectionParams,
    procrustes,
    project_feasible,
    truncated_svd,
)
from .hankel_core import HankelShape, d_scale, g_apply, make_shape
from .objective import Evaluation, ObjectiveContext, evaluate, gradient
from .sampling import SampleSet
from .signal_lab import SpectralModel, synthesize

log = logging.getLogger(__name__)

TERMINATIONS = ("tol_x", "tol_F", "max_iters", "diverged")


class DegenerateInput(ValueError):
    """All observed values are zero, so the initial lifting vanishes."""


@dataclass(frozen=True)
class LineSearch:
    """Backtracking policy.

    ``eta0=None`` picks ``1 / (2 sigma_1(L0) max(1, c_s r))``.  After an
    accepted step the next trial starts from ``eta / shrink`` when ``grow``.
    """

    eta0: Optional[float] = None
    shrink: float = 0.5
    c_ls: float = 1e-3
    max_trials: int = 30
    grow: bool = True
    enabled: bool = True

    def __post_init__(self):
        if not 0 < self.shrink < 1:
            raise ValueError("shrink factor must lie in (0, 1)")


@dataclass(frozen=True)
class StopRules:
    tol_x: float = 1e-7
    tol_F: float = 1e-5
    max_iters: int = 5000
    max_stalls: int = 5


@dataclass(frozen=True)
class PGDConfig:
    """Solver settings.

    ``mu="auto"`` sets the row bound to ``mu_margin`` times the largest row
    norm of the unprojected initial factors.
    """

    r: int
    lam: float = 0.25
    eps0: float = 1 / 11
    mu: Union[float, str] = "auto"
    mu_margin: float = 1.05
    step: LineSearch = field(default_factory=LineSearch)
    stop: StopRules = field(default_factory=StopRules)
    svd_tol: float = 1e-10
    seed: int = 0

    def __post_init__(self):
        if self.r < 1:
            raise ValueError("rank must be >= 1")
        if self.lam < 0:
            raise ValueError("lam must be nonnegative")
        if not 0 < self.eps0 < 1:
            raise ValueError("eps0 must lie in (0, 1)")
        if self.mu != "auto" and not float(self.mu) > 0:
            raise ValueError("mu must be positive or 'auto'")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, obj: dict) -> "PGDConfig":
        obj = dict(obj)
        step = LineSearch(**obj.pop("step", {}))
        stop = StopRules(**obj.pop("stop", {}))
        return cls(step=step, stop=stop, **obj)


@dataclass
class StepRecord:
    F: float
    eta: float
    accepted: bool
    trials: int
    x_change: float = math.nan
    dist: float = math.nan


@dataclass
class SolveResult:
    x_rec: np.ndarray
    Z_final: FactorPair
    iterations: int
    history: list
    termination_reason: str
    F0: float = math.nan
    params: Optional[ProjectionParams] = None

    def to_dict(self, include_history: bool = True) -> dict:
        x = np.asarray(self.x_rec).reshape(-1)
        out = {
            "x_rec": [[v.real, v.imag] for v in x],
            "shape": list(np.shape(self.x_rec)),
            "iterations": self.iterations,
            "termination_reason": self.termination_reason,
            "F0": self.F0,
        }
        if include_history:
            out["history"] = [asdict(h) for h in self.history]
        return out

    def to_json(self, include_history: bool = True) -> str:
        return json.dumps(self.to_dict(include_history))


def _observed_y(shape: HankelShape, samples: SampleSet, x_obs) -> np.ndarray:
    x = np.asarray(x_obs, dtype=complex).reshape(-1)
    if x.size != shape.n:
        raise ValueError(f"observations have {x.size} entries, expected {shape.n}")
    x = np.where(samples.multiplicity > 0, x, 0)
    return d_scale(shape, x, "forward")


def initialize(shape: HankelShape, samples: SampleSet, x_obs, config: PGDConfig):
    """One-step hard thresholding of the rescaled observations, then trimming.

    Returns
    -------
    Z0 : FactorPair
    params : ProjectionParams
    sigma1 : float
        Leading singular value of ``L0``.
    """
    r = config.r
    if r > min(shape.rows, shape.cols):
        raise ValueError(f"rank {r} exceeds lifted size {shape.rows}x{shape.cols}")
    y = _observed_y(shape, samples, x_obs)
    scaled = samples.multiplicity * y / samples.p
    if not np.any(scaled):
        raise DegenerateInput("all observed values are zero")
    U, s, V = truncated_svd(g_apply(shape, scaled), r, tol=config.svd_tol, seed=config.seed)
    if s[0] == 0:
        raise DegenerateInput("initial lifting has no energy")
    root = np.sqrt(s)
    Zt = FactorPair(U * root, V * root)
    sigma = s[0] / (1 - config.eps0)
    if config.mu == "auto":
        rowmax = max(np.linalg.norm(Zt.U, axis=1).max(), np.linalg.norm(Zt.V, axis=1).max())
        bound = config.mu_margin * rowmax
        mu = shape.n * bound**2 / (shape.c_s * r * sigma)
    else:
        mu = float(config.mu)
    params = ProjectionParams(mu=mu, sigma=sigma, c_s=shape.c_s, r=r, n=shape.n)
    return project_feasible(Zt, params), params, float(s[0])


def default_eta0(shape: HankelShape, r: int, sigma1: float) -> float:
    return 1.0 / (2.0 * sigma1 * max(1.0, shape.c_s * r))


def step(ctx: ObjectiveContext, Z: FactorPair, params: ProjectionParams, policy: LineSearch,
         eta: float, ev: Optional[Evaluation] = None):
    """One projected gradient step with backtracking.

    Returns ``(Z_new, ev_new, record)``.  When the line search fails the input
    iterate is returned with ``record.accepted`` false.  With
    ``policy.enabled`` false the step ``eta`` is taken unconditionally.
    """
    ev = ev or evaluate(ctx, Z)
    grad = gradient(ctx, Z, ev)
    gnorm2 = grad.norm() ** 2
    if math.sqrt(gnorm2) <= 1e-14 * (1 + ev.F):
        return Z, ev, StepRecord(ev.F, 0.0, True, 0)
    trials = 0
    while True:
        trials += 1
        cand = project_feasible(Z - eta * grad, params)
        ev_c = evaluate(ctx, cand)
        if not policy.enabled:
            return cand, ev_c, StepRecord(ev_c.F, eta, True, trials)
        if ev_c.F <= ev.F - policy.c_ls * eta * gnorm2 and ev_c.F < ev.F:
            return cand, ev_c, StepRecord(ev_c.F, eta, True, trials)
        if trials >= policy.max_trials:
            return Z, ev, StepRecord(ev.F, eta, False, trials)
        eta *= policy.shrink


def balanced_factors(shape: HankelShape, y, r: int) -> FactorPair:
    """``[U sqrt(S); V sqrt(S)]`` from the rank-``r`` SVD of ``G y``."""
    U, s, V = truncated_svd(g_apply(shape, y), r)
    root = np.sqrt(s)
    return FactorPair(U * root, V * root)


def _truth_factors(shape, truth, r):
    if truth is None:
        return None
    if isinstance(truth, SpectralModel):
        x = synthesize(truth, shape.dims)
    else:
        x = np.asarray(truth)
    return balanced_factors(shape, d_scale(shape, x.reshape(-1), "forward"), r)


def reconstruct(shape: HankelShape, ev: Evaluation) -> np.ndarray:
    return d_scale(shape, ev.s, "inverse")


def solve(shape: HankelShape, samples: SampleSet, x_obs, config: PGDConfig,
          truth=None) -> SolveResult:
    """Run the full solver.

    Parameters
    ----------
    x_obs : array_like
        Signal values (flat or shaped as ``shape.dims``); only entries at
        observed indices are read.
    truth : SpectralModel or array_like, optional
        Ground truth for per-iteration Procrustes distances.
    """
    y = _observed_y(shape, samples, x_obs)
    ctx = ObjectiveContext(shape, samples, y, config.lam)
    Z, params, sigma1 = initialize(shape, samples, x_obs, config)
    M = _truth_factors(shape, truth, config.r)
    stop = config.stop
    eta = config.step.eta0 or default_eta0(shape, config.r, sigma1)
    ev = evaluate(ctx, Z)
    F0 = ev.F
    # F cannot be resolved below roundoff of its largest term
    floor = 1e-13 * max(F0, float(samples.multiplicity @ np.abs(y) ** 2) / samples.p)
    x_prev = reconstruct(shape, ev)
    history = []
    stalls = 0
    reason = "max_iters"
    for _ in range(stop.max_iters):
        F_prev = ev.F
        Z, ev, rec = step(ctx, Z, params, config.step, eta, ev)
        x_new = reconstruct(shape, ev)
        nx = np.linalg.norm(x_prev)
        rec.x_change = float(np.linalg.norm(x_new - x_prev) / nx) if nx else math.inf
        if M is not None:
            rec.dist = procrustes(Z, M)[1]
        history.append(rec)
        x_prev = x_new
        if not rec.accepted:
            stalls += 1
            eta = rec.eta
            if ev.F <= floor:
                reason = "tol_F"
                break
            if stalls >= stop.max_stalls:
                reason = "diverged"
                break
            continue
        stalls = 0
        if rec.eta > 0:
            eta = rec.eta / config.step.shrink if config.step.grow else rec.eta
        if rec.trials == 0:
            reason = "tol_F"  # stationary point
            break
        if rec.x_change <= stop.tol_x:
            reason = "tol_x"
            break
        if F_prev > 0 and abs(F_prev - ev.F) / F_prev <= stop.tol_F:
            reason = "tol_F"
            break
    x_rec = reconstruct(shape, ev)
    if shape.d > 1:
        x_rec = x_rec.reshape(shape.dims)
    log.debug("solve: r=%d iterations=%d reason=%s F=%.3e", config.r, len(history), reason, ev.F)
    return SolveResult(x_rec, Z, len(history), history, reason, F0, params)


def observed_residual(samples: SampleSet, x_rec, x_obs) -> float:
    """``||P(x_rec - x_obs)|| / ||P(x_obs)||`` over the sampled entries."""
    c = samples.multiplicity
    x_rec = np.asarray(x_rec).reshape(-1)
    x_obs = np.asarray(x_obs).reshape(-1)
    num = np.linalg.norm(c * (x_rec - x_obs))
    den = np.linalg.norm(c * x_obs)
    return float(num / den) if den else math.inf


@dataclass
class RankSweep:
    chosen_r: int
    residuals: dict
    result: SolveResult
    results: dict


def rank_sweep(shape: HankelShape, samples: SampleSet, x_obs, base_config: PGDConfig,
               r_max: int, improvement_threshold: float = 1.25, exhaustive: bool = False,
               residual_floor: float = 0.0) -> RankSweep:
    """Increase the model order while the observed residual keeps improving.

    Runs ``r = 1, 2, ...``; stops once ``res[r-1] / res[r]`` drops below
    ``improvement_threshold`` (choosing ``r - 1``) or the residual of the
    current rank is already at ``residual_floor``.  ``exhaustive`` keeps
    evaluating up to ``r_max`` for the full curve without changing the choice.
    """
    if r_max < 1:
        raise ValueError("r_max must be >= 1")
    residuals, results = {}, {}
    chosen = None
    for r in range(1, r_max + 1):
        res = solve(shape, samples, x_obs, replace(base_config, r=r))
        results[r] = res
        residuals[r] = observed_residual(samples, res.x_rec, x_obs)
        if chosen is None:
            if r > 1 and residuals[r - 1] < improvement_threshold * residuals[r]:
                chosen = r - 1
            elif residuals[r] <= residual_floor:
                chosen = r
        if chosen is not None and not exhaustive:
            break
    if chosen is None:
        chosen = r_max
    return RankSweep(chosen, residuals, results[chosen], results)


def solve_instance(instance: dict) -> SolveResult:
    """Solve a ProblemInstance dictionary (see :func:`load_instance`)."""
    shape, samples, x_obs, config = load_instance(instance)
    return solve(shape, samples, x_obs, config)


def load_instance(obj: dict):
    """Parse ``{dims, pencil?, samples, observed, config}``.

    ``observed`` lists ``[re, im]`` pairs aligned with ``samples.indices``.
    """
    shape = make_shape(obj["dims"], obj.get("pencil"))
    samples = SampleSet.from_dict(obj["samples"])
    vals = np.array([complex(re, im) for re, im in obj["observed"]])
    if vals.size != samples.m:
        raise ValueError("observed values must align with sample indices")
    x_obs = np.zeros(shape.n, dtype=complex)
    x_obs[samples.indices] = vals
    config = PGDConfig.from_dict(obj["config"])
    return shape, samples, x_obs, config


def dump_instance(shape: HankelShape, samples: SampleSet, x_obs, config: PGDConfig) -> dict:
    vals = np.asarray(x_obs).reshape(-1)[samples.indices]
    return {
        "dims": list(shape.dims),
        "pencil": list(shape.pencil),
        "samples": samples.to_dict(),
        "observed": [[v.real, v.imag] for v in vals],
        "config": config.to_dict(),
    }
