"""Penalized least-squares objective on the factors and its gradient.

``F(Z) = f(Z) + lam * g(Z)`` with

    f(Z) = ||(I - G G^*)(U V^*)||_F^2 + p^{-1} <P_Omega(G^*(U V^*) - y), G^*(U V^*) - y>
    g(Z) = 1/2 ||U^* U - V^* V||_F^2

The gradient follows the conjugate (Wirtinger) convention ``dF/d conj(Z)``:
along a real perturbation ``E`` the directional derivative is
``2 Re <grad F, E>``.  Nothing here forms the lifted ``R x Cl`` matrix; the
Hankel-violation term uses ``||A||_F^2 - ||G^* A||_2^2`` with ``||U V^*||_F^2``
taken from the ``r x r`` Gram matrices.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .factor_linalg import FactorPair
from .hankel_core import HankelShape, ShapeError, g_vector_times_factor, gstar_factored
from .sampling import SampleSet


@dataclass(frozen=True)
class ObjectiveContext:
    """Data for one recovery problem.

    ``y_obs`` is ``D x`` on the observed entries and zero elsewhere; sampling
    multiplicities come from ``samples``.
    """

    shape: HankelShape
    samples: SampleSet
    y_obs: np.ndarray
    lam: float = 0.25

    def __post_init__(self):
        y = np.asarray(self.y_obs, dtype=complex).reshape(-1)
        if y.size != self.shape.n or self.samples.n != self.shape.n:
            raise ShapeError("observations, samples and shape disagree on n")
        if self.lam < 0:
            raise ValueError("lam must be nonnegative")
        y = np.where(self.samples.multiplicity > 0, y, 0)
        object.__setattr__(self, "y_obs", y)

    @property
    def p(self) -> float:
        return self.samples.p


@dataclass(frozen=True)
class Evaluation:
    """Objective pieces cached for reuse by the gradient."""

    F: float
    f: float
    g: float
    s: np.ndarray  # G^*(U V^*)
    UU: np.ndarray
    VV: np.ndarray


def _check(ctx: ObjectiveContext, Z: FactorPair):
    if Z.U.shape[0] != ctx.shape.rows or Z.V.shape[0] != ctx.shape.cols:
        raise ShapeError(
            f"factors {Z.U.shape}/{Z.V.shape} do not match lift "
            f"{ctx.shape.rows}x{ctx.shape.cols}"
        )


def _g_from_grams(UU, VV) -> float:
    return 0.5 * float(np.linalg.norm(UU - VV) ** 2)


def evaluate(ctx: ObjectiveContext, Z: FactorPair) -> Evaluation:
    _check(ctx, Z)
    UU = Z.U.conj().T @ Z.U
    VV = Z.V.conj().T @ Z.V
    s = gstar_factored(ctx.shape, Z.U, Z.V)
    lifted_sq = float(np.vdot(UU, VV).real)  # trace(UU @ VV), UU Hermitian
    hankel_gap = max(lifted_sq - float(np.vdot(s, s).real), 0.0)
    resid = s - ctx.y_obs
    data = float(ctx.samples.multiplicity @ (np.abs(resid) ** 2)) / ctx.p
    f = hankel_gap + data
    g = _g_from_grams(UU, VV)
    return Evaluation(f + ctx.lam * g, f, g, s, UU, VV)


def gradient(ctx: ObjectiveContext, Z: FactorPair, ev: Evaluation) -> FactorPair:
    """Gradient given a cached :class:`Evaluation` of the same ``Z``."""
    c = ctx.samples.multiplicity
    w = c * (ev.s - ctx.y_obs) / ctx.p - ev.s
    lam = ctx.lam
    gU = g_vector_times_factor(ctx.shape, w, Z.V, "left") + Z.U @ (lam * ev.UU + (1 - lam) * ev.VV)
    gV = g_vector_times_factor(ctx.shape, w, Z.U, "right") + Z.V @ (lam * ev.VV + (1 - lam) * ev.UU)
    return FactorPair(gU, gV)


def eval_f(ctx: ObjectiveContext, Z: FactorPair) -> float:
    return evaluate(ctx, Z).f


def eval_g(Z: FactorPair) -> float:
    return _g_from_grams(Z.U.conj().T @ Z.U, Z.V.conj().T @ Z.V)


def eval_F(ctx: ObjectiveContext, Z: FactorPair) -> float:
    return evaluate(ctx, Z).F


def grad_F(ctx: ObjectiveContext, Z: FactorPair) -> FactorPair:
    return gradient(ctx, Z, evaluate(ctx, Z))
