"""Fast paths checked against the dense reference implementations.

Each check pairs a fast routine with its oracle counterpart:

=====================================  ===================================
fast path                              oracle
=====================================  ===================================
``HankelShape.joint_weights``          ``reference_oracle.dense_weights``
``HankelLift`` / ``g_apply``           ``reference_oracle.dense_g``
``gstar_factored``                     ``reference_oracle.dense_gstar``
``g_vector_times_factor``              ``reference_oracle.dense_g`` products
``objective.eval_F``                   ``reference_oracle.naive_F``
``objective.grad_F``                   ``reference_oracle.dense_grad``
``factor_linalg.truncated_svd``        ``reference_oracle.dense_svd``
=====================================  ===================================
"""
from __future__ import annotations

import sys

import numpy as np

from . import reference_oracle as ro
from .factor_linalg import FactorPair, truncated_svd
from .hankel_core import g_apply, g_vector_times_factor, gstar_factored, make_shape
from .objective import ObjectiveContext, eval_F, grad_F
from .sampling import WITH_REPLACEMENT, draw
from .signal_lab import complex_gaussian

CASES = [((16,), None), ((7,), (2,)), ((6, 5), (2, 3)), ((8, 8), None), ((4, 5, 6), None)]


def _rel(a, b) -> float:
    a, b = np.asarray(a), np.asarray(b)
    den = max(np.linalg.norm(b), 1e-300)
    return float(np.linalg.norm(a - b) / den)


def checks(seed: int = 0):
    """Yield ``(name, error, tolerance)`` triples."""
    rng = np.random.default_rng(seed)
    for dims, pencil in CASES:
        shape = make_shape(dims, pencil)
        tag = "x".join(map(str, dims))
        r = min(3, shape.rows, shape.cols)
        z = complex_gaussian(rng, shape.n)
        U = complex_gaussian(rng, (shape.rows, r))
        V = complex_gaussian(rng, (shape.cols, r))
        dense = ro.dense_g(shape, z)
        yield f"weights {tag}", _rel(shape.joint_weights.ravel(), ro.dense_weights(shape)), 0.0
        yield f"lift {tag}", _rel(g_apply(shape, z, dense=True), dense), 1e-13
        yield f"isometry {tag}", _rel(ro.dense_gstar(shape, g_apply(shape, z, dense=True)), z), 1e-12
        yield f"gstar_factored {tag}", _rel(gstar_factored(shape, U, V),
                                            ro.dense_gstar(shape, U @ V.conj().T)), 1e-11
        yield f"G w @ V {tag}", _rel(g_vector_times_factor(shape, z, V, "left"), dense @ V), 1e-11
        yield f"(G w)^* @ U {tag}", _rel(g_vector_times_factor(shape, z, U, "right"),
                                         dense.conj().T @ U), 1e-11

        m = max(1, shape.n // 2)
        samples = draw(shape.n, m, WITH_REPLACEMENT, seed=int(rng.integers(2**31)))
        ctx = ObjectiveContext(shape, samples, complex_gaussian(rng, shape.n))
        Z = FactorPair(U, V)
        yield f"objective {tag}", abs(eval_F(ctx, Z) - ro.naive_F(ctx, Z)) / ro.naive_F(ctx, Z), 1e-11
        g, gd = grad_F(ctx, Z), ro.dense_grad(ctx, Z)
        yield f"gradient {tag}", _rel(g.stacked(), gd.stacked()), 1e-11

        Us, s, Vs = truncated_svd(g_apply(shape, z), r, seed=seed)
        s_ref = ro.dense_svd(dense)[1][:r]
        yield f"truncated_svd {tag}", _rel(s, s_ref), 1e-8


def run_selftest(seed: int = 0, stream=None) -> bool:
    stream = stream or sys.stdout
    ok = True
    for name, err, tol in checks(seed):
        good = err <= tol
        ok &= good
        stream.write(f"{'PASS' if good else 'FAIL'}  {name:<28s} err={err:.2e} tol={tol:.0e}\n")
    stream.write("selftest " + ("passed" if ok else "FAILED") + "\n")
    return ok
