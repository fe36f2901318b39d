import json
from dataclasses import replace

import numpy as np
import pytest
from scipy.stats import unitary_group

from hankel_pgd import reference_oracle as ro
from hankel_pgd.factor_linalg import FactorPair, project_feasible
from hankel_pgd.hankel_core import d_scale, make_shape
from hankel_pgd.objective import ObjectiveContext, evaluate
from hankel_pgd.pgd_solver import (
    DegenerateInput,
    LineSearch,
    PGDConfig,
    StopRules,
    balanced_factors,
    dump_instance,
    initialize,
    load_instance,
    rank_sweep,
    reconstruct,
    solve,
    solve_instance,
    step,
)
from hankel_pgd.sampling import WITH_REPLACEMENT, WITHOUT_REPLACEMENT, SampleSet, draw
from hankel_pgd.signal_lab import SpectralModel, random_model, rmse, synthesize

from conftest import cgauss


def instance(n, r, m, seed, mode=WITHOUT_REPLACEMENT, separated=True):
    rng = np.random.default_rng(seed)
    sep = [1.5 / n] if separated else None
    model = random_model(1, r, sep, rng=rng)
    x = synthesize(model, [n])
    samples = draw(n, m, mode, seed=rng)
    return make_shape([n]), model, x, samples, np.where(samples.multiplicity > 0, x, 0)


def test_full_sampling_initialization_is_exact():
    n, r = 40, 3
    shape, model, x, _, _ = instance(n, r, n, 0)
    samples = SampleSet(n, np.arange(n), WITHOUT_REPLACEMENT)
    Z0, params, sigma1 = initialize(shape, samples, x, PGDConfig(r=r))
    ctx = ObjectiveContext(shape, samples, d_scale(shape, x))
    y = d_scale(shape, x)
    assert evaluate(ctx, Z0).F <= 1e-20 * np.linalg.norm(y) ** 2
    rows = np.linalg.norm(Z0.stacked(), axis=1)
    assert rows.max() <= params.bound


def test_initial_spectrum_close_to_truth():
    n = 15
    shape = make_shape([n])
    ratios = []
    for seed in range(100):
        rng = np.random.default_rng(seed)
        x = synthesize(random_model(1, 1, rng=rng), [n])
        samples = draw(n, n, WITH_REPLACEMENT, seed=rng)
        _, _, sigma1 = initialize(shape, samples, x, PGDConfig(r=1))
        truth = np.linalg.svd(ro.dense_g(shape, d_scale(shape, x)), compute_uv=False)[0]
        ratios.append(sigma1 / truth)
    # multiplicities fluctuate per draw; the estimate is accurate on average
    assert abs(np.mean(ratios) - 1) <= 0.25 and abs(np.median(ratios) - 1) <= 0.25


def test_zero_observations_rejected():
    shape = make_shape([20])
    with pytest.raises(DegenerateInput):
        initialize(shape, draw(20, 10, seed=0), np.zeros(20), PGDConfig(r=1))


def test_rank_larger_than_lift_rejected():
    shape = make_shape([5])
    with pytest.raises(ValueError):
        initialize(shape, draw(5, 5, seed=0), np.ones(5), PGDConfig(r=4))


def _ctx(shape, samples, x):
    return ObjectiveContext(shape, samples, d_scale(shape, x))


def test_step_fixed_point_at_truth():
    shape, _, x, samples, x_obs = instance(63, 2, 40, 1)
    ctx = _ctx(shape, samples, x_obs)
    M = balanced_factors(shape, d_scale(shape, x), 2)
    _, params, sigma1 = initialize(shape, samples, x_obs, PGDConfig(r=2))
    params = replace(params, mu=params.mu * 100)
    Z, _, rec = step(ctx, M, params, LineSearch(), 1 / sigma1)
    assert (Z - M).norm() <= 1e-12 * M.norm()


def test_step_descends_from_random_point():
    shape, _, x, samples, x_obs = instance(31, 2, 20, 2)
    ctx = _ctx(shape, samples, x_obs)
    Z0, params, sigma1 = initialize(shape, samples, x_obs, PGDConfig(r=2))
    rng = np.random.default_rng(0)
    Z = Z0 + 0.1 * FactorPair(cgauss(rng, Z0.U.shape), cgauss(rng, Z0.V.shape))
    Z = project_feasible(Z, params)
    F = evaluate(ctx, Z).F
    Zn, ev, rec = step(ctx, Z, params, LineSearch(), 1 / sigma1)
    assert rec.accepted and ev.F < F


def test_backtracking_rescues_huge_step():
    shape, _, x, samples, x_obs = instance(31, 2, 20, 3)
    ctx = _ctx(shape, samples, x_obs)
    Z0, params, sigma1 = initialize(shape, samples, x_obs, PGDConfig(r=2))
    F0 = evaluate(ctx, Z0).F
    huge = 1e3 / sigma1
    _, ev_free, _ = step(ctx, Z0, params, LineSearch(enabled=False), huge)
    _, ev_bt, rec = step(ctx, Z0, params, LineSearch(), huge)
    assert ev_free.F > F0
    assert rec.accepted and ev_bt.F < F0


def test_noiseless_recovery_operating_point():
    shape, model, x, samples, x_obs = instance(127, 4, 127 // 2, 4)
    res = solve(shape, samples, x_obs, PGDConfig(r=4))
    assert rmse(res.x_rec, x) <= 1e-3


def test_full_observation_fast():
    shape, model, x, _, _ = instance(63, 3, 63, 5)
    samples = SampleSet(63, np.arange(63), WITHOUT_REPLACEMENT)
    res = solve(shape, samples, x, PGDConfig(r=3))
    assert rmse(res.x_rec, x) <= 1e-6 and res.iterations <= 50


def test_deterministic_trace():
    shape, model, x, samples, x_obs = instance(15, 1, 8, 6)
    a = solve(shape, samples, x_obs, PGDConfig(r=1), truth=model)
    b = solve(shape, samples, x_obs, PGDConfig(r=1), truth=model)
    assert [h.F for h in a.history] == [h.F for h in b.history]
    assert np.array_equal(a.x_rec, b.x_rec)


def test_history_monotone_and_feasible():
    shape, model, x, samples, x_obs = instance(63, 3, 38, 7)
    res = solve(shape, samples, x_obs, PGDConfig(r=3))
    Fs = [res.F0] + [h.F for h in res.history]
    assert all(b <= a for a, b in zip(Fs, Fs[1:]))
    prev = res.F0
    for h in res.history:
        if h.accepted and h.trials:
            assert h.F < prev
        prev = h.F
    rows = np.linalg.norm(res.Z_final.stacked(), axis=1)
    assert rows.max() <= res.params.bound + 1e-12


def test_orbit_consistent_reconstruction():
    shape, model, x, samples, x_obs = instance(63, 3, 38, 8)
    res = solve(shape, samples, x_obs, PGDConfig(r=3, stop=StopRules(max_iters=20)))
    ctx = _ctx(shape, samples, x_obs)
    Q = unitary_group.rvs(3, random_state=0)
    a = reconstruct(shape, evaluate(ctx, res.Z_final))
    b = reconstruct(shape, evaluate(ctx, res.Z_final @ Q))
    assert np.max(np.abs(a - b)) <= 1e-12 * np.max(np.abs(a))


def test_geometric_contraction_with_truth():
    n = 127
    shape, model, x, samples, x_obs = instance(n, 2, int(0.6 * n), 9)
    res = solve(shape, samples, x_obs, PGDConfig(r=2), truth=model)
    d = np.array([h.dist for h in res.history])
    ratios = d[1:][-20:] / d[:-1][-20:]
    assert np.median(ratios) <= 0.99


def test_stop_reasons_reported():
    shape, model, x, samples, x_obs = instance(31, 2, 20, 10)
    res = solve(shape, samples, x_obs, PGDConfig(r=2, stop=StopRules(max_iters=3, tol_x=0, tol_F=0)))
    assert res.termination_reason == "max_iters" and res.iterations == 3


def test_config_round_trip():
    cfg = PGDConfig(r=3, mu=2.0, step=LineSearch(shrink=0.7), stop=StopRules(tol_x=1e-5))
    assert PGDConfig.from_dict(json.loads(json.dumps(cfg.to_dict()))) == cfg
    with pytest.raises(ValueError):
        PGDConfig(r=0)
    with pytest.raises(ValueError):
        PGDConfig(r=1, eps0=1.5)
    with pytest.raises(ValueError):
        LineSearch(shrink=1.0)


def test_instance_round_trip():
    shape, model, x, samples, x_obs = instance(31, 2, 20, 11)
    doc = json.loads(json.dumps(dump_instance(shape, samples, x_obs, PGDConfig(r=2))))
    shape2, samples2, x_obs2, cfg = load_instance(doc)
    assert shape2 == shape and samples2 == samples and cfg.r == 2
    np.testing.assert_array_equal(x_obs2, x_obs)
    res = solve_instance(doc)
    assert rmse(res.x_rec, x) <= 1e-3
    back = json.loads(res.to_json())
    assert back["iterations"] == res.iterations


def test_rank_sweep_trivial_and_elbow():
    n = 63
    shape, model, x, samples, x_obs = instance(n, 3, int(0.6 * n), 12, separated=False)
    cfg = PGDConfig(r=1, stop=StopRules(tol_x=1e-5, tol_F=0.0, max_iters=3000))
    one = rank_sweep(shape, samples, x_obs, cfg, r_max=1)
    assert one.chosen_r == 1 and list(one.residuals) == [1]
    sweep = rank_sweep(shape, samples, x_obs, cfg, r_max=5)
    assert sweep.chosen_r == 3
    res = sweep.residuals
    assert res[2] / res[3] >= 10 and res[3] / res[4] < 1.25


def test_rank_sweep_on_pure_noise():
    n = 63
    rng = np.random.default_rng(13)
    shape = make_shape([n])
    samples = draw(n, 38, seed=rng)
    noise = cgauss(rng, n) * (samples.multiplicity > 0)
    cfg = PGDConfig(r=1, stop=StopRules(tol_x=1e-5, tol_F=0.0, max_iters=500))
    sweep = rank_sweep(shape, samples, noise, cfg, r_max=6, exhaustive=True)
    assert sweep.chosen_r <= 2
    res = np.array(list(sweep.residuals.values()))
    assert np.all(res[:-1] / res[1:] < 2)


def test_2d_recovery():
    rng = np.random.default_rng(14)
    dims = (12, 12)
    model = random_model(2, 2, separation=[1.5 / 12, 1.5 / 12], rng=rng)
    x = synthesize(model, dims)
    samples = draw(144, 72, seed=rng)
    shape = make_shape(dims)
    res = solve(shape, samples, x.ravel(), PGDConfig(r=2))
    assert res.x_rec.shape == dims
    assert rmse(res.x_rec, x) <= 1e-3


def test_damped_recovery():
    rng = np.random.default_rng(15)
    n = 63
    model = random_model(1, 2, separation=[1.5 / n], damping_ranges=[[n / 8, n / 4]], rng=rng)
    x = synthesize(model, [n])
    samples = draw(n, 40, seed=rng)
    res = solve(make_shape([n]), samples, x, PGDConfig(r=2))
    assert rmse(res.x_rec, x) <= 1e-3


def test_truth_as_signal():
    shape, model, x, samples, x_obs = instance(31, 1, 20, 16)
    a = solve(shape, samples, x_obs, PGDConfig(r=1), truth=model)
    b = solve(shape, samples, x_obs, PGDConfig(r=1), truth=x)
    np.testing.assert_allclose([h.dist for h in a.history], [h.dist for h in b.history], rtol=1e-8)
    assert isinstance(model, SpectralModel)
