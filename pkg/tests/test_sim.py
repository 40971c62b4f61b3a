from __future__ import annotations

import numpy as np
import pytest
from conftest import identity_cost, random_system

from gccsynth import sim
from gccsynth.model import (DeltaRealization, DimensionError, close_loop, closed_loop_delta_bar,
                            sample_delta_batch, stage_cost, step)
from gccsynth.synth import lqr, synth_lemma


@pytest.fixture(scope="module")
def gcc1(ex1):
    return synth_lemma(ex1.system, ex1.cost)


def test_config_validation():
    with pytest.raises(ValueError):
        sim.SimConfig(runs=0)
    with pytest.raises(ValueError):
        sim.SimConfig(horizon=-1)
    with pytest.raises(ValueError):
        sim.SimConfig(seed=-1)


def test_deterministic(ex1, gcc1):
    cfg = sim.SimConfig(runs=200, horizon=50, seed=17)
    a = sim.run(ex1.system, ex1.cost, gcc1.k, cfg)
    b = sim.run(ex1.system, ex1.cost, gcc1.k, cfg)
    assert np.array_equal(a.per_run_costs, b.per_run_costs)
    assert a.effective_cost == b.effective_cost


def test_runs_independent_of_batch_size(ex1, gcc1):
    small = sim.run(ex1.system, ex1.cost, gcc1.k, sim.SimConfig(runs=5, horizon=40, seed=3))
    big = sim.run(ex1.system, ex1.cost, gcc1.k, sim.SimConfig(runs=50, horizon=40, seed=3))
    assert np.array_equal(small.per_run_costs, big.per_run_costs[:5])


def test_mean_and_ci(ex1, gcc1):
    rep = sim.run(ex1.system, ex1.cost, gcc1.k, sim.SimConfig(runs=300, horizon=30))
    c = rep.per_run_costs
    assert rep.effective_cost == pytest.approx(np.mean(c), rel=1e-12)
    assert rep.ci95_halfwidth == pytest.approx(1.96 * np.std(c, ddof=1) / np.sqrt(c.size), rel=1e-12)
    assert rep.runs == 300


def test_trajectories_match_model_step(ex1, gcc1):
    cfg = sim.SimConfig(runs=3, horizon=60, seed=5, record_trajectories=True)
    rep = sim.run(ex1.system, ex1.cost, gcc1.k, cfg)
    s, k = ex1.system, gcc1.k
    cl = close_loop(s, ex1.cost, k)
    # replay run 0 with the documented stream layout: x0 first, then the uncertainty sequence
    rng = np.random.default_rng(np.random.SeedSequence(5, spawn_key=(0,)))
    x = rng.standard_normal(s.nx)
    assert np.array_equal(x, rep.x0[0])
    batch = sample_delta_batch(s.structure, rng, cfg.horizon)
    total = 0.0
    for t in range(cfg.horizon):
        d = DeltaRealization(tuple(b[t] for b in batch))
        dbar = closed_loop_delta_bar(cl, s, d)
        w = dbar @ (cl.czbar @ x)
        u = -k @ (s.cy @ x + s.dyw @ w)
        total += stage_cost(ex1.cost, x, u)
        x = step(cl, s, dbar, x)
        assert np.allclose(rep.trajectories.x[0, t + 1], x, rtol=1e-9, atol=1e-9)
    assert rep.per_run_costs[0] == pytest.approx(total, rel=1e-9)


def test_long_horizon_matches_dare(ex1):
    s = ex1.system.nominal()
    res = lqr(s, ex1.cost)
    x0 = np.ones(3)
    cfg = sim.SimConfig(runs=1, horizon=2000, x0_mode=sim.FixedVector(x0))
    rep = sim.run(s, ex1.cost, res.k, cfg)
    assert rep.effective_cost == pytest.approx(x0 @ res.p @ x0, rel=1e-3)


def test_zero_horizon(ex1, gcc1):
    rep = sim.run(ex1.system, ex1.cost, gcc1.k, sim.SimConfig(runs=4, horizon=0), certificate=gcc1.p)
    assert np.all(rep.per_run_costs == 0.0)
    assert rep.bound_violations == 0


def test_bound_and_lyapunov_for_certified_gain(ex1, gcc1):
    rep = sim.run(ex1.system, ex1.cost, gcc1.k, sim.SimConfig(runs=500, horizon=200), certificate=gcc1.p)
    assert rep.bound_violations == 0 and rep.lyapunov_violations == 0
    chk = sim.check_bound(rep, gcc1.p)
    assert chk.violations == 0 and chk.worst_ratio <= 1.0


def test_nominal_lqr_certificate_is_not_robust(ex1):
    res = lqr(ex1.system, ex1.cost)
    rep = sim.run(ex1.system, ex1.cost, res.k, sim.SimConfig(runs=200, horizon=200), certificate=res.p)
    assert rep.bound_violations > 0


def test_divergence_is_excluded():
    rng = np.random.default_rng(1)
    s = random_system(rng, rho=3.0).nominal()
    rep = sim.run(s, identity_cost(3, 2), np.zeros((2, 3)), sim.SimConfig(runs=4, horizon=400))
    assert rep.diverged == 4
    assert np.all(np.isinf(rep.per_run_costs)) and np.isnan(rep.effective_cost)


def test_shape_errors(ex1):
    with pytest.raises(DimensionError):
        sim.run(ex1.system, ex1.cost, np.zeros((3, 3)))
    with pytest.raises(DimensionError):
        sim.run(ex1.system, ex1.cost, np.zeros((2, 3)), sim.SimConfig(x0_mode=sim.FixedVector([1.0, 2.0])))


def test_trajectory_csv(tmp_path, ex1, gcc1):
    cfg = sim.SimConfig(runs=2, horizon=3, seed=1, record_trajectories=True)
    rep = sim.run(ex1.system, ex1.cost, gcc1.k, cfg)
    paths = sim.write_trajectories(rep, str(tmp_path), "traj")
    assert len(paths) == 2
    raw = open(paths[0], "rb").read()
    assert b"\r\n" not in raw
    lines = raw.decode().splitlines()
    assert lines[0] == "k,x_1,x_2,x_3,u_1,u_2,stage_cost"
    assert len(lines) == 1 + 4
    first = [float(v) for v in lines[1].split(",")]
    assert first[1:4] == list(rep.x0[0])
    with pytest.raises(ValueError):
        sim.write_trajectories(sim.run(ex1.system, ex1.cost, gcc1.k, sim.SimConfig(runs=1, horizon=1)),
                               str(tmp_path))
