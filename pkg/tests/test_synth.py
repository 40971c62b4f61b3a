from __future__ import annotations

import numpy as np
import pytest
import scipy.linalg as sla
from conftest import identity_cost, random_system

from gccsynth import linalg
from gccsynth.model import (CostFunctional, close_loop, closed_loop_delta_bar, sample_delta, stage_cost,
                            step)
from gccsynth.sdp import SolverOptions, Status
from gccsynth.synth import (Method, NoControllerError, PreconditionError, build_analysis_lmi, certify, lqr,
                            synth_dilated, synth_lemma)


@pytest.fixture(scope="module")
def lemma1(ex1):
    return synth_lemma(ex1.system, ex1.cost)


@pytest.fixture(scope="module")
def dilated1(ex1):
    return synth_dilated(ex1.system, ex1.cost)


def dare(sys, cost):
    p = sla.solve_discrete_are(sys.a, sys.bu, cost.q, cost.r, s=cost.n)
    k = np.linalg.solve(cost.r + sys.bu.T @ p @ sys.bu, sys.bu.T @ p @ sys.a + cost.n.T)
    return p, k


def value_iteration(a, b, q, r, steps=10_000):
    p = q.copy()
    for _ in range(steps):
        g = b.T @ p @ a
        p = a.T @ p @ a - g.T @ np.linalg.solve(r + b.T @ p @ b, g) + q
    return p


def bellman_excess(sys, cost, k, p, rng, samples=1000):
    """Largest V(x+) - V(x) + stage over sampled uncertainty and states, scaled by 1 + |x|^2."""
    cl = close_loop(sys, cost, k)
    worst = -np.inf
    for _ in range(samples):
        d = sample_delta(sys.structure, rng)
        x = rng.standard_normal(sys.nx)
        dbar = closed_loop_delta_bar(cl, sys, d)
        w = dbar @ (cl.czbar @ x)
        u = -k @ (sys.cy @ x + sys.dyw @ w)
        xn = step(cl, sys, dbar, x)
        excess = xn @ p @ xn - x @ p @ x + stage_cost(cost, x, u)
        worst = max(worst, excess / (1.0 + x @ x))
    return worst


# -- LQR ---------------------------------------------------------------------

def test_lqr_example1_against_dare(ex1):
    res = lqr(ex1.system, ex1.cost)
    p, k = dare(ex1.system, ex1.cost)
    assert res.method is Method.LQR
    assert np.allclose(res.p, p, rtol=1e-9, atol=1e-9)
    assert np.allclose(res.k, k, atol=1e-9)
    assert res.synthesis_cost == pytest.approx(22.15, rel=5e-3)


def test_lqr_zero_dynamics():
    s = random_system(np.random.default_rng(0), rho=0.0).nominal().replace(a=np.zeros((3, 3)))
    c = identity_cost(3, 2)
    res = lqr(s, c)
    assert np.allclose(res.p, c.q) and np.allclose(res.k, 0.0)
    n = np.array([[0.2, 0.0], [0.0, 0.1], [0.0, 0.0]])
    c = CostFunctional.from_weights(np.eye(3), np.eye(2), n)
    res = lqr(s, c)
    assert np.allclose(res.k, np.linalg.solve(c.r + s.bu.T @ res.p @ s.bu, n.T))


@pytest.mark.parametrize("seed", range(3))
def test_lqr_random_stable_value_iteration(seed):
    rng = np.random.default_rng(seed)
    s = random_system(rng, rho=0.95).nominal()
    c = identity_cost(3, 2)
    res = lqr(s, c)
    assert np.max(np.abs(np.linalg.eigvals(s.a - s.bu @ res.k))) < 1.0
    assert np.allclose(res.p, value_iteration(s.a, s.bu, c.q, c.r), rtol=1e-9, atol=1e-9)


def test_lqr_needs_state(ex2):
    with pytest.raises(PreconditionError):
        lqr(ex2.system, ex2.cost)


# -- GCC synthesis ------------------------------------------------------------

def test_lemma_result_invariants(lemma1):
    assert lemma1.method is Method.GCC_LEMMA and lemma1.structured
    assert lemma1.solver.status is Status.OPTIMAL
    assert linalg.min_eig(lemma1.p) > 0
    assert lemma1.synthesis_cost == pytest.approx(np.trace(lemma1.p), abs=1e-9)
    assert len(lemma1.multipliers.blocks) == 2
    assert all(linalg.min_eig(b) > 0 for b in lemma1.lambdas.blocks)


def test_lemma_and_dilated_agree(lemma1, dilated1):
    assert dilated1.synthesis_cost == pytest.approx(lemma1.synthesis_cost, rel=2e-2)
    assert np.max(np.abs(dilated1.k - lemma1.k)) <= 1e-2


def test_dilated_slack_structure(dilated1):
    v = dilated1.dilated.v_full
    nx, n_p = 3, 2
    bot = nx + n_p
    assert not np.any(v[-bot:, :-bot])
    assert linalg.min_eig(v + v.T) > 0


def test_gcc_bound_is_sound(ex1, lemma1):
    worst = bellman_excess(ex1.system, ex1.cost, lemma1.k, lemma1.p, np.random.default_rng(1))
    assert worst <= 1e-7


def test_lemma_rejects_feedthrough_measurement(ex2):
    with pytest.raises(PreconditionError, match="Dyw"):
        synth_lemma(ex2.system, ex2.cost)


def test_dilated_unstructured_not_applicable_to_example2(ex2):
    with pytest.warns(UserWarning):
        with pytest.raises(PreconditionError):
            synth_dilated(ex2.system, ex2.cost, structured=False)


def test_large_margin_is_infeasible(ex1):
    with pytest.raises(NoControllerError) as err:
        synth_lemma(ex1.system, ex1.cost, opts=SolverOptions(eps=1.0))
    assert err.value.solution.status is Status.INFEASIBLE


@pytest.mark.parametrize("path", [synth_lemma, synth_dilated])
def test_nominal_reduction_to_lqr(ex1, path):
    s = ex1.system.without_uncertainty()
    p_dare, k_dare = dare(s, ex1.cost)
    res = path(s, ex1.cost)
    tr = np.trace(p_dare)
    assert tr - 1e-6 <= res.synthesis_cost <= tr * 1.01
    assert np.max(np.abs(res.k - k_dare)) <= 1e-3


@pytest.mark.parametrize("seed", range(3))
def test_structured_not_above_unstructured(seed):
    rng = np.random.default_rng(200 + seed)
    s = random_system(rng, rho=0.8)
    c = identity_cost(3, 2)
    st = synth_lemma(s, c, structured=True)
    try:
        un = synth_lemma(s, c, structured=False).synthesis_cost
    except NoControllerError:
        un = np.inf
    assert st.synthesis_cost <= un + 1e-6


def test_output_feedback_synthesis_is_sound():
    rng = np.random.default_rng(8)
    s = random_system(rng, rho=0.8, output_feedback=True)
    c = identity_cost(3, 2)
    res = synth_lemma(s, c)
    assert res.k.shape == (2, 4)
    assert bellman_excess(s, c, res.k, res.p, rng, samples=300) <= 1e-7


def test_flipped_sign_claims_are_not_certified(ex1):
    res = synth_dilated(ex1.system, ex1.cost, flipped_sign=True)
    cert = certify(ex1.system, ex1.cost, res.k)
    # the alternative sign reports a cost its own gain cannot guarantee
    assert not cert.certified or cert.bound > res.synthesis_cost * 1.01


# -- certification ------------------------------------------------------------

def test_certify_lyapunov_case():
    rng = np.random.default_rng(3)
    s = random_system(rng, rho=0.7)
    s = s.replace(bw=np.zeros_like(s.bw), cz=np.zeros_like(s.cz), dzu=np.zeros_like(s.dzu))
    c = CostFunctional.from_weights(np.zeros((3, 3)), np.eye(2))
    cert = certify(s, c, np.zeros((2, 3)))
    assert cert.certified
    assert cert.bound >= 0 and cert.bound < 1e-3


def test_certify_structured_gain(ex1, lemma1):
    cert = certify(ex1.system, ex1.cost, lemma1.k)
    assert cert.certified
    assert cert.bound <= lemma1.synthesis_cost * (1 + 1e-3)
    assert bellman_excess(ex1.system, ex1.cost, lemma1.k, cert.p, np.random.default_rng(4)) <= 1e-7


def test_certify_example2_gain(ex2):
    res = synth_dilated(ex2.system, ex2.cost)
    cert = certify(ex2.system, ex2.cost, res.k)
    assert cert.certified
    assert cert.bound <= res.synthesis_cost * (1 + 1e-3)
    assert bellman_excess(ex2.system, ex2.cost, res.k, cert.p, np.random.default_rng(5)) <= 1e-7


def test_certify_rejects_unstable_gain(ex1):
    s = ex1.system.nominal()
    assert np.max(np.abs(np.linalg.eigvals(s.a))) > 1.0
    cert = certify(s, ex1.cost, np.zeros((2, 3)))
    assert not cert.certified and cert.bound == np.inf


def test_certify_rejects_destabilizing_gain(ex1):
    s = ex1.system.nominal()
    k = lqr(s, ex1.cost).k * 3.0
    assert np.max(np.abs(np.linalg.eigvals(s.a - s.bu @ k))) > 1.0
    assert not certify(s, ex1.cost, k).certified


def test_analysis_lmi_shape(ex1, lemma1):
    cl = close_loop(ex1.system, ex1.cost, lemma1.k)
    prob, v = build_analysis_lmi(cl, ex1.system.structure)
    blk = prob.seal().lmi_blocks[-1]
    assert blk.dim == 3 + 2
