import numpy as np
import pytest

from conftest import cbf_exact_margin, fd_gradient, fd_jacobian, hocbf_exact_margin, sample_ball
from robust_cbf import barrier as B
from robust_cbf.plants import (ActuatorParams, SyntheticParams, UnicycleParams, actuator_hocbf_chain,
                               actuator_model, synthetic_socp_plant, unicycle_edge_cbf, unicycle_model)
from robust_cbf.solvers import QpSpec, SocpSpec, input_rows_from, solve_filter_qp, solve_filter_socp

UP = UnicycleParams()
UNI = unicycle_model(UP)
UCBF = unicycle_edge_cbf(UP, 1.0)
AP = ActuatorParams()
ACT = actuator_model(AP)
ACHAIN = actuator_hocbf_chain(AP, 2.0, 2.0)
SYN, SCHAIN, _ = synthetic_socp_plant(SyntheticParams())


def test_class_k_gain_positive():
    with pytest.raises(ValueError):
        B.LinearClassK(0.0)
    assert B.LinearClassK(2.0)(0.5) == 1.0


def test_nominal_cbf_row_unicycle(rng):
    row = B.cbf_constraint_nominal(UCBF, UNI, [0.0, 0.0, 0.0])
    assert np.allclose(row.a, [0.0, 0.1], atol=1e-15)
    assert row.b == pytest.approx(1.0, abs=1e-15)
    for _ in range(50):
        x = rng.normal(size=3)
        row = B.cbf_constraint_nominal(UCBF, UNI, x)
        assert np.allclose(row.a, [np.sin(x[2]), 0.1 * np.cos(x[2])], atol=1e-14)
        assert row.b == pytest.approx(x[1] + 0.1 * np.sin(x[2]) + 1.0, abs=1e-14)


def test_zero_input_gain_row():
    # the actuator h has relative degree two: L_g h = 0
    row = B.cbf_constraint_nominal(ACHAIN.base, ACT, [0.1, 0.2, 0.3, 0.4])
    assert np.array_equal(row.a, [0.0])


def test_ue_cbf_row():
    x = np.zeros(3)
    nominal = B.cbf_constraint_nominal(UCBF, UNI, x)
    same = B.ue_cbf_constraint(UCBF, UNI, x, np.zeros(3), 0.0)
    assert np.array_equal(same.a, nominal.a) and same.b == nominal.b
    row = B.ue_cbf_constraint(UCBF, UNI, x, [0.0, 0.2, 0.0], 0.1)
    assert row.b - nominal.b == pytest.approx(0.2 - 0.1 * np.linalg.norm([0, 1, 0.1]), abs=1e-14)
    tight = B.ue_cbf_constraint(UCBF, UNI, x, [0.0, 0.2, 0.0], 0.3)
    assert row.b - tight.b == pytest.approx(0.2 * np.linalg.norm([0, 1, 0.1]), abs=1e-14)
    with pytest.raises(ValueError):
        B.ue_cbf_constraint(UCBF, UNI, x, np.zeros(3), -0.1)


def test_gate():
    mu_e = 4.0 / 4
    assert B.check_gate(1.0, mu_e, 1.0) == pytest.approx(1.5)
    with pytest.raises(B.GateViolation):
        B.check_gate(1.0, mu_e, 4.0)
    with pytest.raises(B.GateViolation):
        B.check_gate(1.0, mu_e, 5.0)
    assert B.check_gate(1.0, mu_e, 3.999) > 0


def test_ue_iss_row():
    x = np.array([0.0, 0.0, 0.3])
    dh = UCBF.grad_h(x)
    row = B.ue_iss_cbf_constraint(UCBF, UNI, x, np.zeros(3), 1.0, 1.0, 1.0, 0.03125)
    nominal = B.cbf_constraint_nominal(UCBF, UNI, x)
    assert row.b == pytest.approx(nominal.b - dh @ dh / (4 * 1.5) - 0.03125, abs=1e-14)
    # the penalty vanishes as the gate margin grows
    far = B.ue_iss_cbf_constraint(UCBF, UNI, x, np.zeros(3), 1.0, 1.0, 1e13, 0.0)
    assert far.b == pytest.approx(nominal.b, abs=1e-12)
    with pytest.raises(B.GateViolation):
        B.ue_iss_cbf_constraint(UCBF, UNI, x, np.zeros(3), 1.0, 5.0, 1.0, 0.0)


def test_ue_iss_row_zero_gradient():
    spec = B.BarrierSpec(lambda x: 1.0, lambda x: np.zeros(3), B.LinearClassK(1.0))
    row = B.ue_iss_cbf_constraint(spec, UNI, np.zeros(3), np.zeros(3), 1.0, 1.0, 1.0, 0.0)
    assert row.b == pytest.approx(1.0, abs=1e-15)


def test_actuator_chain_values():
    x0 = np.array([0.0, 0.5, 0.0, -0.2])
    assert B.hocbf_chain_eval(ACHAIN, ACT, x0) == (pytest.approx(0.5, abs=1e-15), pytest.approx(0.6, abs=1e-15))
    assert B.hocbf_chain_eval(ACHAIN, ACT, np.zeros(4)) == (0.0, 0.0)
    row = B.hocbf_constraint_nominal(ACHAIN, ACT, x0)
    assert row.a[0] == pytest.approx(20.0, abs=1e-12)


def _random_states(rng, n, count, scale=1.0):
    return [rng.uniform(-scale, scale, n) for _ in range(count)]


@pytest.mark.parametrize("chain,model", [(ACHAIN, ACT), (SCHAIN, SYN)], ids=["actuator", "synthetic"])
def test_gradients_match_finite_differences(rng, chain, model):
    for x in _random_states(rng, model.n, 200):
        gh = fd_gradient(chain.base.h, x)
        gp = fd_gradient(chain.psi, x)
        # F is the state Jacobian of grad h
        F = fd_jacobian(chain.base.grad_h, x)
        assert np.allclose(chain.base.grad_h(x), gh, rtol=1e-4, atol=1e-7)
        assert np.allclose(chain.grad_psi(x), gp, rtol=1e-4, atol=1e-7)
        assert np.allclose(chain.F(x), F, rtol=1e-4, atol=1e-7)
        # Psi - alpha1 h is the derivative of h along the nominal drift
        lfh = (chain.base.h(x + 1e-6 * model.drift(x)) - chain.base.h(x - 1e-6 * model.drift(x))) / 2e-6
        assert chain.psi(x) - chain.alpha1(chain.base.h(x)) == pytest.approx(lfh, abs=1e-4)
        # relative degree two: the input does not enter h_dot
        assert abs(chain.base.grad_h(x) @ model.input_matrix(x)).max() <= 1e-12


def test_unicycle_gradient(rng):
    for x in _random_states(rng, 3, 200, 2.0):
        assert np.allclose(UCBF.grad_h(x), fd_gradient(UCBF.h, x), rtol=1e-4, atol=1e-7)


def test_fg_flags(rng):
    assert ACHAIN.F_g_identically_zero and not SCHAIN.F_g_identically_zero
    for x in _random_states(rng, 4, 1000, 3.0):
        assert np.linalg.norm(ACHAIN.F(x) @ ACT.input_matrix(x)) <= 1e-12
    for x in _random_states(rng, 2, 100, 3.0):
        assert np.linalg.norm(SCHAIN.F(x) @ SYN.input_matrix(x)) == pytest.approx(1.0)


def test_hocbf_input_channel():
    # L_g L_f h: -c_q / J_m for the actuator, -1 for the synthetic plant
    x = np.array([0.3, -0.1, 0.2, 0.1])
    assert (ACHAIN.grad_psi(x) @ ACT.input_matrix(x))[0] == pytest.approx(-AP.c_q / AP.J_m)
    xs = np.array([0.1, 0.3])
    lglfh = (SCHAIN.grad_psi(xs) - SCHAIN.alpha1.gain * SCHAIN.base.grad_h(xs)) @ SYN.input_matrix(xs)
    assert lglfh[0] == pytest.approx(-1.0, abs=1e-14)


def test_omega():
    x = np.array([0.1, 0.3])
    assert B.omega(SCHAIN, x, np.zeros(2), 0.0) == 0.0
    expect = np.linalg.norm(SCHAIN.grad_psi(x)) * 0.2 + 1.0 * 0.04
    assert B.omega(SCHAIN, x, np.zeros(2), 0.2) == pytest.approx(expect, abs=1e-14)
    xa = np.array([0.2, 0.1, -0.3, 0.4])
    assert B.omega(ACHAIN, xa, np.ones(4), 0.3) == pytest.approx(np.linalg.norm(ACHAIN.grad_psi(xa)) * 0.3,
                                                                  abs=1e-14)
    with pytest.raises(ValueError):
        B.omega(SCHAIN, x, np.zeros(2), -1.0)


def test_ue_hocbf_reduces_to_nominal(rng):
    for chain, model in ((ACHAIN, ACT), (SCHAIN, SYN)):
        for x in _random_states(rng, model.n, 100):
            nominal = B.hocbf_constraint_nominal(chain, model, x)
            row, cone = B.ue_hocbf_terms(chain, model, x, np.zeros(model.n), 0.0, 0.0)
            assert np.allclose(row.a, nominal.a, atol=1e-12)
            assert row.b == pytest.approx(nominal.b, abs=1e-12)
            assert cone.value(rng.normal(size=1)) == 0.0


def test_actuator_cone_constant_and_qp_row(rng):
    for x in _random_states(rng, 4, 50):
        dhat = rng.normal(size=4)
        row, cone = B.ue_hocbf_terms(ACHAIN, ACT, x, dhat, 0.4, 1.0)
        assert cone.is_constant
        assert row.a[0] == pytest.approx((ACHAIN.grad_psi(x) @ ACT.input_matrix(x))[0], abs=1e-12)
    with pytest.raises(ValueError):
        B.ue_hocbf_qp_row(SCHAIN, SYN, np.zeros(2), np.zeros(2), 0.1, 0.1)


def test_monotone_conservatism(rng):
    for _ in range(50):
        x = rng.normal(size=3)
        dhat = rng.normal(size=3)
        bs = [B.ue_cbf_constraint(UCBF, UNI, x, dhat, e).b for e in (0.0, 0.1, 0.5, 2.0)]
        assert all(b1 >= b2 for b1, b2 in zip(bs, bs[1:]))
        xs, dh2 = rng.normal(size=2), rng.normal(size=2)
        u = rng.normal(size=1)
        slack = [B.ue_hocbf_terms(SCHAIN, SYN, xs, dh2, e, 0.3)[0].value(u)
                 - B.ue_hocbf_terms(SCHAIN, SYN, xs, dh2, e, 0.3)[1].value(u) for e in (0.0, 0.1, 0.5, 2.0)]
        assert all(s1 >= s2 - 1e-12 for s1, s2 in zip(slack, slack[1:]))


def test_ue_cbf_row_sufficient_for_sampled_errors(rng):
    for _ in range(30):
        x = np.array([rng.uniform(-1, 1), rng.uniform(-0.5, 1), rng.uniform(-1, 1)])
        dhat = rng.normal(scale=0.3, size=3)
        e_bar = rng.uniform(0, 0.5)
        row = B.ue_cbf_constraint(UCBF, UNI, x, dhat, e_bar)
        w = UNI.pinv(x) @ dhat
        res = solve_filter_qp(QpSpec(rng.normal(size=2), [row]))
        assert res.optimal
        u = res.u - w
        for e in sample_ball(rng, 3, e_bar, 1000):
            assert cbf_exact_margin(UCBF, UNI, x, u, dhat + e) >= -1e-9


def test_socp_solution_sufficient_for_sampled_errors(rng):
    checked = 0
    for _ in range(30):
        x = np.array([rng.uniform(-0.5, 0.5), rng.uniform(-0.7, 0.7)])
        dhat = np.array([rng.uniform(0, 0.5), 0.0])
        e_bar, delta_l = rng.uniform(0.05, 0.3), 0.4
        row, cone = B.ue_hocbf_terms(SCHAIN, SYN, x, dhat, e_bar, delta_l)
        inputs = input_rows_from(*SYN.input_set.shifted_rows(SYN.pinv(x) @ dhat))
        res = solve_filter_socp(SocpSpec(QpSpec(rng.normal(size=1), (), inputs), row, cone))
        if not res.optimal:
            continue
        checked += 1
        u = res.u - SYN.pinv(x) @ dhat
        for e in sample_ball(rng, 2, e_bar, 1000):
            assert hocbf_exact_margin(SCHAIN, SYN, x, u, dhat + e, delta_l) >= -1e-7
    assert checked >= 20
