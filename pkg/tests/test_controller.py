"""Tests for the closed-form safety filter and its numerical oracle."""

import logging

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from safenav.composer import PsiChain, eval_psi_chain
from safenav.controller import (
    AssumptionViolation,
    ConfigurationError,
    FilterConfig,
    compute_control,
    constraint_value,
    objective,
    qp_oracle,
)
from safenav.smoothmath import ScalarJet2
from safenav.systems import unicycle_model
from safenav.verify import random_composite, random_state


def stub_chain(psi1, Lg, drift, psi0=0.1):
    """Chain with ``dpsi1/dt + L_f psi1 = drift`` and the given input coupling."""
    Lg = np.asarray(Lg, dtype=float)
    n = 4
    jet = ScalarJet2(psi0, 0.0, 0.0, np.zeros(n), np.zeros(n), np.zeros((n, n)))
    return PsiChain(
        t=0.0, psi0=jet, mu=np.ones(1), psi1=float(psi1), dpsi1_dt=0.0, grad_psi1=np.zeros(n),
        Lf_psi1=float(drift), Lg_psi1=Lg, Lg_psi0=np.zeros(Lg.size), f=np.zeros(n), g=np.zeros((n, Lg.size)),
    )


def random_stub(rng, m=2):
    return stub_chain(
        psi1=float(rng.choice([-1.0, 1.0]) * rng.exponential(2.0)),
        Lg=rng.normal(scale=rng.choice([0.1, 1.0, 10.0]), size=m),
        drift=float(rng.normal(scale=50.0)),
    )


X0 = np.zeros(4)


class TestConstraintValue:
    def test_zero_inputs(self):
        chain = stub_chain(0.5, [1.0, 0.0], -30.0)
        cfg = FilterConfig(alpha=50.0)
        assert constraint_value(0.0, X0, np.zeros(2), 0.0, chain, cfg) == pytest.approx(-5.0, abs=1e-12)

    def test_unconstrained_minimizer_gives_omega(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            chain = random_stub(rng)
            ud = rng.normal(size=2)
            cfg = FilterConfig(alpha=float(rng.uniform(1, 60)))
            out = compute_control(0.0, X0, chain, cfg, ud)
            assert constraint_value(0.0, X0, ud, 0.0, chain, cfg) == pytest.approx(out.omega, abs=1e-12)

    @settings(max_examples=100, deadline=None)
    @given(
        st.lists(st.floats(-100, 100), min_size=2, max_size=2),
        st.lists(st.floats(-100, 100), min_size=2, max_size=2),
        st.floats(-10, 10),
    )
    def test_affine_in_input(self, u1, u2, mu):
        chain = stub_chain(0.7, [1.5, -0.3], 4.0)
        cfg = FilterConfig(alpha=30.0)
        u1, u2 = np.array(u1), np.array(u2)
        diff = constraint_value(0.0, X0, u1 + u2, mu, chain, cfg) - constraint_value(0.0, X0, u1, mu, chain, cfg)
        assert diff == pytest.approx(chain.Lg_psi1 @ u2, abs=1e-12 * max(1.0, np.abs(u1).max(), np.abs(u2).max()))

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            constraint_value(0.0, X0, np.zeros(3), 0.0, stub_chain(0.5, [1.0, 0.0], 0.0), FilterConfig())


class TestComputeControl:
    def test_hand_evaluated_example(self):
        chain = stub_chain(0.5, [1.0, 0.0], -30.0)
        cfg = FilterConfig(gamma=200.0, alpha=50.0)
        out = compute_control(0.0, X0, chain, cfg, np.zeros(2))
        assert out.omega == pytest.approx(-5.0, abs=1e-12)
        assert out.d == pytest.approx(1.00125, abs=1e-12)
        assert out.lam == pytest.approx(5.0 / 1.00125, abs=1e-12)
        assert out.lam == pytest.approx(4.993758, abs=1e-6)
        np.testing.assert_allclose(out.u_star, [4.993758, 0.0], atol=1e-6)
        assert out.mu_star == pytest.approx(0.01248440, abs=1e-8)
        assert out.constraint_value == pytest.approx(0.0, abs=1e-12)
        assert constraint_value(0.0, X0, out.u_star, out.mu_star, chain, cfg) == pytest.approx(0.0, abs=1e-12)
        assert out.slack_active

    def test_oracle_on_hand_example(self):
        chain = stub_chain(0.5, [1.0, 0.0], -30.0)
        cfg = FilterConfig(gamma=200.0, alpha=50.0)
        u, mu = qp_oracle(0.0, X0, chain, cfg, np.zeros(2))
        np.testing.assert_allclose(u, [4.993758, 0.0], atol=1e-6)
        assert mu == pytest.approx(0.01248440, abs=1e-6)

    def test_inactive_constraint_returns_desired_control(self):
        chain = stub_chain(0.5, [1.0, 0.0], 10.0)
        ud = np.array([0.3, -2.0])
        out = compute_control(0.0, X0, chain, FilterConfig(), ud)
        assert out.omega >= 0
        assert out.lam == 0.0 and out.mu_star == 0.0
        np.testing.assert_array_equal(out.u_star, ud)
        assert not out.slack_active
        u, mu = qp_oracle(0.0, X0, chain, FilterConfig(), ud)
        np.testing.assert_allclose(u, ud)
        assert mu == 0.0

    def test_general_cost(self):
        A = np.array([[3.0, 1.0], [1.0, 2.0]])
        cvec = np.array([1.0, -1.0])
        cfg = FilterConfig(min_intervention=False, Q=lambda t, x: A, c=lambda t, x: cvec, gamma=50.0, alpha=5.0)
        chain = stub_chain(-0.4, [0.5, 2.0], -8.0)
        out = compute_control(0.0, X0, chain, cfg)
        u, mu = qp_oracle(0.0, X0, chain, cfg)
        np.testing.assert_allclose(out.u_star, u, atol=1e-9)
        assert out.mu_star == pytest.approx(mu, abs=1e-9)
        u_g = -np.linalg.solve(A, cvec)
        assert out.omega == pytest.approx(constraint_value(0.0, X0, u_g, 0.0, chain, cfg), abs=1e-12)

    def test_slack_flag(self):
        rng = np.random.default_rng(1)
        for _ in range(500):
            chain = random_stub(rng)
            out = compute_control(0.0, X0, chain, FilterConfig(), rng.normal(size=2))
            assert out.lam >= 0.0
            assert out.slack_active == (out.lam > 0.0 and out.psi1 != 0.0)

    def test_constraint_at_optimum_is_max_zero_omega(self):
        rng = np.random.default_rng(2)
        worst = 0.0
        for _ in range(10_000):
            chain = random_stub(rng)
            cfg = FilterConfig(gamma=float(rng.uniform(1, 500)), alpha=float(rng.uniform(1, 60)))
            out = compute_control(0.0, X0, chain, cfg, rng.normal(scale=5.0, size=2))
            val = constraint_value(0.0, X0, out.u_star, out.mu_star, chain, cfg)
            worst = max(worst, abs(val - max(0.0, out.omega)) / max(1.0, abs(out.omega)))
        assert worst <= 1e-9

    def test_no_feasible_point_beats_optimum(self):
        rng = np.random.default_rng(3)
        for _ in range(100):
            chain = random_stub(rng)
            cfg = FilterConfig(gamma=float(rng.uniform(1, 500)))
            ud = rng.normal(scale=5.0, size=2)
            out = compute_control(0.0, X0, chain, cfg, ud)
            J0 = objective(out.u_star, out.mu_star, np.eye(2), -ud, cfg.gamma)
            for _ in range(200):
                u = out.u_star + rng.normal(scale=rng.choice([1e-3, 1.0]), size=2)
                mu = out.mu_star + rng.normal(scale=0.1)
                if constraint_value(0.0, X0, u, mu, chain, cfg) >= 0:
                    assert objective(u, mu, np.eye(2), -ud, cfg.gamma) >= J0 - 1e-9

    def test_gamma_ladder_disables_slack(self):
        chain = stub_chain(0.8, [0.6, -0.2], -100.0)
        mus = []
        for gamma in (1e2, 1e4, 1e6):
            out = compute_control(0.0, X0, chain, FilterConfig(gamma=gamma), np.zeros(2))
            assert out.omega < 0
            mus.append(abs(out.mu_star))
        assert mus[0] > mus[1] > mus[2]
        assert mus[2] < 1e-3 * mus[0]

    def test_assumption_violation_policy(self, caplog):
        chain = stub_chain(0.0, [0.0, 0.0], -1.0)
        with pytest.raises(AssumptionViolation):
            compute_control(0.0, X0, chain, FilterConfig(mode="verify"), np.zeros(2))
        with caplog.at_level(logging.WARNING, logger="safenav.controller"):
            out = compute_control(0.0, X0, chain, FilterConfig(mode="simulate"), np.zeros(2))
        assert out.assumption_warning
        assert out.lam == pytest.approx(1.0 / 1e-12)
        assert any("no authority" in r.message for r in caplog.records)

    def test_small_divisor_with_inactive_constraint_does_not_divide(self):
        chain = stub_chain(0.0, [0.0, 0.0], 1.0)
        out = compute_control(0.0, X0, chain, FilterConfig(mode="verify"), np.zeros(2))
        assert out.lam == 0.0

    def test_non_positive_definite_cost(self):
        bad = np.array([[1.0, 0.0], [0.0, -1.0]])
        cfg = FilterConfig(min_intervention=False, Q=lambda t, x: bad, c=lambda t, x: np.zeros(2))
        with pytest.raises(ConfigurationError):
            compute_control(0.0, X0, stub_chain(0.5, [1.0, 0.0], -30.0), cfg)
        with pytest.raises(ConfigurationError):
            FilterConfig(gamma=0.0)

    def test_lipschitz_probe(self):
        """Finite difference quotients stay bounded as the state perturbation shrinks."""
        rng = np.random.default_rng(4)
        model = unicycle_model()
        ud = np.array([1.0, 0.5])
        cfg = FilterConfig(alpha=50.0, gamma=200.0)
        probed = 0
        for _ in range(40):
            cb = random_composite(rng, N=2)
            t, x = random_state(rng, cb, model)
            base = compute_control(t, x, eval_psi_chain(cb, t, x, model), cfg, ud)
            if base.omega >= -1e-3 and base.omega <= 1e-3:
                continue
            ratios = []
            for h in (1e-4, 1e-6):
                dx = h * rng.normal(size=4) / 2
                out = compute_control(t, x + dx, eval_psi_chain(cb, t, x + dx, model), cfg, ud)
                delta = max(np.abs(out.u_star - base.u_star).max(), abs(out.mu_star - base.mu_star),
                            abs(out.lam - base.lam))
                ratios.append(delta / np.linalg.norm(dx))
            scale = 1.0 + abs(base.lam) + np.abs(base.u_star).max()
            assert ratios[1] <= 10.0 * ratios[0] + scale
            probed += 1
        assert probed > 20


class TestOracle:
    def test_matches_closed_form_on_composite_states(self):
        rng = np.random.default_rng(5)
        model = unicycle_model()
        active = 0
        for _ in range(300):
            cb = random_composite(rng, N=int(rng.integers(1, 4)))
            t, x = random_state(rng, cb, model)
            chain = eval_psi_chain(cb, t, x, model)
            cfg = FilterConfig(gamma=float(rng.uniform(1, 500)), alpha=float(rng.uniform(1, 60)))
            ud = rng.normal(scale=5.0, size=2)
            out = compute_control(t, x, chain, cfg, ud)
            u, mu = qp_oracle(t, x, chain, cfg, ud)
            np.testing.assert_allclose(u, out.u_star, atol=1e-6)
            assert mu == pytest.approx(out.mu_star, abs=1e-6)
            active += out.omega < 0
        assert active > 15
