"""Controlled-ODE solver, variation equations, and growth certificates."""

import math

import numpy as np
import pytest

from lipcert import (
    ArchitectureSpec,
    Control,
    FieldEnvelopes,
    SquaredError,
    VectorFieldSpec,
    code_certificate,
    code_loss_certificate,
    dnn_as_code,
    embed_input,
    flatten_params,
    forward,
    init_params,
    linear_scalar_field,
    param_jacobian,
    random_smooth_field,
    required_moment_order,
    sigmoid,
    solve_code,
    solve_first_variation,
    solve_second_variation,
    tanh,
    total_variation,
    verify_envelopes,
)
from lipcert.bounds import LossEnvelope

from conftest import random_architecture


UNIT_DENSITY = Control.constant_density(1.0, t_final=1.0)


class TestControl:
    def test_constant_density_has_expected_variation(self):
        c = Control.constant_density(2.5, t_final=2.0)
        assert c.variation() == pytest.approx(5.0)

    def test_steps_variation_sums_jump_sizes(self):
        c = Control.steps([(0.5, 1.0), (1.5, -2.0)], t_final=2.0)
        assert c.variation() == pytest.approx(3.0)

    def test_total_variation_adds_controls(self):
        a = Control.constant_density(1.0, t_final=1.0)
        b = Control.steps([(1.0, 0.5)], t_final=1.0)
        assert total_variation([a, b]) == pytest.approx(1.5)

    def test_density_at_piecewise(self):
        c = Control(
            t_final=2.0,
            jumps={},
            density_breaks=(0.0, 1.0, 2.0),
            density_values=(3.0, 7.0),
        )
        assert c.density_at(0.5) == 3.0
        assert c.density_at(1.5) == 7.0
        assert c.variation() == pytest.approx(10.0)

    def test_jump_at_zero_rejected(self):
        with pytest.raises(ValueError):
            Control.steps([(0.0, 1.0)], t_final=1.0)

    def test_jump_after_final_time_rejected(self):
        with pytest.raises(ValueError):
            Control.steps([(1.5, 1.0)], t_final=1.0)

    def test_breaks_must_span_horizon(self):
        with pytest.raises(ValueError):
            Control(
                t_final=2.0,
                jumps={},
                density_breaks=(0.0, 1.0),
                density_values=(1.0,),
            )


class TestEulerAccuracy:
    def test_exponential_error_bound(self):
        # dX = theta X du with theta = 1 on [0, 1]: X_T = e and the left
        # point scheme gives (1 + 1/n)^n, so the gap is below 3 e / n
        field = linear_scalar_field()
        for n in (8, 16, 32, 64, 128, 256, 512):
            traj = solve_code(field, UNIT_DENSITY, np.array([1.0]), np.array([1.0]), n)
            err = abs(traj.final_state[0] - math.e)
            assert err <= 3.0 * math.e / n

    def test_halving_ratio_near_two(self):
        field = linear_scalar_field()

        def err(n):
            traj = solve_code(field, UNIT_DENSITY, np.array([1.0]), np.array([1.0]), n)
            return abs(traj.final_state[0] - math.e)

        for n in (32, 64, 128, 256):
            ratio = err(n) / err(2 * n)
            assert 1.6 <= ratio <= 2.4

    def test_zero_density_segment_is_skipped(self):
        c = Control(
            t_final=2.0,
            jumps={},
            density_breaks=(0.0, 1.0, 2.0),
            density_values=(1.0, 0.0),
        )
        field = linear_scalar_field()
        traj = solve_code(field, c, np.array([1.0]), np.array([1.0]), 64)
        # the state is frozen while the control is flat
        assert traj.final_state[0] == pytest.approx(traj.state_at(1.0)[0])

    def test_nonfinite_state_sets_aborted(self):
        blow_up = VectorFieldSpec(
            dim_state=1,
            dim_theta=1,
            evaluate=lambda th, t, x: np.array([math.exp(min(x[0], 700.0)) * 1e300]),
        )
        traj = solve_code(blow_up, UNIT_DENSITY, np.array([1.0]), np.array([1.0]), 16)
        assert traj.aborted

    def test_state_at_is_right_continuous_across_jumps(self):
        arch = ArchitectureSpec(widths=(1, 1), activations=())
        field, control = dnn_as_code(arch)
        params = init_params(arch, b_omega=1.0, seed=0)
        theta = flatten_params(params)
        x0 = embed_input(arch, np.array([0.7]))
        traj = solve_code(field, control, theta, x0, n_substeps=8)
        t_jump = 1.0
        post = traj.state_at(t_jump)
        w, b = params.layers[0]
        assert post[0] == pytest.approx(float(w[0, 0] * 0.7 + b[0]), rel=1e-12)


class TestVariationEquations:
    def test_first_variation_matches_exponential(self):
        # X_T(theta) = e^theta, so the theta derivative is also e^theta
        field = linear_scalar_field()
        for th in (0.0, 0.5):
            traj = solve_first_variation(
                field, UNIT_DENSITY, np.array([th]), np.array([1.0]), 10_000
            )
            assert traj.final_first_variation[0, 0] == pytest.approx(
                math.exp(th), rel=1e-3
            )

    def test_second_variation_matches_exponential(self):
        field = linear_scalar_field()
        traj = solve_second_variation(
            field, UNIT_DENSITY, np.array([0.0]), np.array([1.0]), 10_000
        )
        assert traj.final_second_variation[0, 0, 0] == pytest.approx(1.0, rel=1e-3)

    def test_first_variation_against_same_grid_differences(self, rng):
        field = random_smooth_field(rng, dim_state=2, dim_theta=3)
        theta = rng.normal(size=3) * 0.5
        x0 = rng.normal(size=2)
        n = 200
        traj = solve_first_variation(field, UNIT_DENSITY, theta, x0, n)
        h = 1e-6
        fd = np.zeros((2, 3))
        for p in range(3):
            e = np.zeros(3)
            e[p] = h
            plus = solve_code(field, UNIT_DENSITY, theta + e, x0, n).final_state
            minus = solve_code(field, UNIT_DENSITY, theta - e, x0, n).final_state
            fd[:, p] = (plus - minus) / (2 * h)
        np.testing.assert_allclose(traj.final_first_variation, fd, rtol=1e-4, atol=1e-8)

    def test_second_variation_against_same_grid_differences(self, rng):
        field = random_smooth_field(rng, dim_state=2, dim_theta=2)
        theta = rng.normal(size=2) * 0.3
        x0 = rng.normal(size=2) * 0.5
        n = 100
        traj = solve_second_variation(field, UNIT_DENSITY, theta, x0, n)
        h = 1e-4
        fd = np.zeros((2, 2, 2))
        for p in range(2):
            for q in range(2):
                ep, eq = np.zeros(2), np.zeros(2)
                ep[p], eq[q] = h, h
                pp = solve_code(field, UNIT_DENSITY, theta + ep + eq, x0, n).final_state
                pm = solve_code(field, UNIT_DENSITY, theta + ep - eq, x0, n).final_state
                mp = solve_code(field, UNIT_DENSITY, theta - ep + eq, x0, n).final_state
                mm = solve_code(field, UNIT_DENSITY, theta - ep - eq, x0, n).final_state
                fd[:, p, q] = (pp - pm - mp + mm) / (4 * h * h)
        np.testing.assert_allclose(
            traj.final_second_variation, fd, rtol=1e-3, atol=1e-6
        )

    def test_second_variation_is_symmetric(self, rng):
        field = random_smooth_field(rng, dim_state=2, dim_theta=3)
        traj = solve_second_variation(
            field, UNIT_DENSITY, rng.normal(size=3) * 0.4, rng.normal(size=2), 100
        )
        dd = traj.final_second_variation
        np.testing.assert_allclose(dd, np.swapaxes(dd, 1, 2), atol=1e-12)


class TestDnnEmbedding:
    def test_jump_chain_reproduces_forward_pass(self, rng):
        for _ in range(5):
            arch = random_architecture(rng, max_width=4, max_hidden=3)
            params = init_params(arch, b_omega=1.0, seed=int(rng.integers(10_000)))
            x = rng.normal(size=arch.widths[0])
            field, control = dnn_as_code(arch)
            traj = solve_code(
                field, control, flatten_params(params), embed_input(arch, x), 4
            )
            out = forward(params, arch, x).output
            np.testing.assert_allclose(
                traj.final_state[: arch.widths[-1]], out, rtol=1e-12, atol=1e-14
            )
            # padding lanes stay identically zero
            np.testing.assert_array_equal(traj.final_state[arch.widths[-1]:], 0.0)

    def test_first_variation_reproduces_parameter_jacobian(self, rng):
        arch = ArchitectureSpec(widths=(2, 3, 1), activations=(sigmoid(),))
        params = init_params(arch, b_omega=1.0, seed=2)
        x = np.array([0.6, -0.4])
        field, control = dnn_as_code(arch)
        traj = solve_first_variation(
            field, control, flatten_params(params), embed_input(arch, x), 2
        )
        jac = param_jacobian(params, arch, x)
        np.testing.assert_allclose(
            traj.final_first_variation[: arch.widths[-1]], jac, atol=1e-13
        )


class TestGrowthCertificates:
    def test_linear_field_constants(self):
        # theta x with unit variation from ||x|| = 1: growth e, state bound
        # 2e, parameter sensitivity (1 + 2e) e
        env = FieldEnvelopes(
            b_v=1.0, b_theta=1.0, b_theta_theta=0.0, b_x_theta=1.0,
            b_theta_x=1.0, b_x_x=0.0, lip_x=1.0, p_theta=1.0,
        )
        cert = code_certificate(env, b_upsilon=1.0, x_norm=1.0)
        assert cert.b_x == pytest.approx(2.0 * math.e, rel=1e-13)
        assert cert.l_x == pytest.approx((1.0 + 2.0 * math.e) * math.e, rel=1e-12)
        assert cert.b_dx == cert.l_x

    def test_zero_field_keeps_initial_norm(self):
        env = FieldEnvelopes(
            b_v=0.0, b_theta=0.0, b_theta_theta=0.0, b_x_theta=0.0,
            b_theta_x=0.0, b_x_x=0.0, lip_x=0.0,
        )
        cert = code_certificate(env, b_upsilon=2.0, x_norm=1.5)
        assert cert.b_x == pytest.approx(1.5)
        assert cert.l_x == 0.0
        assert cert.l_dx == 0.0

    def test_sampled_sensitivities_stay_below_certificate(self):
        field = linear_scalar_field()
        env = FieldEnvelopes(
            b_v=1.0, b_theta=1.0, b_theta_theta=0.0, b_x_theta=1.0,
            b_theta_x=1.0, b_x_x=0.0, lip_x=1.0, p_theta=1.0,
        )
        cert = code_certificate(env, b_upsilon=1.0, x_norm=1.0)
        rng = np.random.default_rng(17)
        thetas = rng.uniform(-1.0, 1.0, size=200)
        finals = np.array([
            solve_code(field, UNIT_DENSITY, np.array([t]), np.array([1.0]), 64).final_state[0]
            for t in thetas
        ])
        assert float(np.max(np.abs(finals))) <= cert.b_x
        order = np.argsort(thetas)
        quotients = np.abs(np.diff(finals[order])) / np.diff(thetas[order])
        assert float(np.max(quotients)) <= cert.l_x

    def test_loss_chain_with_explicit_norms(self):
        env = FieldEnvelopes(
            b_v=1.0, b_theta=1.0, b_theta_theta=0.0, b_x_theta=1.0,
            b_theta_x=1.0, b_x_x=0.0, lip_x=1.0, p_theta=1.0,
        )
        cert = code_certificate(env, b_upsilon=1.0, x_norm=1.0)
        loss = LossEnvelope(g_p_max=1.0, g_pp_max=0.0, lip_g=1.0, lip_dg=0.0)
        full = code_loss_certificate(cert, loss, sample_norms=[1.0])
        assert full.l_phi == pytest.approx(cert.l_x, rel=1e-12)

    def test_moment_route_agrees_on_degenerate_moments(self):
        env = FieldEnvelopes(
            b_v=0.5, b_theta=1.0, b_theta_theta=0.5, b_x_theta=1.0,
            b_theta_x=1.0, b_x_x=0.25, lip_x=1.0,
            p_theta=1, p_theta_theta=1, p_x_theta=1, p_theta_x=1, p_x_x=1,
        )
        cert = code_certificate(env, b_upsilon=1.0, x_norm=1.0)
        loss = LossEnvelope(1.0, 1.0, lip_g=1.0, lip_dg=1.0)
        s = 1.2
        order = int(required_moment_order(env))
        moments = {k: s**k for k in range(1, order + 1)}
        by_samples = code_loss_certificate(cert, loss, sample_norms=[s])
        by_moments = code_loss_certificate(cert, loss, moments=moments)
        assert by_moments.l_phi == pytest.approx(by_samples.l_phi, rel=1e-9)
        assert by_moments.l_grad_phi == pytest.approx(by_samples.l_grad_phi, rel=1e-9)

    def test_moment_route_rejects_fractional_powers(self):
        env = FieldEnvelopes(
            b_v=1.0, b_theta=1.0, b_theta_theta=0.0, b_x_theta=0.0,
            b_theta_x=0.0, b_x_x=0.0, lip_x=0.0, p_theta=0.5,
        )
        cert = code_certificate(env, b_upsilon=1.0, x_norm=1.0)
        with pytest.raises(ValueError):
            code_loss_certificate(cert, LossEnvelope(1.0, 1.0), moments={1: 1.0, 2: 1.0})

    def test_required_moment_order_formula(self):
        env = FieldEnvelopes(
            b_v=1.0, b_theta=1.0, b_theta_theta=1.0, b_x_theta=1.0,
            b_theta_x=1.0, b_x_x=1.0, lip_x=1.0,
            p_theta=2, p_theta_theta=1, p_x_theta=1, p_theta_x=3, p_x_x=1,
        )
        # the quadratic l_x term needs x-norm powers up to p_x_x + 2 p_theta,
        # and p_theta_x + p_theta also competes
        assert required_moment_order(env) == max(
            1, 1, 1 + 2, 3 + 2, 1 + 2 * 2, 2 * 2
        )


class TestEnvelopeVerifier:
    def _boxes(self, dim_theta, dim_state, r):
        return (
            (-r * np.ones(dim_theta), r * np.ones(dim_theta)),
            (-r * np.ones(dim_state), r * np.ones(dim_state)),
        )

    def test_correct_envelopes_pass(self):
        field = linear_scalar_field()
        env = FieldEnvelopes(
            b_v=1.0, b_theta=1.0, b_theta_theta=0.0, b_x_theta=1.0,
            b_theta_x=1.0, b_x_x=0.0, lip_x=1.0, p_theta=1.0,
        )
        tb, xb = self._boxes(1, 1, 1.0)
        out = verify_envelopes(field, env, tb, xb, [0.0, 0.5, 1.0], 200, seed=0)
        assert out == []

    def test_understated_bound_is_caught(self):
        field = linear_scalar_field()
        env = FieldEnvelopes(
            b_v=0.1, b_theta=1.0, b_theta_theta=0.0, b_x_theta=1.0,
            b_theta_x=1.0, b_x_x=0.0, lip_x=1.0, p_theta=1.0,
        )
        tb, xb = self._boxes(1, 1, 1.0)
        out = verify_envelopes(field, env, tb, xb, [0.0, 1.0], 200, seed=0)
        assert out and any("b_v" in msg for msg in out)


class TestTrajectoryOutput:
    def test_csv_includes_variation_column(self, tmp_path):
        field = linear_scalar_field()
        traj = solve_first_variation(
            field, UNIT_DENSITY, np.array([0.5]), np.array([1.0]), 10
        )
        path = tmp_path / "traj.csv"
        traj.to_csv(path)
        lines = path.read_text().strip().split("\n")
        assert lines[0].split(",")[0] == "t"
        assert "first_variation_fro" in lines[0]
        assert len(lines) >= 11

    def test_plain_csv_has_state_only(self, tmp_path):
        field = linear_scalar_field()
        traj = solve_code(field, UNIT_DENSITY, np.array([0.5]), np.array([1.0]), 10)
        path = tmp_path / "traj.csv"
        traj.to_csv(path)
        header = path.read_text().split("\n")[0]
        assert header == "t,x_0"
