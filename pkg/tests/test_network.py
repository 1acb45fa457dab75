import math

import numpy as np
import pytest

from lipcert import (
    ArchitectureSpec,
    Params,
    PseudoHuber,
    Sample,
    SquaredError,
    dataset_norms,
    flatten_params,
    forward,
    grad_params,
    init_params,
    layer_slices,
    load_dataset_csv,
    load_params,
    loss_head_envelopes,
    make_activation,
    param_jacobian,
    param_norm,
    project_to_ball,
    sample_in_ball,
    save_params,
    sigmoid,
    tanh,
    unflatten_params,
)
from lipcert.empirical import finite_diff_gradient

from conftest import random_architecture


def small_net(seed=0):
    arch = ArchitectureSpec(widths=(2, 3, 2), activations=(tanh(),))
    return arch, init_params(arch, b_omega=2.0, seed=seed)


class TestForward:
    def test_matches_manual_composition(self):
        arch, params = small_net()
        x = np.array([0.3, -0.7])
        (w0, b0), (w1, b1) = params.layers
        h = np.tanh(w0 @ x + b0)
        out = w1 @ h + b1
        tr = forward(params, arch, x)
        np.testing.assert_allclose(tr.output, out, rtol=1e-15)
        np.testing.assert_allclose(tr.post[0], h, rtol=1e-15)

    def test_affine_network_is_linear_map(self):
        arch = ArchitectureSpec(widths=(3, 2), activations=())
        params = init_params(arch, b_omega=1.0, seed=4)
        x = np.array([1.0, -2.0, 0.5])
        tr = forward(params, arch, x)
        w0, b0 = params.layers[0]
        np.testing.assert_allclose(tr.output, w0 @ x + b0, rtol=1e-15)

    def test_rejects_wrong_input_dim(self):
        arch, params = small_net()
        with pytest.raises(ValueError):
            forward(params, arch, np.zeros(3))


class TestGradients:
    def test_backprop_matches_finite_differences(self):
        rng = np.random.default_rng(11)
        for _ in range(5):
            arch = random_architecture(rng, max_width=4, max_hidden=2)
            params = init_params(arch, b_omega=1.0, seed=int(rng.integers(1000)))
            x = rng.normal(size=arch.widths[0])
            y = rng.normal(size=arch.widths[-1])
            sample = Sample(x=x, y=y)
            head = SquaredError()
            g = grad_params(params, arch, sample, head)
            theta = flatten_params(params)

            def phi(t):
                p = unflatten_params(arch, t)
                return head.value(forward(p, arch, x).output, y)

            fd = finite_diff_gradient(phi, theta, h=1e-6)
            np.testing.assert_allclose(g, fd, rtol=2e-7, atol=1e-9)

    def test_pseudo_huber_gradient(self):
        arch, params = small_net(seed=3)
        sample = Sample(x=np.array([0.5, 0.5]), y=np.array([0.1, -0.2]))
        head = PseudoHuber(delta=0.7)
        g = grad_params(params, arch, sample, head)
        theta = flatten_params(params)

        def phi(t):
            p = unflatten_params(arch, t)
            return head.value(forward(p, arch, x=sample.x).output, sample.y)

        fd = finite_diff_gradient(phi, theta, h=1e-6)
        np.testing.assert_allclose(g, fd, rtol=1e-6, atol=1e-10)

    def test_param_jacobian_matches_finite_differences(self):
        arch = ArchitectureSpec(widths=(2, 3, 2), activations=(sigmoid(),))
        params = init_params(arch, b_omega=1.5, seed=9)
        x = np.array([0.4, -1.1])
        jac = param_jacobian(params, arch, x)
        theta = flatten_params(params)
        h = 1e-6
        for j in range(theta.size):
            e = np.zeros_like(theta)
            e[j] = h
            plus = forward(unflatten_params(arch, theta + e), arch, x).output
            minus = forward(unflatten_params(arch, theta - e), arch, x).output
            np.testing.assert_allclose(jac[:, j], (plus - minus) / (2 * h), atol=1e-7)

    def test_jacobian_shape(self):
        arch, params = small_net()
        jac = param_jacobian(params, arch, np.zeros(2))
        assert jac.shape == (2, arch.n_params)


class TestParamVectorization:
    def test_flatten_roundtrip(self):
        arch, params = small_net(seed=7)
        theta = flatten_params(params)
        assert theta.shape == (arch.n_params,)
        back = unflatten_params(arch, theta)
        for (w, b), (w2, b2) in zip(params.layers, back.layers):
            np.testing.assert_array_equal(w, w2)
            np.testing.assert_array_equal(b, b2)

    def test_layer_slices_partition_the_vector(self):
        arch, params = small_net()
        slices = layer_slices(arch)
        theta = flatten_params(params)
        covered = np.zeros(theta.size, dtype=bool)
        for w_sl, b_sl in slices:
            assert not covered[w_sl].any() and not covered[b_sl].any()
            covered[w_sl] = True
            covered[b_sl] = True
        assert covered.all()

    def test_param_norm_is_euclidean(self):
        arch, params = small_net(seed=2)
        assert param_norm(params) == pytest.approx(
            float(np.linalg.norm(flatten_params(params))), rel=1e-15
        )

    def test_wrong_length_rejected(self):
        arch, _ = small_net()
        with pytest.raises(ValueError):
            unflatten_params(arch, np.zeros(arch.n_params + 1))


class TestBallGeometry:
    def test_sample_in_ball_stays_inside(self):
        rng = np.random.default_rng(0)
        r = 2.5
        pts = np.stack([sample_in_ball(rng, 6, r) for _ in range(500)])
        norms = np.linalg.norm(pts, axis=1)
        assert float(norms.max()) <= r * (1 + 1e-12)
        # the sampler should actually fill the ball, not hug the centre
        assert float(norms.max()) > 0.9 * r
        assert float(norms.min()) < 0.5 * r

    def test_init_params_respects_radius_fraction(self):
        arch = ArchitectureSpec(widths=(3, 4, 1), activations=(tanh(),))
        p = init_params(arch, b_omega=2.0, seed=1, radius_fraction=0.25)
        assert param_norm(p) <= 0.5 + 1e-12

    def test_projection_is_identity_inside(self):
        arch, params = small_net(seed=5)
        big = param_norm(params) * 10.0
        q = project_to_ball(params, big)
        np.testing.assert_array_equal(flatten_params(q), flatten_params(params))

    def test_projection_lands_on_shrunk_sphere(self):
        arch, params = small_net(seed=5)
        target = param_norm(params) / 3.0
        q = project_to_ball(params, target, shrink=0.9)
        assert param_norm(q) == pytest.approx(0.9 * target, rel=1e-12)


class TestLossHeads:
    def test_squared_error_value_and_grad(self):
        head = SquaredError()
        out = np.array([1.0, 2.0])
        y = np.array([0.0, 0.0])
        assert head.value(out, y) == pytest.approx(5.0)
        np.testing.assert_allclose(head.grad_x(out, y), 2.0 * out)

    def test_pseudo_huber_small_residual_is_quadratic(self):
        head = PseudoHuber(delta=1.0)
        r = np.array([1e-4])
        assert head.value(r, np.zeros(1)) == pytest.approx(0.5 * 1e-8, rel=1e-6)

    def test_squared_error_envelope(self):
        envp = loss_head_envelopes(SquaredError(), dim=3, output_bound=2.0, target_bound=1.0)
        assert envp.g_p_max == pytest.approx(2.0 * (2.0 + 1.0))
        assert envp.g_pp_max == pytest.approx(2.0 * math.sqrt(3.0))
        assert envp.lip_g == envp.g_p_max
        assert envp.lip_dg == pytest.approx(2.0)

    def test_squared_error_envelope_needs_finite_bounds(self):
        with pytest.raises(ValueError):
            loss_head_envelopes(SquaredError(), dim=1, output_bound=math.inf, target_bound=1.0)

    def test_pseudo_huber_envelope_is_global(self):
        envp = loss_head_envelopes(
            PseudoHuber(delta=0.5), dim=4, output_bound=math.inf, target_bound=math.inf
        )
        assert envp.g_p_max == pytest.approx(0.5 * math.sqrt(4.0))
        assert envp.g_pp_max == pytest.approx(math.sqrt(4.0))
        assert envp.lip_dg == pytest.approx(1.0)

    def test_envelope_covers_sampled_derivatives(self):
        # the declared slope bound must dominate actual gradients of the
        # scalarized loss over the advertised region
        rng = np.random.default_rng(21)
        head = SquaredError()
        ob, tb, dim = 1.5, 1.0, 3
        envp = loss_head_envelopes(head, dim=dim, output_bound=ob, target_bound=tb)
        for _ in range(200):
            out = sample_in_ball(rng, dim, ob)
            y = sample_in_ball(rng, dim, tb)
            g = np.linalg.norm(head.grad_x(out, y))
            assert g <= envp.g_p_max * (1 + 1e-12)


class TestSerialization:
    def test_params_json_roundtrip(self, tmp_path):
        arch, params = small_net(seed=13)
        path = tmp_path / "params.json"
        save_params(params, path)
        back = load_params(path)
        np.testing.assert_array_equal(flatten_params(back), flatten_params(params))

    def test_dataset_csv_roundtrip(self, tmp_path):
        path = tmp_path / "data.csv"
        rows = [
            "# x0,x1,y0",
            "1.0,2.0,0.5",
            "-0.25,0.75,1.0",
        ]
        path.write_text("\n".join(rows) + "\n")
        samples = load_dataset_csv(path, input_dim=2, target_dim=1)
        assert len(samples) == 2
        np.testing.assert_allclose(samples[0].x, [1.0, 2.0])
        np.testing.assert_allclose(samples[1].y, [1.0])
        norms = dataset_norms(samples)
        assert norms[0] == pytest.approx(math.sqrt(5.0))

    def test_dataset_csv_width_mismatch(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("a,b\n1.0,2.0\n")
        with pytest.raises(ValueError):
            load_dataset_csv(path, input_dim=2, target_dim=1)

    def test_make_activation_from_config_dict(self):
        a = make_activation("sigmoid")
        assert a.envelope.sigma_p_max == 0.25
