#!/usr/bin/env python3
"""Train a small tanh net with certificate-derived step sizes.

Runs plain gradient descent at h = 1/L_grad_phi and AdaGrad-norm with the
derived (alpha, beta), then reports descent-violation counts and the
running-min gradient norm.
"""

import argparse
import math

import numpy as np

from lipcert import (
    ArchitectureSpec,
    BoundInputs,
    NetworkObjective,
    Sample,
    SquaredError,
    derive_adagrad_params,
    flatten_params,
    init_params,
    loss_certificate,
    loss_head_envelopes,
    network_certificate,
    run_adagrad_norm,
    run_gd,
    sample_in_ball,
    tanh,
)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--steps", type=int, default=500)
    ap.add_argument("--n-samples", type=int, default=8)
    ap.add_argument("--b-omega", type=float, default=1.0)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    arch = ArchitectureSpec(widths=(2, 3, 1), activations=(tanh(),))
    rng = np.random.default_rng(args.seed)
    samples = [
        Sample(sample_in_ball(rng, 2, 1.0), sample_in_ball(rng, 1, 1.0))
        for _ in range(args.n_samples)
    ]
    head = SquaredError()
    hidden_b = network_certificate(
        arch, BoundInputs(b_omega=args.b_omega), 1.0
    ).last_hidden.b_n
    out_bound = args.b_omega * math.sqrt(hidden_b**2 + 1.0)
    env = loss_head_envelopes(head, dim=1, output_bound=out_bound, target_bound=1.0)
    norms = [float(np.linalg.norm(s.x)) for s in samples]
    cert = loss_certificate(
        arch, BoundInputs(b_omega=args.b_omega), env, dataset_norms=norms
    )
    print(f"L_phi = {cert.l_phi:.4f}, L_grad_phi = {cert.l_grad_phi:.4f}, "
          f"h = {1.0 / cert.l_grad_phi:.6f}")

    objective = NetworkObjective(arch, samples, head)
    theta0 = flatten_params(init_params(arch, args.b_omega, seed=args.seed + 1))

    trace = run_gd(objective, theta0, cert.l_grad_phi, args.steps, args.b_omega)
    print(f"gd:       phi {trace.steps[0].phi:.6f} -> {trace.final_phi:.6f}, "
          f"violations={trace.n_descent_violations}, "
          f"projections={trace.n_projected}")

    alpha, beta = derive_adagrad_params(cert, eps_margin=1.0)
    trace = run_adagrad_norm(
        objective, theta0, alpha, beta, eps_exponent=0.0,
        batch_size=max(1, args.n_samples // 2), steps=args.steps,
        seed=args.seed, b_omega=args.b_omega, l_grad_phi=cert.l_grad_phi,
    )
    curve = trace.min_grad_curve()
    print(f"adagrad:  alpha={alpha}, beta={beta:.4f}, "
          f"min||G|| {curve[0]:.6f} -> {curve[-1]:.6f}, "
          f"final step {trace.steps[-1].step_size:.6f}")


if __name__ == "__main__":
    main()
