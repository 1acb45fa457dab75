#!/usr/bin/env python3
"""Sample random dense nets and compare certificates against empirical estimates.

Prints one row per configuration with the certified constants, the sampled
difference-quotient maxima, and the certificate/empirical ratio.  A ratio
below 1 would be a soundness violation; the script exits nonzero if any
row shows one.
"""

import argparse
import sys

import numpy as np

from lipcert import (
    BoundInputs,
    empirical_grad_lipschitz,
    empirical_lipschitz,
    make_activation,
    network_certificate,
    network_jacobian_map,
    network_output_map,
)
from lipcert.bounds import ArchitectureSpec


def random_config(rng, max_width, max_hidden):
    m = int(rng.integers(0, max_hidden + 1))
    widths = tuple(int(w) for w in rng.integers(1, max_width + 1, size=m + 2))
    acts = tuple(
        make_activation(str(rng.choice(["tanh", "sigmoid"]))) for _ in range(m)
    )
    return ArchitectureSpec(widths=widths, activations=acts)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n-configs", type=int, default=20)
    ap.add_argument("--n-pairs", type=int, default=5000)
    ap.add_argument("--max-width", type=int, default=8)
    ap.add_argument("--max-hidden", type=int, default=4)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    rng = np.random.default_rng(args.seed)
    b_grid = [0.5, 1.0, 2.0]
    s_grid = [0.0, 1.0, 3.0]
    print(f"{'widths':<18} {'B':>4} {'S':>4} {'L_N':>10} {'emp':>10} "
          f"{'ratio':>8} {'L_gN':>10} {'emp':>10} {'ratio':>8}")
    violations = 0
    for i in range(args.n_configs):
        arch = random_config(rng, args.max_width, args.max_hidden)
        b = b_grid[i % 3]
        s = s_grid[(i // 3) % 3]
        if s > 0:
            x = rng.normal(size=arch.widths[0])
            x = x / np.linalg.norm(x) * s
        else:
            x = np.zeros(arch.widths[0])
        cert = network_certificate(arch, BoundInputs(b_omega=b), s)
        est_n = empirical_lipschitz(
            network_output_map(arch, x), arch.n_params, b, args.n_pairs, seed=7 * i
        )
        est_j = empirical_grad_lipschitz(
            network_jacobian_map(arch, x), arch.n_params, b, args.n_pairs,
            seed=7 * i + 1,
        )
        rn = cert.l_n / est_n.max_ratio if est_n.max_ratio else float("inf")
        rj = cert.l_grad_n / est_j.max_ratio if est_j.max_ratio else float("inf")
        if est_n.max_ratio > cert.l_n or est_j.max_ratio > cert.l_grad_n:
            violations += 1
        label = "x".join(str(w) for w in arch.widths)
        print(f"{label:<18} {b:>4.1f} {s:>4.1f} {cert.l_n:>10.4g} "
              f"{est_n.max_ratio:>10.4g} {rn:>8.2f} {cert.l_grad_n:>10.4g} "
              f"{est_j.max_ratio:>10.4g} {rj:>8.2f}")
    print(f"\n{args.n_configs} configs, {violations} violations")
    return 1 if violations else 0


if __name__ == "__main__":
    sys.exit(main())
