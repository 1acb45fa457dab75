"""Certified parameter-space Lipschitz constants for dense feed-forward nets.

Everything here treats the *parameters* as the variable: for a fixed input of
norm S and parameter vectors confined to the open ball of radius b_omega (in
the concatenated Frobenius norm over all weight matrices and bias vectors),
we propagate upper bounds on

  * the Lipschitz constant of the layer map  theta -> N_u(theta, x),
  * the Lipschitz constant of its parameter Jacobian theta -> grad N_u,
  * the sup norm of the layer output, and
  * the sup norm of the Jacobian itself (which coincides with the first
    Lipschitz constant).

One composition step moves all four constants through "activation applied to
an affine map of the previous features".  Chaining the step over the hidden
layers, then once more with an identity head and once with a scalar loss
head, yields certificates for the network, its Jacobian, the per-sample loss
and the dataset loss gradient.  All arithmetic is plain Python floats;
overflow saturates to +inf and is reported via a certificate flag instead of
raising.
"""

from __future__ import annotations

import hashlib
import itertools
import json
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .activations import Activation, ActivationEnvelope

__all__ = [
    "ArchitectureSpec",
    "BoundInputs",
    "Certificate",
    "ClosedFormBounds",
    "LayerBounds",
    "LossEnvelope",
    "NetworkBounds",
    "RefinementSearch",
    "SampleMoments",
    "closed_form_bounds",
    "closed_form_certificate",
    "derive_adagrad_params",
    "derive_gd_step",
    "input_base",
    "layer_step",
    "loss_certificate",
    "network_certificate",
    "refine_over_layer_budgets",
]


def _prod(*xs: float) -> float:
    """Product where an exact zero factor wins over inf (a dropped bound term)."""
    out = 1.0
    for x in xs:
        if x == 0.0:
            return 0.0
    for x in xs:
        out *= x
    return out


def _sq(x: float) -> float:
    return x * x


# ---------------------------------------------------------------------------
# domain types


@dataclass(frozen=True)
class ArchitectureSpec:
    """Layer widths [l_0, ..., l_{m+1}] plus the m hidden activations.

    The final layer is always affine with identity head; it has a width but
    no activation, hence len(activations) == len(widths) - 2.
    """

    widths: tuple[int, ...]
    activations: tuple[Activation, ...]

    def __post_init__(self) -> None:
        if len(self.widths) < 2:
            raise ValueError("need at least input and output widths")
        if any((not isinstance(w, int)) or w < 1 for w in self.widths):
            raise ValueError("widths must be positive integers")
        if len(self.activations) != len(self.widths) - 2:
            raise ValueError(
                f"expected {len(self.widths) - 2} activations for "
                f"{len(self.widths)} widths, got {len(self.activations)}"
            )

    @property
    def m(self) -> int:
        """Number of hidden (activated) layers."""
        return len(self.widths) - 2

    @property
    def n_layers(self) -> int:
        return len(self.widths) - 1

    @property
    def n_params(self) -> int:
        return sum(
            o * i + o for i, o in zip(self.widths[:-1], self.widths[1:])
        )

    def layer_param_count(self, u: int) -> int:
        """Parameter count of layer u (1-based)."""
        return self.widths[u] * self.widths[u - 1] + self.widths[u]


@dataclass(frozen=True)
class SampleMoments:
    """Second and fourth raw moments of the input norm distribution."""

    e_s2: float
    e_s4: float

    def __post_init__(self) -> None:
        if not (math.isfinite(self.e_s2) and math.isfinite(self.e_s4)):
            raise ValueError("moments must be finite")
        if self.e_s2 < 0 or self.e_s4 < 0:
            raise ValueError("moments must be nonnegative")
        if self.e_s4 < self.e_s2 * self.e_s2:
            raise ValueError("E[S^4] >= E[S^2]^2 must hold")


@dataclass(frozen=True)
class BoundInputs:
    """Parameter-domain description shared by all certificate routines.

    layer_budgets, when given, assigns each layer its own radius D_u with
    sum(D_u^2) <= b_omega^2; certificates computed from such a split are
    valid on the whole b_omega ball because each layer's parameter block is
    separately inside its budget.
    """

    b_omega: float
    layer_budgets: tuple[float, ...] | None = None
    sample_norms: tuple[float, ...] | None = None
    moments: SampleMoments | None = None

    def __post_init__(self) -> None:
        if not (self.b_omega > 0 and math.isfinite(self.b_omega)):
            raise ValueError("b_omega must be a positive finite real")
        if self.layer_budgets is not None:
            if any(d < 0 or not math.isfinite(d) for d in self.layer_budgets):
                raise ValueError("layer budgets must be finite and nonnegative")
            total = math.fsum(d * d for d in self.layer_budgets)
            if total > self.b_omega**2 * (1.0 + 1e-12):
                raise ValueError("sum of squared layer budgets exceeds b_omega^2")
        if self.sample_norms is not None:
            if len(self.sample_norms) == 0:
                raise ValueError("sample_norms must be nonempty when given")
            if any(s < 0 or not math.isfinite(s) for s in self.sample_norms):
                raise ValueError("sample norms must be finite and nonnegative")

    def budgets_for(self, arch: ArchitectureSpec) -> tuple[float, ...]:
        n = arch.m + 1
        if self.layer_budgets is None:
            return (self.b_omega,) * n
        if len(self.layer_budgets) != n:
            raise ValueError(
                f"expected {n} layer budgets, got {len(self.layer_budgets)}"
            )
        return self.layer_budgets


@dataclass(frozen=True)
class LossEnvelope:
    """Derivative bounds for a scalar loss head g(., y).

    g_p_max / g_pp_max bound the gradient norm and the (flattened) Hessian
    norm in the network-output argument; lip_g / lip_dg are the Lipschitz
    constants of g and of its gradient used by the controlled-ODE route.
    """

    g_p_max: float
    g_pp_max: float
    lip_g: float | None = None
    lip_dg: float | None = None

    def __post_init__(self) -> None:
        for name in ("g_p_max", "g_pp_max"):
            v = getattr(self, name)
            if not math.isfinite(v) or v < 0:
                raise ValueError(f"{name} must be finite and nonnegative")
        for name in ("lip_g", "lip_dg"):
            v = getattr(self, name)
            if v is not None and (not math.isfinite(v) or v < 0):
                raise ValueError(f"{name} must be finite and nonnegative")

    @property
    def lip_g_value(self) -> float:
        return self.g_p_max if self.lip_g is None else self.lip_g

    @property
    def lip_dg_value(self) -> float:
        return self.g_pp_max if self.lip_dg is None else self.lip_dg


@dataclass(frozen=True)
class LayerBounds:
    """Certified constants after u composition steps.

    l_n       Lipschitz constant of theta -> N_u
    l_grad_n  Lipschitz constant of theta -> grad_theta N_u
    b_n       sup-norm bound on the layer output (may be +inf)
    b_grad_n  sup-norm bound on the parameter Jacobian; always equals l_n
    alpha     block-perturbation part of l_grad_n^2 (new layer's parameters)
    beta      carried part of l_grad_n^2 (perturbations below this layer)
    """

    l_n: float
    l_grad_n: float
    b_n: float
    b_grad_n: float
    alpha: float
    beta: float


def input_base(s: float) -> LayerBounds:
    """Depth-zero bounds: the constant feature map x with norm S."""
    if s < 0 or not math.isfinite(s):
        raise ValueError("input norm must be finite and nonnegative")
    return LayerBounds(0.0, 0.0, s, 0.0, 0.0, 0.0)


def _head_constants(env: ActivationEnvelope | LossEnvelope | None) -> tuple[float, float, float]:
    """Map the composition head to (c1, c2, b3) derivative/value bounds."""
    if env is None:
        return 1.0, 0.0, math.inf
    if isinstance(env, ActivationEnvelope):
        return env.sigma_p_max, env.sigma_pp_max, env.sigma_max
    if isinstance(env, LossEnvelope):
        return env.g_p_max, env.g_pp_max, math.inf
    raise TypeError(f"unsupported envelope type: {type(env)!r}")


def layer_step(
    prev: LayerBounds,
    env: ActivationEnvelope | LossEnvelope | None,
    width_out: int,
    budget: float,
    *,
    require_bounded: bool = False,
) -> LayerBounds:
    """One composition step: head applied to an affine map of the previous features.

    prev carries the constants of the feature map being fed in (use
    input_base(S) for the raw input).  env supplies the head's derivative
    bounds: an activation, a loss envelope (then width_out must be 1), or
    None for an identity head.  budget is the radius allotted to the new
    affine layer's own parameters.
    """
    if width_out < 1:
        raise ValueError("width_out must be a positive integer")
    if budget < 0 or math.isnan(budget):
        raise ValueError("budget must be nonnegative")
    for name in ("l_n", "l_grad_n", "b_n", "b_grad_n"):
        if getattr(prev, name) < 0:
            raise ValueError(f"prev.{name} must be nonnegative")
    c1, c2, b3 = _head_constants(env)

    l1, l2 = prev.l_n, prev.l_grad_n
    b1, b2 = prev.b_n, prev.b_grad_n
    d = float(budget)
    n3 = float(width_out)

    # overflow can push squared budgets to inf; every product with a zero
    # bound factor must still collapse to zero, so the outer factors go
    # through _prod as well
    l_chi = _prod(c1, math.sqrt(_prod(d, d, l1, l1) + b1 * b1 + 1.0))

    a_term = _prod(
        3.0 * _prod(l1, l1), _prod(c1, c1, n3) + _prod(c2, c2, d, d, b1, b1)
    ) + 2.0 * _prod(c2, c2, d, d, l1, l1)
    b_term = _prod(_prod(c2, c2), b1 * b1 + 1.0, 3.0 * b1 * b1 + 2.0)
    alpha = max(a_term, b_term)

    cross = _prod(n3, c1, d, l2) + _prod(b2, c2, d, d, l1)
    carry = _prod(
        _prod(b2, b2), _sq(_prod(n3, c1) + _prod(d, c2) * math.sqrt(b1 * b1 + 1.0))
    )
    beta = cross * cross + carry

    l_grad_chi = math.sqrt(alpha + beta)

    if math.isfinite(b3):
        b_chi = math.sqrt(n3) * b3
    else:
        if require_bounded:
            raise ValueError("head has no finite value bound, cannot certify b_n")
        b_chi = math.inf

    return LayerBounds(l_chi, l_grad_chi, b_chi, l_chi, alpha, beta)


@dataclass(frozen=True)
class NetworkBounds:
    """Full recursion output: one LayerBounds per hidden layer plus the head."""

    per_layer: tuple[LayerBounds, ...]
    final: LayerBounds
    s: float
    budgets: tuple[float, ...]

    @property
    def l_n(self) -> float:
        return self.final.l_n

    @property
    def l_grad_n(self) -> float:
        return self.final.l_grad_n

    @property
    def last_hidden(self) -> LayerBounds:
        return self.per_layer[-1] if self.per_layer else input_base(self.s)


def _network_bounds(
    arch: ArchitectureSpec, budgets: Sequence[float], s: float
) -> NetworkBounds:
    """Recursion engine over explicit per-layer radii (no sphere validation)."""
    m = arch.m
    if len(budgets) != m + 1:
        raise ValueError(f"expected {m + 1} budgets, got {len(budgets)}")
    state = input_base(s)
    per_layer: list[LayerBounds] = []
    for u in range(1, m + 1):
        env = arch.activations[u - 1].envelope
        lb = layer_step(state, env, arch.widths[u], budgets[u - 1])
        if env.kind == "smoothed_relu":
            # unbounded activation: track the output bound through the affine
            # growth instead, offset by the smoothing gap
            b_n = budgets[u - 1] * math.sqrt(state.b_n * state.b_n + 1.0) + env.relu_epsilon
            lb = replace(lb, b_n=b_n)
        per_layer.append(lb)
        state = lb
    final = layer_step(state, None, arch.widths[m + 1], budgets[m])
    return NetworkBounds(tuple(per_layer), final, s, tuple(float(b) for b in budgets))


def network_certificate(
    arch: ArchitectureSpec, inputs: BoundInputs, s: float
) -> NetworkBounds:
    """Layer-by-layer constants for a single input of norm s."""
    return _network_bounds(arch, inputs.budgets_for(arch), s)


# ---------------------------------------------------------------------------
# certificates


@dataclass(frozen=True)
class Certificate:
    """Bundle of certified constants for one architecture/loss/dataset triple.

    per_layer and the *_final constants are evaluated at the largest input
    norm in the dataset (so they hold for every sample simultaneously);
    l_phi / l_grad_phi are dataset averages of the per-sample loss constants.
    b_grad_phi equals l_phi: a bound on the loss Lipschitz constant is also
    a bound on the loss gradient's norm.
    """

    per_layer: tuple[LayerBounds, ...]
    l_n_final: float
    l_grad_n_final: float
    l_phi: float
    l_grad_phi: float
    b_grad_phi: float
    method: str
    inputs_digest: str
    flags: tuple[str, ...] = ()
    layer_budgets: tuple[float, ...] | None = None

    @property
    def overflowed(self) -> bool:
        return "overflow" in self.flags


def _digest(payload: dict) -> str:
    canon = json.dumps(payload, sort_keys=True, separators=(",", ":"), default=repr)
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()[:16]


def _certificate_digest(
    arch: ArchitectureSpec,
    inputs: BoundInputs,
    loss: LossEnvelope,
    norms: Sequence[float] | None,
    moments: SampleMoments | None,
    method: str,
) -> str:
    payload = {
        "widths": list(arch.widths),
        "activations": [
            {
                "kind": a.envelope.kind,
                "sigma_max": a.envelope.sigma_max,
                "sigma_p_max": a.envelope.sigma_p_max,
                "sigma_pp_max": a.envelope.sigma_pp_max,
                "relu_epsilon": a.envelope.relu_epsilon,
            }
            for a in arch.activations
        ],
        "b_omega": inputs.b_omega,
        "layer_budgets": None if inputs.layer_budgets is None else list(inputs.layer_budgets),
        "loss": [loss.g_p_max, loss.g_pp_max, loss.lip_g_value, loss.lip_dg_value],
        "norms": None if norms is None else list(norms),
        "moments": None if moments is None else [moments.e_s2, moments.e_s4],
        "method": method,
    }
    return _digest(payload)


def _resolve_norms(
    inputs: BoundInputs, dataset_norms: Sequence[float] | None
) -> tuple[tuple[float, ...] | None, SampleMoments | None]:
    if dataset_norms is not None:
        if len(dataset_norms) == 0:
            raise ValueError("dataset_norms must be nonempty")
        if any(s < 0 or not math.isfinite(s) for s in dataset_norms):
            raise ValueError("sample norms must be finite and nonnegative")
        return tuple(float(s) for s in dataset_norms), None
    if inputs.sample_norms is not None:
        return inputs.sample_norms, None
    if inputs.moments is not None:
        return None, inputs.moments
    raise ValueError("no sample norms or moments supplied")


def _overflow_flags(*values: float) -> tuple[str, ...]:
    return ("overflow",) if any(math.isinf(v) for v in values) else ()


def loss_certificate(
    arch: ArchitectureSpec,
    inputs: BoundInputs,
    loss: LossEnvelope,
    dataset_norms: Sequence[float] | None = None,
) -> Certificate:
    """Recursive certificate for the mean loss over a finite dataset.

    With explicit sample norms the per-sample constants are averaged with
    equal weights in dataset order.  With SampleMoments instead, a
    closed-form polynomial envelope in S^2 is integrated exactly (see
    _moment_certificate).
    """
    norms, moments = _resolve_norms(inputs, dataset_norms)
    budgets = inputs.budgets_for(arch)
    if moments is not None:
        return _moment_certificate(arch, inputs, loss, moments)

    heads = []
    for s in norms:
        nb = _network_bounds(arch, budgets, s)
        heads.append(layer_step(nb.last_hidden, loss, 1, budgets[-1]))
    l_phi = math.fsum(h.l_n for h in heads) / len(heads)
    l_grad_phi = math.fsum(h.l_grad_n for h in heads) / len(heads)

    nb_max = _network_bounds(arch, budgets, max(norms))
    return Certificate(
        per_layer=nb_max.per_layer,
        l_n_final=nb_max.l_n,
        l_grad_n_final=nb_max.l_grad_n,
        l_phi=l_phi,
        l_grad_phi=l_grad_phi,
        b_grad_phi=l_phi,
        method="recursive",
        inputs_digest=_certificate_digest(arch, inputs, loss, norms, None, "recursive"),
        flags=_overflow_flags(nb_max.l_n, nb_max.l_grad_n, l_phi, l_grad_phi),
        layer_budgets=inputs.layer_budgets,
    )


# ---------------------------------------------------------------------------
# closed forms


@dataclass(frozen=True)
class ClosedFormBounds:
    """Squared per-layer constants from the depth-explicit formulas."""

    l_n_sq: tuple[float, ...]
    l_grad_n_sq: tuple[float, ...]


def closed_form_bounds(
    arch: ArchitectureSpec, inputs: BoundInputs, s: float
) -> ClosedFormBounds:
    """Depth-explicit geometric-sum bounds on L_{N_u}^2 and L_{grad N_u}^2.

    Uses the uniform maxima of the activation envelopes over the hidden
    layers, so each entry dominates the corresponding recursive constant.
    Unbounded activations push sigma_max to +inf and the bounds saturate.
    """
    m = arch.m
    if m == 0:
        return ClosedFormBounds((), ())
    b = inputs.b_omega
    bsq = b * b
    ell = float(max(arch.widths[1 : m + 1]))
    sp = max(a.envelope.sigma_p_max for a in arch.activations)
    spp = max(a.envelope.sigma_pp_max for a in arch.activations)
    smax = max(a.envelope.sigma_max for a in arch.activations)

    nb = _network_bounds(arch, (b,) * (m + 1), s)

    # value route: ratio bsq*sp^2 per layer, inhomogeneity ell*smax^2 + 1
    r1 = _prod(bsq, sp, sp)
    k_in = _prod(ell, smax, smax) + 1.0
    spsq = sp * sp
    l_n_sq: list[float] = []
    pow_r1 = 1.0
    geo1 = 0.0  # sum_{k=1}^{u-1} r1^{k-1}
    for u in range(1, m + 1):
        first = _prod(pow_r1, spsq, s * s + 1.0)
        l_n_sq.append(first + _prod(geo1, spsq, k_in))
        geo1 += pow_r1
        pow_r1 *= r1

    # gradient route: ratio 2 ell^2 sp^2 bsq, inhomogeneity alpha_j + gamma_j
    r2 = _prod(2.0, ell, ell, spsq, bsq)

    def gamma(j: int) -> float:
        # j >= 2; previous layer's recursive constants
        prev = nb.per_layer[j - 2]
        l_prev, b_prev = prev.l_n, prev.b_n
        t1 = _prod(2.0, l_prev, l_prev, spp, spp, bsq, bsq, l_prev, l_prev)
        t2 = _prod(l_prev, l_prev) * _sq(
            _prod(ell, sp) + _prod(b, spp) * math.sqrt(b_prev * b_prev + 1.0)
        )
        return t1 + t2

    # l_grad_n_sq[u] = r2^{u-1} g1 + sum_{k=1}^{u-1} r2^{k-1} (alpha_{u-k+1} + gamma_{u-k+1})
    g1 = _prod(spp, spp, s * s + 1.0, 3.0 * s * s + 2.0)
    l_grad_n_sq: list[float] = []
    for u in range(1, m + 1):
        lead = _prod(g1, *([r2] * (u - 1)))
        pow_r2 = 1.0
        tail = 0.0
        for k in range(1, u):
            j = u - k + 1
            tail += _prod(pow_r2, nb.per_layer[j - 1].alpha + gamma(j))
            pow_r2 *= r2
        l_grad_n_sq.append(lead + tail)

    return ClosedFormBounds(tuple(l_n_sq), tuple(l_grad_n_sq))


def closed_form_certificate(
    arch: ArchitectureSpec,
    inputs: BoundInputs,
    loss: LossEnvelope,
    dataset_norms: Sequence[float] | None = None,
) -> Certificate:
    """Certificate whose hidden-layer constants come from the closed forms.

    The head steps reuse the one-step composition formulas with the (larger)
    closed-form layer constants, so every field dominates the recursive
    certificate's counterpart.
    """
    norms, moments = _resolve_norms(inputs, dataset_norms)
    if moments is not None:
        raise ValueError("closed-form certificate needs explicit sample norms")
    budgets = inputs.budgets_for(arch)
    if inputs.layer_budgets is not None:
        raise ValueError("closed forms are defined for the uniform budget only")
    m = arch.m

    def head_states(s: float) -> tuple[LayerBounds, NetworkBounds]:
        nb = _network_bounds(arch, budgets, s)
        if m == 0:
            return input_base(s), nb
        cf = closed_form_bounds(arch, inputs, s)
        last = nb.per_layer[-1]
        l_cf = math.sqrt(cf.l_n_sq[-1])
        lg_cf = math.sqrt(cf.l_grad_n_sq[-1])
        return replace(last, l_n=l_cf, l_grad_n=lg_cf, b_grad_n=l_cf), nb

    heads = []
    for s in norms:
        state, _ = head_states(s)
        heads.append(layer_step(state, loss, 1, budgets[-1]))
    l_phi = math.fsum(h.l_n for h in heads) / len(heads)
    l_grad_phi = math.fsum(h.l_grad_n for h in heads) / len(heads)

    s_max = max(norms)
    state_max, nb_max = head_states(s_max)
    final = layer_step(state_max, None, arch.widths[m + 1], budgets[-1])
    if m == 0:
        table: tuple[LayerBounds, ...] = ()
    else:
        cf = closed_form_bounds(arch, inputs, s_max)
        table = tuple(
            replace(
                lb,
                l_n=math.sqrt(cf.l_n_sq[u]),
                l_grad_n=math.sqrt(cf.l_grad_n_sq[u]),
                b_grad_n=math.sqrt(cf.l_n_sq[u]),
            )
            for u, lb in enumerate(nb_max.per_layer)
        )
    return Certificate(
        per_layer=table,
        l_n_final=final.l_n,
        l_grad_n_final=final.l_grad_n,
        l_phi=l_phi,
        l_grad_phi=l_grad_phi,
        b_grad_phi=l_phi,
        method="closed_form",
        inputs_digest=_certificate_digest(arch, inputs, loss, norms, None, "closed_form"),
        flags=_overflow_flags(final.l_n, final.l_grad_n, l_phi, l_grad_phi),
        layer_budgets=None,
    )


# ---------------------------------------------------------------------------
# moment mode


def _poly_head_sq_constants(
    arch: ArchitectureSpec, inputs: BoundInputs, loss: LossEnvelope, s: float
) -> tuple[float, float]:
    """Weakened squared head constants that are polynomial in t = S^2.

    Runs the composition recursion with two monotone relaxations applied to
    the gradient-level constants: max(a, b) -> a + b and (a + b)^2 ->
    2 a^2 + 2 b^2.  Both only increase the result, and with every bounded
    activation the squared loss-level constant becomes affine in t while the
    squared gradient-level constant becomes quadratic in t, which is what
    lets the moment mode integrate them exactly.
    """
    budgets = inputs.budgets_for(arch)
    m = arch.m
    l1_sq, lg_sq = 0.0, 0.0  # squared L of the feature map and of its Jacobian
    b1 = s

    def step_sq(c1: float, c2: float, n3: float, d: float) -> tuple[float, float]:
        new_l_sq = _prod(c1, c1) * (_prod(d, d, l1_sq) + b1 * b1 + 1.0)
        alpha_w = (
            3.0 * _prod(l1_sq, _prod(c1, c1, n3) + _prod(c2, c2, d, d, b1, b1))
            + 2.0 * _prod(c2, c2, d, d, l1_sq)
            + _prod(c2, c2) * (b1 * b1 + 1.0) * (3.0 * b1 * b1 + 2.0)
        )
        carry_coef = _sq(_prod(n3, c1) + _prod(d, c2) * math.sqrt(b1 * b1 + 1.0))
        beta_w = (
            2.0 * _prod(n3, n3, c1, c1, d, d, lg_sq)
            + 2.0 * _prod(c2, c2, d, d, d, d, l1_sq, l1_sq)
            + _prod(l1_sq, carry_coef)
        )
        return new_l_sq, alpha_w + beta_w

    for u in range(1, m + 1):
        env = arch.activations[u - 1].envelope
        if not math.isfinite(env.sigma_max):
            raise ValueError("moment mode requires bounded activations")
        l1_sq, lg_sq = step_sq(
            env.sigma_p_max, env.sigma_pp_max, float(arch.widths[u]), budgets[u - 1]
        )
        b1 = math.sqrt(arch.widths[u]) * env.sigma_max
    return step_sq(loss.g_p_max, loss.g_pp_max, 1.0, budgets[-1])


def _moment_certificate(
    arch: ArchitectureSpec,
    inputs: BoundInputs,
    loss: LossEnvelope,
    moments: SampleMoments,
) -> Certificate:
    """Certificate from norm moments via polynomial envelopes in t = S^2.

    The weakened squared head constants are polynomials in t of degree <= 1
    (loss level) and <= 2 (gradient level) with nonnegative coefficients.
    Fitting them exactly at t in {0, 1, 2} and integrating termwise against
    (E[S^2], E[S^4]) bounds E[L_phi^2] and E[L_grad_phi^2]; Jensen then
    bounds the expectations themselves.

    The per-layer table is evaluated at the reference norm sqrt(E[S^2]) and
    is informational in this mode; only l_phi / l_grad_phi / b_grad_phi are
    certified expectations.
    """
    if inputs.layer_budgets is not None:
        raise ValueError("moment mode is defined for the uniform budget only")
    v0 = _poly_head_sq_constants(arch, inputs, loss, 0.0)
    v1 = _poly_head_sq_constants(arch, inputs, loss, 1.0)
    v2 = _poly_head_sq_constants(arch, inputs, loss, math.sqrt(2.0))
    # degree-1 fit for the loss level: p(t) = p0 + p1 t
    p0, p1 = v0[0], v1[0] - v0[0]
    fit_err = abs(v2[0] - (p0 + 2.0 * p1))
    if fit_err > 1e-9 * max(1.0, abs(v2[0])):
        raise ValueError("loss-level envelope is not affine in S^2; cannot use moments")
    # degree-2 fit for the gradient level: q(t) = q0 + q1 t + q2 t^2
    q0 = v0[1]
    q2 = (v2[1] - 2.0 * v1[1] + v0[1]) / 2.0
    q1 = v1[1] - q0 - q2
    e_phi_sq = p0 + p1 * moments.e_s2
    e_gphi_sq = q0 + q1 * moments.e_s2 + q2 * moments.e_s4
    if e_phi_sq < 0 or e_gphi_sq < 0:
        raise ValueError("moment envelope produced a negative bound")
    l_phi = math.sqrt(e_phi_sq)
    l_grad_phi = math.sqrt(e_gphi_sq)
    s_eff = math.sqrt(moments.e_s2)
    nb = _network_bounds(arch, inputs.budgets_for(arch), s_eff)
    return Certificate(
        per_layer=nb.per_layer,
        l_n_final=nb.l_n,
        l_grad_n_final=nb.l_grad_n,
        l_phi=l_phi,
        l_grad_phi=l_grad_phi,
        b_grad_phi=l_phi,
        method="recursive",
        inputs_digest=_certificate_digest(arch, inputs, loss, None, moments, "recursive"),
        flags=_overflow_flags(nb.l_n, nb.l_grad_n, l_phi, l_grad_phi) + ("moment_mode",),
        layer_budgets=None,
    )


# ---------------------------------------------------------------------------
# per-layer budget refinement


@dataclass(frozen=True)
class RefinementSearch:
    restarts: int = 8
    iters: int = 200
    seed: int = 0
    angle_tol: float = 1e-10

    def __post_init__(self) -> None:
        if self.restarts < 0 or self.iters < 0:
            raise ValueError("restarts and iters must be nonnegative")


_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


def _golden_max(f: Callable[[float], float], a: float, b: float, tol: float) -> tuple[float, float]:
    """Golden-section maximization on [a, b]; returns (argmax, max)."""
    x1 = b - _GOLDEN * (b - a)
    x2 = a + _GOLDEN * (b - a)
    f1, f2 = f(x1), f(x2)
    while b - a > tol:
        if f1 < f2:
            a, x1, f1 = x1, x2, f2
            x2 = a + _GOLDEN * (b - a)
            f2 = f(x2)
        else:
            b, x2, f2 = x2, x1, f1
            x1 = b - _GOLDEN * (b - a)
            f1 = f(x1)
    xm = 0.5 * (a + b)
    return xm, f(xm)


def _max_on_sphere(
    f: Callable[[Sequence[float]], float],
    dim: int,
    radius: float,
    search: RefinementSearch,
) -> tuple[float, tuple[float, ...]]:
    """Maximize f over the nonnegative sphere of the given radius.

    Coordinate-pair ascent: each move redistributes the mass of two
    coordinates along their circle via golden-section search, preserving the
    total norm exactly.  Deterministic for a fixed seed.
    """
    uniform = (radius / math.sqrt(dim),) * dim
    best_d, best_v = uniform, f(uniform)
    if dim == 1:
        return f((radius,)), (radius,)
    rng = np.random.default_rng(search.seed)
    starts: list[tuple[float, ...]] = [uniform]
    for _ in range(search.restarts):
        g = np.abs(rng.standard_normal(dim))
        nrm = float(np.linalg.norm(g))
        if nrm == 0.0:
            continue
        starts.append(tuple(float(x) for x in (radius / nrm) * g))
    pairs = list(itertools.combinations(range(dim), 2))
    for d0 in starts:
        d = list(d0)
        val = f(d)
        for it in range(search.iters):
            i, j = pairs[it % len(pairs)]
            r = math.hypot(d[i], d[j])
            if r == 0.0:
                continue

            def slice_obj(phi: float) -> float:
                trial = list(d)
                trial[i] = r * math.cos(phi)
                trial[j] = r * math.sin(phi)
                return f(trial)

            phi_star, v_star = _golden_max(slice_obj, 0.0, 0.5 * math.pi, search.angle_tol)
            if v_star > val:
                d[i] = r * math.cos(phi_star)
                d[j] = r * math.sin(phi_star)
                val = v_star
        if val > best_v:
            best_v, best_d = val, tuple(d)
    return best_v, best_d


def refine_over_layer_budgets(
    arch: ArchitectureSpec,
    inputs: BoundInputs,
    loss: LossEnvelope,
    dataset_norms: Sequence[float] | None = None,
    search: RefinementSearch = RefinementSearch(),
) -> Certificate:
    """Tighten the uniform certificate by splitting the radius across layers.

    Any split D with sum(D_u^2) = b_omega^2 yields valid constants, and each
    constant is monotone in every budget, so maximizing each of the four
    reported constants over the split keeps them valid while never exceeding
    the all-layers-get-b_omega certificate.  The four maximizations run
    independently; the stored per-layer table comes from the l_grad_phi
    maximizer (the constant that drives step sizes).
    """
    norms, moments = _resolve_norms(inputs, dataset_norms)
    if moments is not None:
        raise ValueError("budget refinement needs explicit sample norms")
    if arch.m < 1:
        raise ValueError("budget refinement needs at least one hidden layer")
    b = inputs.b_omega
    dim = arch.m + 1
    s_max = max(norms)

    def obj_l_n(d: Sequence[float]) -> float:
        return _network_bounds(arch, d, s_max).l_n

    def obj_l_grad_n(d: Sequence[float]) -> float:
        return _network_bounds(arch, d, s_max).l_grad_n

    def obj_l_phi(d: Sequence[float]) -> float:
        return math.fsum(
            layer_step(_network_bounds(arch, d, s).last_hidden, loss, 1, d[-1]).l_n
            for s in norms
        ) / len(norms)

    def obj_l_grad_phi(d: Sequence[float]) -> float:
        return math.fsum(
            layer_step(_network_bounds(arch, d, s).last_hidden, loss, 1, d[-1]).l_grad_n
            for s in norms
        ) / len(norms)

    l_n, _ = _max_on_sphere(obj_l_n, dim, b, search)
    l_grad_n, _ = _max_on_sphere(obj_l_grad_n, dim, b, search)
    l_phi, _ = _max_on_sphere(obj_l_phi, dim, b, search)
    l_grad_phi, d_star = _max_on_sphere(obj_l_grad_phi, dim, b, search)

    uniform = loss_certificate(arch, inputs, loss, norms)
    flags = _overflow_flags(l_n, l_grad_n, l_phi, l_grad_phi)
    improved = l_grad_phi < uniform.l_grad_phi * (1.0 - 1e-15)
    if not improved:
        flags = flags + ("no_improvement",)

    table = _network_bounds(arch, d_star, s_max).per_layer
    return Certificate(
        per_layer=table,
        l_n_final=l_n,
        l_grad_n_final=l_grad_n,
        l_phi=l_phi,
        l_grad_phi=l_grad_phi,
        b_grad_phi=l_phi,
        method="refined_budgets",
        inputs_digest=_certificate_digest(arch, inputs, loss, norms, None, "refined_budgets"),
        flags=flags,
        layer_budgets=d_star,
    )


# ---------------------------------------------------------------------------
# step-size derivations


def derive_gd_step(cert: Certificate) -> float:
    """Certified constant step size 1 / l_grad_phi for full-batch descent."""
    l = cert.l_grad_phi
    if l == 0.0:
        raise ValueError("l_grad_phi is zero: objective gradient is constant")
    if not math.isfinite(l) or l < 0:
        raise ValueError("l_grad_phi must be a positive finite real")
    return 1.0 / l


def derive_adagrad_params(
    cert: Certificate, eps_margin: float = 1.0, eps_exponent: float = 0.0
) -> tuple[float, float]:
    """Pick (alpha, beta) with 2 * alpha * l_grad_phi < beta^(1/2 + eps).

    alpha is fixed at 1/2; beta = l_grad_phi^(2 / (1 + 2 eps)) + eps_margin
    then satisfies the strict inequality with room eps_margin.
    """
    if eps_margin <= 0:
        raise ValueError("eps_margin must be positive")
    if eps_exponent < 0:
        raise ValueError("eps_exponent must be nonnegative")
    l = cert.l_grad_phi
    if not math.isfinite(l):
        raise ValueError("certificate overflowed; no finite step schedule exists")
    alpha = 0.5
    expo = 2.0 / (1.0 + 2.0 * eps_exponent)
    beta = (l**expo if l > 0 else 0.0) + eps_margin
    if not 2.0 * alpha * l < beta ** (0.5 + eps_exponent):
        raise ValueError("derived parameters violate the step-size condition")
    return alpha, beta
