"""Controlled-ODE networks: states driven by vector fields and BV controls.

The state follows dX_t = sum_i V_i(theta, t, X_{t-}) du_i(t) where each
scalar control u_i splits into jumps plus an absolutely continuous part with
piecewise-constant density.  The module integrates the state, its first
parameter sensitivity dX/dtheta and the second one, and turns growth
envelopes of the fields into certified bounds: on the state norm, on the
parameter-Lipschitz constant of theta -> X_T, and on the Lipschitz constant
of the sensitivity itself, which then feed loss-level constants exactly as
in the dense-network route.  A dense network is recovered as the special
case of a single pure-jump control with unit jumps at integer times.
"""

from __future__ import annotations

import bisect
import csv
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .bounds import ArchitectureSpec, LossEnvelope
from .network import layer_slices

__all__ = [
    "CodeCertificate",
    "Control",
    "FieldEnvelopes",
    "Trajectory",
    "VectorFieldSpec",
    "code_certificate",
    "code_loss_certificate",
    "dnn_as_code",
    "linear_scalar_field",
    "random_smooth_field",
    "solve_code",
    "solve_first_variation",
    "solve_second_variation",
    "total_variation",
    "verify_envelopes",
]


# ---------------------------------------------------------------------------
# controls


@dataclass(frozen=True)
class Control:
    """Scalar control of bounded variation on [0, T].

    jumps is a tuple of (time, size) with times in (0, T]; the absolutely
    continuous part has piecewise-constant density density_values[j] on
    [density_breaks[j], density_breaks[j+1]).
    """

    t_final: float
    jumps: tuple[tuple[float, float], ...] = ()
    density_breaks: tuple[float, ...] = ()
    density_values: tuple[float, ...] = ()

    def __post_init__(self) -> None:
        if not (self.t_final > 0 and math.isfinite(self.t_final)):
            raise ValueError("t_final must be a positive finite real")
        for t, s in self.jumps:
            if not (0.0 < t <= self.t_final):
                raise ValueError("jump times must lie in (0, t_final]")
            if not math.isfinite(s):
                raise ValueError("jump sizes must be finite")
        if self.density_breaks or self.density_values:
            br, dv = self.density_breaks, self.density_values
            if len(br) != len(dv) + 1:
                raise ValueError("need one more break than density value")
            if br[0] != 0.0 or br[-1] != self.t_final:
                raise ValueError("density breaks must span [0, t_final]")
            if any(b1 >= b2 for b1, b2 in zip(br, br[1:])):
                raise ValueError("density breaks must be strictly increasing")
            if any(not math.isfinite(v) for v in dv):
                raise ValueError("density values must be finite")

    @classmethod
    def steps(cls, jumps: Sequence[tuple[float, float]], t_final: float) -> "Control":
        ordered = tuple(sorted((float(t), float(s)) for t, s in jumps))
        return cls(t_final=float(t_final), jumps=ordered)

    @classmethod
    def constant_density(cls, value: float, t_final: float) -> "Control":
        return cls(
            t_final=float(t_final),
            density_breaks=(0.0, float(t_final)),
            density_values=(float(value),),
        )

    @classmethod
    def zero(cls, t_final: float) -> "Control":
        return cls(t_final=float(t_final))

    def density_at(self, t: float) -> float:
        if not self.density_values:
            return 0.0
        j = bisect.bisect_right(self.density_breaks, t) - 1
        j = min(max(j, 0), len(self.density_values) - 1)
        return self.density_values[j]

    def jump_sizes(self) -> dict[float, float]:
        out: dict[float, float] = {}
        for t, s in self.jumps:
            out[t] = out.get(t, 0.0) + s
        return out

    def variation(self) -> float:
        jump_part = math.fsum(abs(s) for _, s in self.jumps)
        ac_part = math.fsum(
            abs(v) * (b2 - b1)
            for v, b1, b2 in zip(
                self.density_values, self.density_breaks, self.density_breaks[1:]
            )
        )
        return jump_part + ac_part


def total_variation(controls: Sequence[Control]) -> float:
    """Total variation summed over all controls (the budget B_upsilon)."""
    return math.fsum(c.variation() for c in controls)


# ---------------------------------------------------------------------------
# vector fields


@dataclass(frozen=True)
class FieldEnvelopes:
    """Growth bounds holding for every field, theta in the domain, t and x.

    ||V||            <= b_v * (1 + ||x||)
    ||d_theta V||    <= b_theta * (1 + ||x||^p_theta)
    ||d2 V/dtheta2|| <= b_theta_theta * (1 + ||x||^p_theta_theta)
    ||d2 V/dx dtheta|| <= b_x_theta * (1 + ||x||^p_x_theta)
    ||d2 V/dtheta dx|| <= b_theta_x * (1 + ||x||^p_theta_x)
    ||d2 V/dx2||     <= b_x_x * (1 + ||x||^p_x_x)
    and x -> V(theta, t, x) is lip_x-Lipschitz.

    All norms are Euclidean/Frobenius over the flattened tensors.  The mixed
    second derivatives keep separate constants on purpose: the solver never
    assumes the two orders of differentiation were certified together.
    """

    b_v: float
    b_theta: float
    b_theta_theta: float
    b_x_theta: float
    b_theta_x: float
    b_x_x: float
    lip_x: float
    p_theta: float = 0.0
    p_theta_theta: float = 0.0
    p_x_theta: float = 0.0
    p_theta_x: float = 0.0
    p_x_x: float = 0.0

    def __post_init__(self) -> None:
        for name in (
            "b_v", "b_theta", "b_theta_theta", "b_x_theta", "b_theta_x",
            "b_x_x", "lip_x", "p_theta", "p_theta_theta", "p_x_theta",
            "p_theta_x", "p_x_x",
        ):
            v = getattr(self, name)
            if not math.isfinite(v) or v < 0:
                raise ValueError(f"{name} must be finite and nonnegative")


@dataclass(frozen=True)
class VectorFieldSpec:
    """A parametric field V(theta, t, x) with exact derivative callables.

    Tensor layouts (l = dim_state, n = dim_theta):
      evaluate        -> (l,)
      jacobian_x      -> (l, l)    [a, b]    = dV_a / dx_b
      jacobian_theta  -> (l, n)    [a, p]    = dV_a / dtheta_p
      d2_theta_theta  -> (l, n, n) [a, p, q] = d2 V_a / dtheta_p dtheta_q
      d2_x_theta      -> (l, l, n) [a, b, p] = d2 V_a / dx_b dtheta_p
      d2_theta_x      -> (l, n, l) [a, p, b] = d2 V_a / dtheta_p dx_b
      d2_x_x          -> (l, l, l) [a, b, c] = d2 V_a / dx_b dx_c

    Derivative callables may be None when the corresponding solve order is
    never requested.  envelopes is optional and only needed for
    certificates.
    """

    dim_state: int
    dim_theta: int
    evaluate: Callable[[np.ndarray, float, np.ndarray], np.ndarray]
    jacobian_x: Callable[[np.ndarray, float, np.ndarray], np.ndarray] | None = None
    jacobian_theta: Callable[[np.ndarray, float, np.ndarray], np.ndarray] | None = None
    d2_theta_theta: Callable[[np.ndarray, float, np.ndarray], np.ndarray] | None = None
    d2_x_theta: Callable[[np.ndarray, float, np.ndarray], np.ndarray] | None = None
    d2_theta_x: Callable[[np.ndarray, float, np.ndarray], np.ndarray] | None = None
    d2_x_x: Callable[[np.ndarray, float, np.ndarray], np.ndarray] | None = None
    envelopes: FieldEnvelopes | None = None

    def __post_init__(self) -> None:
        if self.dim_state < 1 or self.dim_theta < 0:
            raise ValueError("dim_state must be >= 1 and dim_theta >= 0")


# ---------------------------------------------------------------------------
# integration


@dataclass
class Trajectory:
    """Recorded path; jump times appear twice (left limit, then post-jump)."""

    times: np.ndarray
    states: np.ndarray
    first_variation: np.ndarray | None = None
    second_variation: np.ndarray | None = None
    aborted: bool = False

    @property
    def final_state(self) -> np.ndarray:
        return self.states[-1]

    @property
    def final_first_variation(self) -> np.ndarray:
        if self.first_variation is None:
            raise ValueError("trajectory holds no first variation")
        return self.first_variation[-1]

    @property
    def final_second_variation(self) -> np.ndarray:
        if self.second_variation is None:
            raise ValueError("trajectory holds no second variation")
        return self.second_variation[-1]

    def state_at(self, t: float) -> np.ndarray:
        """Right-continuous lookup of the recorded path."""
        idx = int(np.searchsorted(self.times, t, side="right")) - 1
        if idx < 0:
            raise ValueError("t precedes the trajectory start")
        return self.states[idx]

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            wr = csv.writer(fh)
            l = self.states.shape[1]
            header = ["t"] + [f"x_{i}" for i in range(l)]
            if self.first_variation is not None:
                header.append("first_variation_fro")
            wr.writerow(header)
            for k, (t, row) in enumerate(zip(self.times, self.states)):
                cells = [f"{t:.17g}"] + [f"{v:.17g}" for v in row]
                if self.first_variation is not None:
                    fro = float(np.linalg.norm(self.first_variation[k]))
                    cells.append(f"{fro:.17g}")
                wr.writerow(cells)


def _as_field_list(
    fields: VectorFieldSpec | Sequence[VectorFieldSpec],
    controls: Control | Sequence[Control],
) -> tuple[list[VectorFieldSpec], list[Control]]:
    fl = [fields] if isinstance(fields, VectorFieldSpec) else list(fields)
    cl = [controls] if isinstance(controls, Control) else list(controls)
    if len(fl) != len(cl):
        raise ValueError("need exactly one control per field")
    if not fl:
        raise ValueError("need at least one field")
    t = cl[0].t_final
    if any(c.t_final != t for c in cl):
        raise ValueError("all controls must share the same horizon")
    l = fl[0].dim_state
    n = fl[0].dim_theta
    if any(f.dim_state != l or f.dim_theta != n for f in fl):
        raise ValueError("all fields must share state and parameter dimensions")
    return fl, cl


def _event_grid(controls: Sequence[Control]) -> list[float]:
    t_final = controls[0].t_final
    pts = {0.0, t_final}
    for c in controls:
        pts.update(c.density_breaks)
        pts.update(t for t, _ in c.jumps)
    return sorted(pts)


def _integrate(
    fields: Sequence[VectorFieldSpec],
    controls: Sequence[Control],
    theta: np.ndarray,
    x: np.ndarray,
    n_substeps: int,
    order: int,
) -> Trajectory:
    if n_substeps < 1:
        raise ValueError("n_substeps must be >= 1")
    l = fields[0].dim_state
    n = fields[0].dim_theta
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (n,):
        raise ValueError(f"theta must have shape ({n},)")
    state = np.asarray(x, dtype=float).copy()
    if state.shape != (l,):
        raise ValueError(f"x must have shape ({l},)")
    if order >= 1 and any(
        f.jacobian_x is None or f.jacobian_theta is None for f in fields
    ):
        raise ValueError("first variation needs jacobian_x and jacobian_theta")
    if order >= 2 and any(
        f.d2_theta_theta is None
        or f.d2_x_theta is None
        or f.d2_theta_x is None
        or f.d2_x_x is None
        for f in fields
    ):
        raise ValueError("second variation needs all second-derivative callables")

    dX = np.zeros((l, n)) if order >= 1 else None
    ddX = np.zeros((l, n, n)) if order >= 2 else None

    times = [0.0]
    states = [state.copy()]
    dxs = [dX.copy()] if dX is not None else None
    ddxs = [ddX.copy()] if ddX is not None else None
    aborted = False

    def increments(t: float, weights: Sequence[float]):
        """Weighted field contributions at the *current* left-limit values."""
        inc_x = np.zeros(l)
        inc_d = np.zeros((l, n)) if order >= 1 else None
        inc_dd = np.zeros((l, n, n)) if order >= 2 else None
        for f, w in zip(fields, weights):
            if w == 0.0:
                continue
            inc_x += w * f.evaluate(theta, t, state)
            if order >= 1:
                jt = f.jacobian_theta(theta, t, state)
                jx = f.jacobian_x(theta, t, state)
                inc_d += w * (jt + jx @ dX)
                if order >= 2:
                    d2tt = f.d2_theta_theta(theta, t, state)
                    d2xt = f.d2_x_theta(theta, t, state)
                    d2tx = f.d2_theta_x(theta, t, state)
                    d2xx = f.d2_x_x(theta, t, state)
                    term = d2tt.copy()
                    term += np.einsum("abp,bq->apq", d2xt, dX)
                    term += np.einsum("aqb,bp->apq", d2tx, dX)
                    term += np.einsum("abc,bp,cq->apq", d2xx, dX, dX)
                    term += np.einsum("ab,bpq->apq", jx, ddX)
                    inc_dd += w * term
        return inc_x, inc_d, inc_dd

    def record(t: float) -> None:
        times.append(t)
        states.append(state.copy())
        if dxs is not None:
            dxs.append(dX.copy())
        if ddxs is not None:
            ddxs.append(ddX.copy())

    grid = _event_grid(controls)
    for a, b_t in zip(grid, grid[1:]):
        densities = [c.density_at(a) for c in controls]
        if any(d != 0.0 for d in densities):
            dt = (b_t - a) / n_substeps
            for k in range(n_substeps):
                t = a + k * dt
                inc_x, inc_d, inc_dd = increments(t, [d * dt for d in densities])
                state += inc_x
                if order >= 1:
                    dX += inc_d
                if order >= 2:
                    ddX += inc_dd
                record(a + (k + 1) * dt)
                if not np.all(np.isfinite(state)):
                    aborted = True
                    break
            if aborted:
                break
        else:
            record(b_t)
        jump_w = [c.jump_sizes().get(b_t, 0.0) for c in controls]
        if any(w != 0.0 for w in jump_w):
            inc_x, inc_d, inc_dd = increments(b_t, jump_w)
            state += inc_x
            if order >= 1:
                dX += inc_d
            if order >= 2:
                ddX += inc_dd
            record(b_t)
            if not np.all(np.isfinite(state)):
                aborted = True
                break

    return Trajectory(
        times=np.asarray(times),
        states=np.asarray(states),
        first_variation=np.asarray(dxs) if dxs is not None else None,
        second_variation=np.asarray(ddxs) if ddxs is not None else None,
        aborted=aborted,
    )


def solve_code(
    fields: VectorFieldSpec | Sequence[VectorFieldSpec],
    controls: Control | Sequence[Control],
    theta: np.ndarray,
    x: np.ndarray,
    n_substeps: int = 100,
) -> Trajectory:
    """Left-point Euler through the event grid, jumps applied on left limits.

    The grid is the union of all density breakpoints and jump times; each
    absolutely continuous segment is cut into n_substeps Euler steps, and a
    jump at time tau fires after the segment ending at tau using the state
    just before it.  Simultaneous jumps of several controls share the same
    left limit.
    """
    fl, cl = _as_field_list(fields, controls)
    return _integrate(fl, cl, theta, x, n_substeps, order=0)


def solve_first_variation(
    fields: VectorFieldSpec | Sequence[VectorFieldSpec],
    controls: Control | Sequence[Control],
    theta: np.ndarray,
    x: np.ndarray,
    n_substeps: int = 100,
) -> Trajectory:
    """Co-integrate the state with its parameter sensitivity dX/dtheta.

    The sensitivity satisfies the linear equation driven by the same
    controls, d(dX) = (d_theta V + d_x V . dX) du, started at zero.
    """
    fl, cl = _as_field_list(fields, controls)
    return _integrate(fl, cl, theta, x, n_substeps, order=1)


def solve_second_variation(
    fields: VectorFieldSpec | Sequence[VectorFieldSpec],
    controls: Control | Sequence[Control],
    theta: np.ndarray,
    x: np.ndarray,
    n_substeps: int = 100,
) -> Trajectory:
    """Co-integrate state, first and second parameter sensitivities.

    Component equation for the (state a, theta_p, theta_q) entry:
    d(ddX)_apq = [d2V/dth_p dth_q + d2V/dx dth_p . dX_q
                  + d2V/dth_q dx . dX_p + dX_p . d2V/dx2 . dX_q
                  + dV/dx . ddX_pq] du.
    """
    fl, cl = _as_field_list(fields, controls)
    return _integrate(fl, cl, theta, x, n_substeps, order=2)


# ---------------------------------------------------------------------------
# certificates


@dataclass(frozen=True)
class CodeCertificate:
    """Certified constants for theta -> X_T on a parameter ball.

    b_x bounds the state norm along the whole path, l_x the parameter
    Lipschitz constant of the final state (which also bounds the sensitivity
    norm, b_dx), c_theta_theta collects the second-derivative growth, and
    l_dx is the Lipschitz constant of the sensitivity.  l_phi / l_grad_phi
    are filled by code_loss_certificate.
    """

    b_upsilon: float
    x_norm: float
    b_x: float
    l_x: float
    b_dx: float
    c_theta_theta: float
    l_dx: float
    envelopes: FieldEnvelopes
    l_phi: float | None = None
    l_grad_phi: float | None = None
    status: str = "rigorous"


def code_certificate(
    envelopes: FieldEnvelopes, b_upsilon: float, x_norm: float
) -> CodeCertificate:
    """Grönwall-style constants from field envelopes and the control budget."""
    if not (b_upsilon >= 0 and math.isfinite(b_upsilon)):
        raise ValueError("b_upsilon must be finite and nonnegative")
    if not (x_norm >= 0 and math.isfinite(x_norm)):
        raise ValueError("x_norm must be finite and nonnegative")
    e = envelopes
    growth = e.b_v * b_upsilon
    b_x = (x_norm + growth) * math.exp(growth)
    amp = math.exp(e.lip_x * b_upsilon)
    l_x = e.b_theta * (1.0 + b_x**e.p_theta) * b_upsilon * amp
    c_tt = b_upsilon * (
        e.b_theta_theta * (1.0 + b_x**e.p_theta_theta)
        + e.b_x_theta * (1.0 + b_x**e.p_x_theta) * l_x
        + e.b_theta_x * (1.0 + b_x**e.p_theta_x) * l_x
        + e.b_x_x * (1.0 + b_x**e.p_x_x) * l_x * l_x
    )
    l_dx = c_tt * amp
    return CodeCertificate(
        b_upsilon=b_upsilon,
        x_norm=x_norm,
        b_x=b_x,
        l_x=l_x,
        b_dx=l_x,
        c_theta_theta=c_tt,
        l_dx=l_dx,
        envelopes=e,
    )


def required_moment_order(envelopes: FieldEnvelopes) -> float:
    """Highest power of the input norm the loss constants integrate."""
    e = envelopes
    return max(
        1.0,
        e.p_theta_theta,
        e.p_x_theta + e.p_theta,
        e.p_theta_x + e.p_theta,
        e.p_x_x + 2.0 * e.p_theta,
        2.0 * e.p_theta,
    )


class _SparsePoly:
    """Polynomial in one symbol with nonnegative real powers, as {power: coef}."""

    def __init__(self, terms: dict[float, float] | None = None) -> None:
        self.terms = dict(terms or {})

    @classmethod
    def const(cls, c: float) -> "_SparsePoly":
        return cls({0.0: c})

    def add(self, other: "_SparsePoly") -> "_SparsePoly":
        out = dict(self.terms)
        for p, c in other.terms.items():
            out[p] = out.get(p, 0.0) + c
        return _SparsePoly(out)

    def scale(self, c: float) -> "_SparsePoly":
        return _SparsePoly({p: c * v for p, v in self.terms.items()})

    def mul(self, other: "_SparsePoly") -> "_SparsePoly":
        out: dict[float, float] = {}
        for p1, c1 in self.terms.items():
            for p2, c2 in other.terms.items():
                p = p1 + p2
                out[p] = out.get(p, 0.0) + c1 * c2
        return _SparsePoly(out)


def _one_plus_power(coef: float, power: float) -> _SparsePoly:
    """coef * (1 + B^power); safe when power is 0 (terms merge by addition)."""
    return _SparsePoly({0.0: coef}).add(_SparsePoly({power: coef}))


def _poly_loss_constants(
    e: FieldEnvelopes, b_upsilon: float
) -> tuple[_SparsePoly, _SparsePoly, _SparsePoly, float, float]:
    """(L_X, L_X^2, L_dX) as polynomials in B_X, plus the affine B_X map.

    B_X(S) = kappa * (S + a) with a = b_v * b_upsilon, kappa = exp(a); the
    polynomials use B_X as their symbol so expectations reduce to moments of
    (S + a).
    """
    growth = e.b_v * b_upsilon
    amp = math.exp(e.lip_x * b_upsilon)
    l_x = _one_plus_power(e.b_theta * b_upsilon * amp, e.p_theta)
    l_x_sq = l_x.mul(l_x)
    c_tt = _one_plus_power(e.b_theta_theta, e.p_theta_theta)
    c_tt = c_tt.add(_one_plus_power(e.b_x_theta, e.p_x_theta).mul(l_x))
    c_tt = c_tt.add(_one_plus_power(e.b_theta_x, e.p_theta_x).mul(l_x))
    c_tt = c_tt.add(_one_plus_power(e.b_x_x, e.p_x_x).mul(l_x_sq))
    c_tt = c_tt.scale(b_upsilon)
    l_dx = c_tt.scale(amp)
    return l_x, l_x_sq, l_dx, growth, math.exp(growth)


def _expected_power(
    power: float, a: float, kappa: float, moments: dict[int, float]
) -> float:
    """E[B_X^power] with B_X = kappa (S + a), via binomial expansion."""
    if power == 0.0:
        return 1.0
    if abs(power - round(power)) > 1e-12:
        raise ValueError(
            f"moment mode needs integer norm powers; got exponent {power}"
        )
    p = int(round(power))
    total = 0.0
    for k in range(p + 1):
        if k == 0:
            mk = 1.0
        elif k in moments:
            mk = moments[k]
        else:
            raise ValueError(
                f"moment mode needs E[S^{k}] (powers up to {p} required)"
            )
        total += math.comb(p, k) * a ** (p - k) * mk
    return kappa**p * total


def code_loss_certificate(
    cert: CodeCertificate,
    loss: LossEnvelope,
    sample_norms: Sequence[float] | None = None,
    moments: dict[int, float] | None = None,
) -> CodeCertificate:
    """Loss-level constants: L_phi = E[L_g L_X], L_grad_phi = E[L_dg L_X^2 + L_g L_dX].

    With explicit sample norms the per-sample certificates are recomputed at
    each norm and averaged.  With raw moments {k: E[S^k]} the constants are
    expanded as polynomials in the affine state bound and integrated
    termwise; integer exponent envelopes are required for that route.
    """
    lg = loss.lip_g_value
    ldg = loss.lip_dg_value
    if sample_norms is not None:
        if len(sample_norms) == 0:
            raise ValueError("sample_norms must be nonempty")
        phis = []
        gphis = []
        for s in sample_norms:
            c = code_certificate(cert.envelopes, cert.b_upsilon, float(s))
            phis.append(lg * c.l_x)
            gphis.append(ldg * c.l_x * c.l_x + lg * c.l_dx)
        return replace(
            cert,
            l_phi=math.fsum(phis) / len(phis),
            l_grad_phi=math.fsum(gphis) / len(gphis),
        )
    if moments is None:
        raise ValueError("need sample_norms or moments")
    l_x, l_x_sq, l_dx, a, kappa = _poly_loss_constants(cert.envelopes, cert.b_upsilon)

    def expect(poly: _SparsePoly) -> float:
        return math.fsum(
            c * _expected_power(p, a, kappa, moments) for p, c in poly.terms.items()
        )

    return replace(
        cert,
        l_phi=lg * expect(l_x),
        l_grad_phi=ldg * expect(l_x_sq) + lg * expect(l_dx),
    )


def verify_envelopes(
    fields: VectorFieldSpec | Sequence[VectorFieldSpec],
    envelopes: FieldEnvelopes,
    theta_box: tuple[np.ndarray, np.ndarray],
    x_box: tuple[np.ndarray, np.ndarray],
    t_points: Sequence[float],
    n_samples: int,
    seed: int,
) -> list[str]:
    """Grid/sample check of the envelope inequalities over a declared box.

    Returns human-readable violation records; an empty list means no sampled
    point broke any inequality (which is evidence, not proof).
    """
    fl = [fields] if isinstance(fields, VectorFieldSpec) else list(fields)
    rng = np.random.default_rng(seed)
    t_lo, t_hi = (np.asarray(v, dtype=float) for v in theta_box)
    x_lo, x_hi = (np.asarray(v, dtype=float) for v in x_box)
    e = envelopes
    out: list[str] = []

    def check(tag: str, val: float, bound: float, where: str) -> None:
        if val > bound * (1.0 + 1e-12):
            out.append(f"{tag}: {val:.6g} > {bound:.6g} at {where}")

    for k in range(n_samples):
        theta = t_lo + (t_hi - t_lo) * rng.random(t_lo.shape)
        xv = x_lo + (x_hi - x_lo) * rng.random(x_lo.shape)
        t = float(rng.choice(np.asarray(t_points, dtype=float)))
        nx = float(np.linalg.norm(xv))
        where = f"sample {k} (t={t:.3g})"
        for i, f in enumerate(fl):
            v = f.evaluate(theta, t, xv)
            check(f"field {i} b_v", float(np.linalg.norm(v)), e.b_v * (1 + nx), where)
            if f.jacobian_theta is not None:
                jt = f.jacobian_theta(theta, t, xv)
                check(
                    f"field {i} b_theta",
                    float(np.linalg.norm(jt)),
                    e.b_theta * (1 + nx**e.p_theta),
                    where,
                )
            if f.jacobian_x is not None:
                jx = f.jacobian_x(theta, t, xv)
                check(f"field {i} lip_x", float(np.linalg.norm(jx, 2)), e.lip_x, where)
            for name, call, bnd, pw in (
                ("b_theta_theta", f.d2_theta_theta, e.b_theta_theta, e.p_theta_theta),
                ("b_x_theta", f.d2_x_theta, e.b_x_theta, e.p_x_theta),
                ("b_theta_x", f.d2_theta_x, e.b_theta_x, e.p_theta_x),
                ("b_x_x", f.d2_x_x, e.b_x_x, e.p_x_x),
            ):
                if call is not None:
                    tens = call(theta, t, xv)
                    check(
                        f"field {i} {name}",
                        float(np.linalg.norm(np.asarray(tens).ravel())),
                        bnd * (1 + nx**pw),
                        where,
                    )
    return out


# ---------------------------------------------------------------------------
# concrete fields


def linear_scalar_field() -> VectorFieldSpec:
    """V(theta, t, x) = theta * x on scalar state and parameter.

    On the parameter domain (-1, 1) the envelopes below hold: the field
    grows at most linearly (b_v = 1), the parameter derivative is x itself
    (b_theta = 1 with power 1), the mixed second derivatives are the
    constant 1, and x -> theta x is 1-Lipschitz.
    """
    env = FieldEnvelopes(
        b_v=1.0,
        b_theta=1.0,
        b_theta_theta=0.0,
        b_x_theta=1.0,
        b_theta_x=1.0,
        b_x_x=0.0,
        lip_x=1.0,
        p_theta=1.0,
    )
    return VectorFieldSpec(
        dim_state=1,
        dim_theta=1,
        evaluate=lambda th, t, x: th * x,
        jacobian_x=lambda th, t, x: np.array([[th[0]]]),
        jacobian_theta=lambda th, t, x: np.array([[x[0]]]),
        d2_theta_theta=lambda th, t, x: np.zeros((1, 1, 1)),
        d2_x_theta=lambda th, t, x: np.ones((1, 1, 1)),
        d2_theta_x=lambda th, t, x: np.ones((1, 1, 1)),
        d2_x_x=lambda th, t, x: np.zeros((1, 1, 1)),
        envelopes=env,
    )


def random_smooth_field(
    rng: np.random.Generator, dim_state: int, dim_theta: int, hidden: int = 3
) -> VectorFieldSpec:
    """Random bounded-derivative field V = A tanh(W x + U theta + c) + L x + M theta.

    All derivative callables are closed forms of the same tanh features, so
    one field exercises every tensor layout the sensitivity solvers consume.
    """
    a = rng.standard_normal((dim_state, hidden)) / hidden
    w = rng.standard_normal((hidden, dim_state)) / max(1, dim_state)
    u = rng.standard_normal((hidden, dim_theta)) / max(1, dim_theta)
    cc = rng.standard_normal(hidden)
    lin_x = rng.standard_normal((dim_state, dim_state)) * 0.1
    lin_t = rng.standard_normal((dim_state, dim_theta)) * 0.1

    def z(th, xv):
        return w @ xv + u @ th + cc

    def val(th, t, xv):
        return a @ np.tanh(z(th, xv)) + lin_x @ xv + lin_t @ th

    def jx(th, t, xv):
        d1 = 1.0 - np.tanh(z(th, xv)) ** 2
        return np.einsum("ah,h,hb->ab", a, d1, w) + lin_x

    def jt(th, t, xv):
        d1 = 1.0 - np.tanh(z(th, xv)) ** 2
        return np.einsum("ah,h,hp->ap", a, d1, u) + lin_t

    def d2(th, xv):
        tt = np.tanh(z(th, xv))
        return -2.0 * tt * (1.0 - tt * tt)

    def d2tt(th, t, xv):
        return np.einsum("ah,h,hp,hq->apq", a, d2(th, xv), u, u)

    def d2xt(th, t, xv):
        return np.einsum("ah,h,hb,hp->abp", a, d2(th, xv), w, u)

    def d2tx(th, t, xv):
        return np.einsum("ah,h,hp,hb->apb", a, d2(th, xv), u, w)

    def d2xx(th, t, xv):
        return np.einsum("ah,h,hb,hc->abc", a, d2(th, xv), w, w)

    return VectorFieldSpec(
        dim_state=dim_state,
        dim_theta=dim_theta,
        evaluate=val,
        jacobian_x=jx,
        jacobian_theta=jt,
        d2_theta_theta=d2tt,
        d2_x_theta=d2xt,
        d2_theta_x=d2tx,
        d2_x_x=d2xx,
    )


# ---------------------------------------------------------------------------
# dense networks as controlled ODEs


def dnn_as_code(arch: ArchitectureSpec) -> tuple[VectorFieldSpec, Control]:
    """Encode a dense network as one pure-jump control with unit jumps.

    The state lives in the maximal width, layers act at integer times
    1..m+1, and the field replaces the state by the next layer's output
    embedded with zero padding: V = embed(layer(x)) - x, so a unit jump
    performs exactly one layer (padding included, since X + V = embed(...)).
    Solving with theta = flatten_params(params) reproduces forward() at the
    final time.
    """
    m = arch.m
    lmax = max(arch.widths)
    n = arch.n_params
    slices = layer_slices(arch)
    t_final = float(m + 1)
    control = Control.steps([(float(i), 1.0) for i in range(1, m + 2)], t_final)

    def layer_index(t: float) -> int:
        return min(m + 1, max(1, int(math.ceil(t))))

    def pieces(theta: np.ndarray, t: float, x: np.ndarray):
        i = layer_index(t)
        w_sl, b_sl = slices[i - 1]
        out_w, in_w = arch.widths[i], arch.widths[i - 1]
        w = theta[w_sl].reshape(out_w, in_w)
        b = theta[b_sl]
        xi = x[:in_w]
        pre = w @ xi + b
        if i <= m:
            act = arch.activations[i - 1]
            return i, w, xi, pre, act(pre), act.deriv(pre)
        return i, w, xi, pre, pre, np.ones(out_w)

    def val(theta, t, x):
        i, _, _, _, post, _ = pieces(theta, t, x)
        v = -np.asarray(x, dtype=float).copy()
        v[: post.shape[0]] += post
        return v

    def jx(theta, t, x):
        i, w, _, _, _, d1 = pieces(theta, t, x)
        out_w, in_w = arch.widths[i], arch.widths[i - 1]
        j = -np.eye(lmax)
        j[:out_w, :in_w] += d1[:, None] * w
        return j

    def jt(theta, t, x):
        i, _, xi, _, _, d1 = pieces(theta, t, x)
        w_sl, b_sl = slices[i - 1]
        out_w, in_w = arch.widths[i], arch.widths[i - 1]
        j = np.zeros((lmax, n))
        block = np.einsum("o,c->oc", d1, xi)  # dV_a/dW_{a,c}
        jw = np.zeros((out_w, out_w, in_w))
        for o in range(out_w):
            jw[o, o, :] = block[o]
        j[:out_w, w_sl] = jw.reshape(out_w, out_w * in_w)
        j[:out_w, b_sl] = np.diag(d1)
        return j

    field = VectorFieldSpec(
        dim_state=lmax, dim_theta=n, evaluate=val, jacobian_x=jx, jacobian_theta=jt
    )
    return field, control


def embed_input(arch: ArchitectureSpec, x: np.ndarray) -> np.ndarray:
    """Zero-pad a network input up to the maximal width."""
    lmax = max(arch.widths)
    out = np.zeros(lmax)
    out[: arch.widths[0]] = np.asarray(x, dtype=float)
    return out
