"""Dense feed-forward networks with exact analytic derivatives.

Ground truth for everything the certificates claim to bound: a minimal
numpy implementation of the forward pass, the per-sample loss gradient with
respect to every weight and bias, and the full parameter Jacobian of the
network output.  Derivatives are hand-written reverse mode built on the
activations' closed-form first derivatives; nothing here is numerically
differentiated.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .activations import Activation
from .bounds import ArchitectureSpec, LossEnvelope

__all__ = [
    "ForwardTrace",
    "Params",
    "Sample",
    "SquaredError",
    "PseudoHuber",
    "flatten_params",
    "forward",
    "grad_params",
    "init_params",
    "load_dataset_csv",
    "loss_head_envelopes",
    "param_jacobian",
    "param_norm",
    "params_from_json",
    "params_to_json",
    "project_to_ball",
    "sample_in_ball",
    "unflatten_params",
]


@dataclass(frozen=True)
class Params:
    """Per-layer (weight, bias) arrays; treated as immutable."""

    layers: tuple[tuple[np.ndarray, np.ndarray], ...]

    def __post_init__(self) -> None:
        for w, b in self.layers:
            if w.ndim != 2 or b.ndim != 1 or w.shape[0] != b.shape[0]:
                raise ValueError("each layer needs a (out,in) weight and (out,) bias")

    @property
    def n_layers(self) -> int:
        return len(self.layers)


@dataclass(frozen=True)
class Sample:
    x: np.ndarray
    y: np.ndarray


@dataclass(frozen=True)
class ForwardTrace:
    """Pre-activations, post-activations and the affine head output.

    post[u-1] is the u-th feature map applied to the input; output is the
    final affine layer (no activation on top).
    """

    pre: tuple[np.ndarray, ...]
    post: tuple[np.ndarray, ...]
    output: np.ndarray


def param_norm(params: Params) -> float:
    """Euclidean norm of all weights and biases concatenated."""
    total = math.fsum(
        float(np.dot(w.ravel(), w.ravel())) + float(np.dot(b, b))
        for w, b in params.layers
    )
    return math.sqrt(total)


def flatten_params(params: Params) -> np.ndarray:
    chunks: list[np.ndarray] = []
    for w, b in params.layers:
        chunks.append(w.ravel())
        chunks.append(b)
    return np.concatenate(chunks) if chunks else np.zeros(0)


def unflatten_params(arch: ArchitectureSpec, flat: np.ndarray) -> Params:
    flat = np.asarray(flat, dtype=float)
    if flat.shape != (arch.n_params,):
        raise ValueError(f"expected flat vector of length {arch.n_params}")
    layers = []
    pos = 0
    for i_in, i_out in zip(arch.widths[:-1], arch.widths[1:]):
        w = flat[pos : pos + i_out * i_in].reshape(i_out, i_in)
        pos += i_out * i_in
        b = flat[pos : pos + i_out]
        pos += i_out
        layers.append((w.copy(), b.copy()))
    return Params(tuple(layers))


def layer_slices(arch: ArchitectureSpec) -> list[tuple[slice, slice]]:
    """Flat-vector slices (weight, bias) per layer, in layer order."""
    out = []
    pos = 0
    for i_in, i_out in zip(arch.widths[:-1], arch.widths[1:]):
        w_sl = slice(pos, pos + i_out * i_in)
        pos += i_out * i_in
        b_sl = slice(pos, pos + i_out)
        pos += i_out
        out.append((w_sl, b_sl))
    return out


def forward(params: Params, arch: ArchitectureSpec, x: np.ndarray) -> ForwardTrace:
    """Evaluate the network, recording every intermediate layer."""
    x = np.asarray(x, dtype=float)
    if x.shape != (arch.widths[0],):
        raise ValueError(f"input must have shape ({arch.widths[0]},)")
    if params.n_layers != arch.n_layers:
        raise ValueError("parameter/architecture layer count mismatch")
    h = x
    pre: list[np.ndarray] = []
    post: list[np.ndarray] = []
    for u in range(arch.m):
        w, b = params.layers[u]
        z = w @ h + b
        h = arch.activations[u](z)
        pre.append(z)
        post.append(h)
    w, b = params.layers[-1]
    out = w @ h + b
    return ForwardTrace(tuple(pre), tuple(post), out)


def grad_params(
    params: Params,
    arch: ArchitectureSpec,
    sample: Sample,
    loss_head: "SquaredError | PseudoHuber",
) -> np.ndarray:
    """Flat gradient of the per-sample loss via reverse mode."""
    trace = forward(params, arch, sample.x)
    feats = (sample.x,) + trace.post
    delta = loss_head.grad_x(trace.output, sample.y)
    grads: list[np.ndarray | None] = [None] * arch.n_layers
    for u in range(arch.n_layers - 1, -1, -1):
        w, _ = params.layers[u]
        g_w = np.outer(delta, feats[u])
        g_b = delta.copy()
        grads[u] = np.concatenate([g_w.ravel(), g_b])
        if u > 0:
            delta = w.T @ delta
            delta = delta * arch.activations[u - 1].deriv(trace.pre[u - 1])
    return np.concatenate(grads)


def param_jacobian(params: Params, arch: ArchitectureSpec, x: np.ndarray) -> np.ndarray:
    """Jacobian of the network output in every parameter, shape (l_out, n_params).

    Column order matches flatten_params.  Reverse mode seeded with the
    identity on the output layer.
    """
    trace = forward(params, arch, x)
    feats = (np.asarray(x, dtype=float),) + trace.post
    l_out = arch.widths[-1]
    d = np.eye(l_out)  # (l_out, current width)
    blocks: list[np.ndarray | None] = [None] * arch.n_layers
    for u in range(arch.n_layers - 1, -1, -1):
        w, _ = params.layers[u]
        g_w = np.einsum("oi,j->oij", d, feats[u]).reshape(l_out, -1)
        blocks[u] = np.concatenate([g_w, d], axis=1)
        if u > 0:
            d = (d @ w) * arch.activations[u - 1].deriv(trace.pre[u - 1])[None, :]
    return np.concatenate(blocks, axis=1)


# ---------------------------------------------------------------------------
# parameter sampling and projection


def sample_in_ball(rng: np.random.Generator, dim: int, radius: float) -> np.ndarray:
    """Uniform draw from the open ball: gaussian direction, radial CDF inverse."""
    g = rng.standard_normal(dim)
    nrm = float(np.linalg.norm(g))
    while nrm == 0.0:  # pragma: no cover - probability zero
        g = rng.standard_normal(dim)
        nrm = float(np.linalg.norm(g))
    r = radius * rng.random() ** (1.0 / dim)
    return (r / nrm) * g


def init_params(
    arch: ArchitectureSpec, b_omega: float, seed: int, radius_fraction: float = 0.5
) -> Params:
    """Seeded uniform draw from the ball of radius radius_fraction * b_omega."""
    if not (0.0 < radius_fraction <= 1.0):
        raise ValueError("radius_fraction must lie in (0, 1]")
    rng = np.random.default_rng(seed)
    flat = sample_in_ball(rng, arch.n_params, radius_fraction * b_omega)
    return unflatten_params(arch, flat)


def project_to_ball(params: Params, b_omega: float, shrink: float = 1.0) -> Params:
    """Rescale onto radius shrink * b_omega whenever the norm reaches it."""
    if not (0.0 < shrink <= 1.0):
        raise ValueError("shrink must lie in (0, 1]")
    target = shrink * b_omega
    nrm = param_norm(params)
    if nrm < target:
        return params
    if nrm == 0.0:  # pragma: no cover - only reachable with target == 0
        return params
    scale = target / nrm
    return Params(tuple((w * scale, b * scale) for w, b in params.layers))


# ---------------------------------------------------------------------------
# loss heads


class SquaredError:
    """g(out, y) = ||out - y||^2."""

    kind = "squared_error"

    def value(self, out: np.ndarray, y: np.ndarray) -> float:
        r = out - y
        return float(np.dot(r, r))

    def grad_x(self, out: np.ndarray, y: np.ndarray) -> np.ndarray:
        return 2.0 * (out - y)


class PseudoHuber:
    """g(out, y) = sum_i delta^2 (sqrt(1 + ((out_i - y_i)/delta)^2) - 1).

    Quadratic near zero, asymptotically linear, with globally bounded first
    and second derivatives (delta and 1 per component).
    """

    kind = "pseudo_huber"

    def __init__(self, delta: float = 1.0) -> None:
        if not (delta > 0 and math.isfinite(delta)):
            raise ValueError("delta must be a positive finite real")
        self.delta = delta

    def value(self, out: np.ndarray, y: np.ndarray) -> float:
        u = (out - y) / self.delta
        return float(self.delta**2 * np.sum(np.sqrt(1.0 + u * u) - 1.0))

    def grad_x(self, out: np.ndarray, y: np.ndarray) -> np.ndarray:
        r = out - y
        u = r / self.delta
        return r / np.sqrt(1.0 + u * u)


def loss_head_envelopes(
    head: SquaredError | PseudoHuber,
    dim: int,
    output_bound: float,
    target_bound: float,
) -> LossEnvelope:
    """Certified derivative bounds for a loss head on bounded arguments.

    For squared error the gradient bound needs finite output and target
    bounds (2 * (output_bound + target_bound)); the pseudo-Huber bounds are
    global and ignore them.  dim is the network output width.
    """
    if dim < 1:
        raise ValueError("dim must be a positive integer")
    root_dim = math.sqrt(dim)
    if isinstance(head, SquaredError):
        if not (math.isfinite(output_bound) and math.isfinite(target_bound)):
            raise ValueError("squared error needs finite output and target bounds")
        if output_bound < 0 or target_bound < 0:
            raise ValueError("bounds must be nonnegative")
        g_p = 2.0 * (output_bound + target_bound)
        return LossEnvelope(g_p, 2.0 * root_dim, lip_g=g_p, lip_dg=2.0)
    if isinstance(head, PseudoHuber):
        g_p = head.delta * root_dim
        return LossEnvelope(g_p, root_dim, lip_g=g_p, lip_dg=1.0)
    raise TypeError(f"unsupported loss head: {type(head)!r}")


# ---------------------------------------------------------------------------
# serialization


def params_to_json(params: Params) -> dict:
    return {
        "format": "dense-layers-v1",
        "layers": [
            {"weight": w.tolist(), "bias": b.tolist()} for w, b in params.layers
        ],
    }


def params_from_json(doc: dict) -> Params:
    if doc.get("format") != "dense-layers-v1":
        raise ValueError("unrecognized parameter document format")
    layers = tuple(
        (np.asarray(l["weight"], dtype=float), np.asarray(l["bias"], dtype=float))
        for l in doc["layers"]
    )
    return Params(layers)


def save_params(params: Params, path: str | Path) -> None:
    Path(path).write_text(json.dumps(params_to_json(params), indent=1) + "\n")


def load_params(path: str | Path) -> Params:
    return params_from_json(json.loads(Path(path).read_text()))


def load_dataset_csv(
    path: str | Path, input_dim: int, target_dim: int
) -> tuple[Sample, ...]:
    """Read samples from CSV rows laid out as x columns then y columns."""
    raw = np.loadtxt(path, delimiter=",", ndmin=2, dtype=float)
    if raw.shape[1] != input_dim + target_dim:
        raise ValueError(
            f"expected {input_dim + target_dim} columns, found {raw.shape[1]}"
        )
    return tuple(
        Sample(row[:input_dim].copy(), row[input_dim:].copy()) for row in raw
    )


def dataset_norms(samples: Sequence[Sample]) -> tuple[float, ...]:
    return tuple(float(np.linalg.norm(s.x)) for s in samples)
