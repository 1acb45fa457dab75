"""Run configuration: one JSON document shared by every command.

The document has named sections (architecture, bounds, loss, verify, train,
code, ...); each command validates only the sections it consumes, before any
computation starts.  Helpers here also own the deterministic report writers:
JSON with sorted keys, CSV with 17-significant-digit floats, and the
overwrite guard.  Nothing in this module touches clocks or process state, so
identical inputs produce identical bytes.
"""

from __future__ import annotations

import hashlib
import json
import math
from pathlib import Path
from typing import Any, Sequence

from .activations import Activation, make_activation
from .bounds import (
    ArchitectureSpec,
    BoundInputs,
    Certificate,
    LossEnvelope,
    RefinementSearch,
    SampleMoments,
    network_certificate,
)
from .code_net import CodeCertificate, Control, FieldEnvelopes
from .network import PseudoHuber, Sample, SquaredError, loss_head_envelopes

__all__ = [
    "ConfigError",
    "build_architecture",
    "build_bound_inputs",
    "build_control",
    "build_field_envelopes",
    "build_loss",
    "build_refinement_search",
    "certificate_to_dict",
    "code_certificate_to_dict",
    "config_digest",
    "ensure_writable",
    "fmt",
    "load_config",
    "resolve_loss_envelope",
    "write_csv",
    "write_json",
]


class ConfigError(ValueError):
    """Invalid or missing configuration; maps to exit code 2."""


def load_config(path: str | Path) -> dict:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {p}")
    try:
        doc = json.loads(p.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError("config root must be a JSON object")
    return doc


def section(cfg: dict, name: str, required: bool = True) -> dict | None:
    doc = cfg.get(name)
    if doc is None:
        if required:
            raise ConfigError(f"missing config section '{name}'")
        return None
    if not isinstance(doc, dict):
        raise ConfigError(f"section '{name}' must be a JSON object")
    return doc


def get(
    doc: dict,
    key: str,
    kind: type | tuple[type, ...],
    default: Any = "__required__",
    where: str = "config",
) -> Any:
    if key not in doc or doc[key] is None:
        if default == "__required__":
            raise ConfigError(f"{where}: missing key '{key}'")
        return default
    val = doc[key]
    if kind is float and isinstance(val, int) and not isinstance(val, bool):
        val = float(val)
    if not isinstance(val, kind) or isinstance(val, bool) and kind is not bool:
        raise ConfigError(f"{where}: key '{key}' has wrong type")
    return val


# ---------------------------------------------------------------------------
# builders


def build_architecture(cfg: dict) -> ArchitectureSpec:
    doc = section(cfg, "architecture")
    widths = get(doc, "widths", list, where="architecture")
    if not all(isinstance(w, int) and not isinstance(w, bool) for w in widths):
        raise ConfigError("architecture: widths must be integers")
    acts_doc = get(doc, "activations", list, default=[], where="architecture")
    acts: list[Activation] = []
    for i, a in enumerate(acts_doc):
        try:
            if isinstance(a, str):
                acts.append(make_activation(a))
            elif isinstance(a, dict):
                kind = get(a, "kind", str, where=f"architecture.activations[{i}]")
                kwargs = {k: v for k, v in a.items() if k != "kind"}
                acts.append(make_activation(kind, **kwargs))
            else:
                raise ConfigError(
                    f"architecture.activations[{i}] must be a string or object"
                )
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"architecture.activations[{i}]: {exc}") from exc
    try:
        return ArchitectureSpec(widths=tuple(widths), activations=tuple(acts))
    except ValueError as exc:
        raise ConfigError(f"architecture: {exc}") from exc


def build_bound_inputs(cfg: dict) -> BoundInputs:
    doc = section(cfg, "bounds")
    b_omega = get(doc, "b_omega", float, where="bounds")
    budgets = get(doc, "layer_budgets", list, default=None, where="bounds")
    norms = get(doc, "sample_norms", list, default=None, where="bounds")
    mdoc = get(doc, "moments", dict, default=None, where="bounds")
    moments = None
    if mdoc is not None:
        moments = SampleMoments(
            e_s2=get(mdoc, "e_s2", float, where="bounds.moments"),
            e_s4=get(mdoc, "e_s4", float, where="bounds.moments"),
        )
    try:
        return BoundInputs(
            b_omega=b_omega,
            layer_budgets=None if budgets is None else tuple(float(d) for d in budgets),
            sample_norms=None if norms is None else tuple(float(s) for s in norms),
            moments=moments,
        )
    except ValueError as exc:
        raise ConfigError(f"bounds: {exc}") from exc


def build_loss(cfg: dict, required: bool = True):
    """Returns (head_or_None, loss_doc_or_None); envelopes come later.

    The head is the trainable callable (squared_error / pseudo_huber); a
    raw 'envelope' loss has no head and certifies only.
    """
    doc = section(cfg, "loss", required=required)
    if doc is None:
        return None, None
    kind = get(doc, "kind", str, where="loss")
    if kind == "squared_error":
        return SquaredError(), doc
    if kind == "pseudo_huber":
        return PseudoHuber(get(doc, "delta", float, default=1.0, where="loss")), doc
    if kind == "envelope":
        return None, doc
    raise ConfigError(f"loss: unknown kind '{kind}'")


def resolve_loss_envelope(
    cfg: dict,
    arch: ArchitectureSpec,
    inputs: BoundInputs,
    s_max: float,
    target_bound: float | None = None,
) -> LossEnvelope | None:
    """Loss derivative bounds; squared error needs the certified output bound.

    The output of the affine head on the b_omega ball is bounded by
    D * sqrt(B_hidden^2 + 1), with B_hidden the certified bound on the last
    feature layer at the largest sample norm.
    """
    head, doc = build_loss(cfg, required=False)
    if doc is None:
        return None
    kind = doc["kind"]
    try:
        if kind == "envelope":
            return LossEnvelope(
                g_p_max=get(doc, "g_p_max", float, where="loss"),
                g_pp_max=get(doc, "g_pp_max", float, where="loss"),
                lip_g=get(doc, "lip_g", float, default=None, where="loss"),
                lip_dg=get(doc, "lip_dg", float, default=None, where="loss"),
            )
        dim = arch.widths[-1]
        if kind == "pseudo_huber":
            return loss_head_envelopes(head, dim, math.inf, math.inf)
        tb = get(doc, "target_bound", float, default=target_bound, where="loss")
        if tb is None:
            raise ConfigError("loss: squared_error needs 'target_bound' or a dataset")
        nb = network_certificate(arch, inputs, s_max)
        hidden_b = nb.last_hidden.b_n
        out_bound = inputs.budgets_for(arch)[-1] * math.sqrt(hidden_b * hidden_b + 1.0)
        return loss_head_envelopes(head, dim, out_bound, tb)
    except ValueError as exc:
        raise ConfigError(f"loss: {exc}") from exc


def build_refinement_search(cfg: dict) -> RefinementSearch | None:
    doc = section(cfg, "refine", required=False)
    if doc is None:
        return None
    try:
        return RefinementSearch(
            restarts=get(doc, "restarts", int, default=4, where="refine"),
            iters=get(doc, "iters", int, default=60, where="refine"),
            seed=get(doc, "seed", int, default=0, where="refine"),
        )
    except ValueError as exc:
        raise ConfigError(f"refine: {exc}") from exc


def build_control(doc: dict, where: str = "control") -> Control:
    try:
        t_final = get(doc, "t_final", float, where=where)
        jumps = get(doc, "jumps", list, default=[], where=where)
        breaks = get(doc, "density_breaks", list, default=None, where=where)
        values = get(doc, "density_values", list, default=None, where=where)
        density = get(doc, "density", float, default=None, where=where)
        if density is not None:
            if breaks is not None or values is not None:
                raise ConfigError(f"{where}: give either density or breaks/values")
            breaks, values = [0.0, t_final], [density]
        return Control(
            t_final=t_final,
            jumps=tuple((float(t), float(s)) for t, s in jumps),
            density_breaks=() if breaks is None else tuple(float(b) for b in breaks),
            density_values=() if values is None else tuple(float(v) for v in values),
        )
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"{where}: {exc}") from exc


_ENVELOPE_KEYS = (
    "b_v", "b_theta", "b_theta_theta", "b_x_theta", "b_theta_x", "b_x_x",
    "lip_x", "p_theta", "p_theta_theta", "p_x_theta", "p_theta_x", "p_x_x",
)


def build_field_envelopes(doc: dict, where: str = "envelopes") -> FieldEnvelopes:
    unknown = set(doc) - set(_ENVELOPE_KEYS)
    if unknown:
        raise ConfigError(f"{where}: unknown keys {sorted(unknown)}")
    try:
        kwargs = {k: get(doc, k, float, default=0.0, where=where) for k in _ENVELOPE_KEYS}
        return FieldEnvelopes(**kwargs)
    except ValueError as exc:
        raise ConfigError(f"{where}: {exc}") from exc


# ---------------------------------------------------------------------------
# serialization


def _layer_rows(cert: Certificate) -> list[dict]:
    return [
        {
            "layer": u + 1,
            "l_n": lb.l_n,
            "l_grad_n": lb.l_grad_n,
            "b_n": lb.b_n,
            "b_grad_n": lb.b_grad_n,
        }
        for u, lb in enumerate(cert.per_layer)
    ]


def certificate_to_dict(cert: Certificate) -> dict:
    return {
        "kind": "network_loss_certificate",
        "method": cert.method,
        "l_n_final": cert.l_n_final,
        "l_grad_n_final": cert.l_grad_n_final,
        "l_phi": cert.l_phi,
        "l_grad_phi": cert.l_grad_phi,
        "b_grad_phi": cert.b_grad_phi,
        "per_layer": _layer_rows(cert),
        "layer_budgets": None if cert.layer_budgets is None else list(cert.layer_budgets),
        "flags": list(cert.flags),
        "inputs_digest": cert.inputs_digest,
    }


def code_certificate_to_dict(cert: CodeCertificate) -> dict:
    e = cert.envelopes
    return {
        "kind": "code_certificate",
        "b_upsilon": cert.b_upsilon,
        "x_norm": cert.x_norm,
        "b_x": cert.b_x,
        "l_x": cert.l_x,
        "b_dx": cert.b_dx,
        "c_theta_theta": cert.c_theta_theta,
        "l_dx": cert.l_dx,
        "l_phi": cert.l_phi,
        "l_grad_phi": cert.l_grad_phi,
        "status": cert.status,
        "envelopes": {k: getattr(e, k) for k in _ENVELOPE_KEYS},
    }


def config_digest(resolved: dict) -> str:
    canon = json.dumps(resolved, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()[:16]


def fmt(v: Any) -> str:
    """CSV cell formatting: floats at full 17-significant-digit precision."""
    if isinstance(v, bool):
        return "1" if v else "0"
    if isinstance(v, float):
        return f"{v:.17g}"
    return str(v)


def ensure_writable(paths: Sequence[Path], force: bool) -> None:
    if force:
        return
    clashes = [str(p) for p in paths if p.exists()]
    if clashes:
        raise ConfigError(
            "refusing to overwrite existing outputs (use --force): "
            + ", ".join(clashes)
        )


def write_json(path: Path, obj: dict) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def write_csv(path: Path, header: Sequence[str], rows: Sequence[Sequence[Any]]) -> None:
    lines = [",".join(header)]
    lines += [",".join(fmt(c) for c in row) for row in rows]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def samples_from_config(
    cfg: dict, arch: ArchitectureSpec
) -> tuple[tuple[Sample, ...], float | None]:
    """Load or synthesize the training set; returns (samples, target_bound)."""
    from .network import load_dataset_csv, sample_in_ball  # cycle-free, lazy for clarity
    import numpy as np

    ds = section(cfg, "dataset", required=False)
    if ds is not None:
        path = get(ds, "path", str, where="dataset")
        try:
            samples = load_dataset_csv(path, arch.widths[0], arch.widths[-1])
        except (OSError, ValueError) as exc:
            raise ConfigError(f"dataset: {exc}") from exc
        tb = max(float(np.linalg.norm(s.y)) for s in samples)
        return samples, tb
    tr = section(cfg, "train", required=False) or {}
    syn = get(tr, "synthetic", dict, default=None, where="train")
    if syn is None:
        raise ConfigError("need a 'dataset' section or train.synthetic parameters")
    n = get(syn, "n_samples", int, where="train.synthetic")
    s_norm = get(syn, "input_norm", float, where="train.synthetic")
    t_norm = get(syn, "target_norm", float, default=1.0, where="train.synthetic")
    seed = get(syn, "seed", int, default=0, where="train.synthetic")
    if n < 1:
        raise ConfigError("train.synthetic: n_samples must be positive")
    rng = np.random.default_rng(seed)
    samples = tuple(
        Sample(
            sample_in_ball(rng, arch.widths[0], s_norm),
            sample_in_ball(rng, arch.widths[-1], t_norm),
        )
        for _ in range(n)
    )
    return samples, t_norm
