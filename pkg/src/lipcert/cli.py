"""lipcert command line: certify, verify, train, and controlled-ODE runs.

Every command reads one JSON config, writes machine-readable reports into
--out (JSON for certificates, CSV for tables) plus a run_meta.json embedding
the resolved config and its digest, and prints a short human table.  Outputs
contain no timestamps or environment state, so a rerun with the same config,
seed and --threads 1 is byte-identical.

Exit codes: 0 ok, 2 config/usage error, 3 certificate overflowed to infinity
without --allow-inf, 4 soundness or equivalence violation (the falsification
signal), 5 descent inequality violation during training.
"""

from __future__ import annotations

import argparse
import logging
import math
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .activations import saturated_linear
from .bounds import (
    ArchitectureSpec,
    BoundInputs,
    LossEnvelope,
    closed_form_bounds,
    closed_form_certificate,
    derive_adagrad_params,
    layer_step,
    loss_certificate,
    network_certificate,
    refine_over_layer_budgets,
)
from .code_net import (
    code_certificate,
    code_loss_certificate,
    dnn_as_code,
    embed_input,
    linear_scalar_field,
    solve_code,
    total_variation,
    verify_envelopes,
)
from .config import (
    ConfigError,
    build_architecture,
    build_bound_inputs,
    build_control,
    build_field_envelopes,
    build_loss,
    build_refinement_search,
    certificate_to_dict,
    code_certificate_to_dict,
    config_digest,
    ensure_writable,
    get,
    load_config,
    resolve_loss_envelope,
    samples_from_config,
    section,
    write_csv,
    write_json,
)
from .empirical import (
    chain_output,
    directed_affine_pair,
    empirical_grad_lipschitz,
    empirical_lipschitz,
    network_jacobian_map,
    network_output_map,
    worst_case_construction,
)
from .network import (
    PseudoHuber,
    dataset_norms,
    flatten_params,
    init_params,
    loss_head_envelopes,
)
from .training import NetworkObjective, run_adagrad_norm, run_gd

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_OVERFLOW = 3
EXIT_VIOLATION = 4
EXIT_DESCENT = 5

SOUNDNESS_HEADER = (
    "config_id", "constant_name", "certificate", "empirical", "ratio",
    "n_pairs", "seed",
)

log = logging.getLogger("lipcert")

_CODE_FIELDS = {"linear_scalar": linear_scalar_field}


class OverflowGate(RuntimeError):
    """A certified constant is +inf and --allow-inf was not given."""


def _setup_logging() -> None:
    name = os.environ.get("LIPCERT_LOG", "WARNING").upper()
    level = getattr(logging, name, None)
    if not isinstance(level, int):
        level = logging.WARNING
    logging.basicConfig(
        level=level, stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s"
    )


def _gate(values, allow: bool, what: str) -> None:
    bad = [v for v in values if v is not None and math.isinf(v)]
    if bad and not allow:
        raise OverflowGate(
            f"{what}: constants overflowed to infinity; rerun with --allow-inf to accept"
        )


def _ratio(cert: float, emp: float) -> float:
    return math.inf if emp == 0.0 else cert / emp


def _config_id(cfg: dict) -> str:
    return get(cfg, "name", str, default=config_digest(cfg))


def _run_meta(command: str, cfg: dict, outputs: list[str]) -> dict:
    return {
        "command": command,
        "config_digest": config_digest(cfg),
        "outputs": sorted(outputs),
        "resolved_config": cfg,
        "tool_version": __version__,
    }


def _fmt_cell(v) -> str:
    if v is None:
        return "-"
    return f"{v:.6g}"


def _print_table(title: str, columns: list[str], rows: list[tuple]) -> None:
    print(title)
    widths = [
        max(len(str(c)), max((len(_fmt_cell(r[i + 1])) for r in rows), default=0))
        for i, c in enumerate(columns)
    ]
    name_w = max(len(r[0]) for r in rows)
    print("  " + " " * name_w + "  " + "  ".join(c.rjust(w) for c, w in zip(columns, widths)))
    for r in rows:
        cells = "  ".join(_fmt_cell(v).rjust(w) for v, w in zip(r[1:], widths))
        print(f"  {r[0].ljust(name_w)}  {cells}")


# ---------------------------------------------------------------------------
# certify


def _network_only_dict(arch, inputs, s_max: float, cfg: dict, method: str) -> dict:
    """Certificate document when no loss section is configured."""
    nb = network_certificate(arch, inputs, s_max)
    if method == "closed_form":
        cf = closed_form_bounds(arch, inputs, s_max)
        if arch.m == 0:
            final = nb.final
            per = []
        else:
            last = nb.per_layer[-1]
            last = replace(
                last,
                l_n=math.sqrt(cf.l_n_sq[-1]),
                l_grad_n=math.sqrt(cf.l_grad_n_sq[-1]),
                b_grad_n=math.sqrt(cf.l_n_sq[-1]),
            )
            final = layer_step(
                last, None, arch.widths[-1], inputs.budgets_for(arch)[-1]
            )
            per = [
                {
                    "layer": u + 1,
                    "l_n": math.sqrt(cf.l_n_sq[u]),
                    "l_grad_n": math.sqrt(cf.l_grad_n_sq[u]),
                    "b_n": nb.per_layer[u].b_n,
                    "b_grad_n": math.sqrt(cf.l_n_sq[u]),
                }
                for u in range(arch.m)
            ]
    else:
        final = nb.final
        per = [
            {
                "layer": u + 1,
                "l_n": lb.l_n,
                "l_grad_n": lb.l_grad_n,
                "b_n": lb.b_n,
                "b_grad_n": lb.b_grad_n,
            }
            for u, lb in enumerate(nb.per_layer)
        ]
    return {
        "kind": "network_certificate",
        "method": method,
        "l_n_final": final.l_n,
        "l_grad_n_final": final.l_grad_n,
        "l_phi": None,
        "l_grad_phi": None,
        "b_grad_phi": None,
        "per_layer": per,
        "layer_budgets": None if inputs.layer_budgets is None else list(inputs.layer_budgets),
        "flags": ["overflow"] if math.isinf(final.l_n) or math.isinf(final.l_grad_n) else [],
        "inputs_digest": config_digest(cfg),
    }


def cmd_certify(cfg: dict, args, out: Path) -> int:
    arch = build_architecture(cfg)
    inputs = build_bound_inputs(cfg)
    ds = section(cfg, "dataset", required=False)
    norms = None
    target_bound = None
    if ds is not None:
        samples, target_bound = samples_from_config(cfg, arch)
        norms = dataset_norms(samples)
    elif inputs.sample_norms is not None:
        norms = inputs.sample_norms
    if norms is None and inputs.moments is None:
        raise ConfigError("certify needs bounds.sample_norms, bounds.moments, or a dataset")
    s_max = max(norms) if norms is not None else math.sqrt(inputs.moments.e_s2)

    env = resolve_loss_envelope(cfg, arch, inputs, s_max, target_bound)
    search = build_refinement_search(cfg)

    uniform = BoundInputs(
        b_omega=inputs.b_omega,
        sample_norms=inputs.sample_norms,
        moments=inputs.moments,
    )

    docs: dict[str, dict] = {}
    if env is None:
        if norms is None:
            raise ConfigError("certify without a loss section needs explicit sample norms")
        docs["recursive"] = _network_only_dict(arch, inputs, s_max, cfg, "recursive")
        docs["closed_form"] = _network_only_dict(arch, uniform, s_max, cfg, "closed_form")
        refined = None
    else:
        rec = loss_certificate(arch, inputs, env, dataset_norms=norms)
        docs["recursive"] = certificate_to_dict(rec)
        if norms is not None:
            docs["closed_form"] = certificate_to_dict(
                closed_form_certificate(arch, uniform, env, dataset_norms=norms)
            )
        else:
            log.info("moment-mode certify: closed forms need explicit norms; skipped")
        refined = None
        if search is not None:
            if arch.m < 1:
                raise ConfigError("refine: budget refinement needs a hidden layer")
            if norms is None:
                raise ConfigError("refine: budget refinement needs explicit sample norms")
            refined = refine_over_layer_budgets(
                arch, uniform, env, dataset_norms=norms, search=search
            )
            docs["refined"] = certificate_to_dict(refined)

    _gate(
        [v for d in docs.values() for v in (d["l_n_final"], d["l_grad_n_final"], d["l_phi"], d["l_grad_phi"])],
        args.allow_inf,
        "certify",
    )

    paths = {m: out / f"certificate_{m}.json" for m in docs}
    meta_path = out / "run_meta.json"
    ensure_writable(list(paths.values()) + [meta_path], args.force)
    for m, doc in docs.items():
        write_json(paths[m], doc)
    write_json(meta_path, _run_meta("certify", cfg, [p.name for p in paths.values()] + [meta_path.name]))

    columns = [m for m in ("recursive", "closed_form", "refined") if m in docs]
    rows = []
    for name, key in (
        ("L_N", "l_n_final"),
        ("L_grad_N", "l_grad_n_final"),
        ("L_phi", "l_phi"),
        ("L_grad_phi", "l_grad_phi"),
        ("B_grad_phi", "b_grad_phi"),
    ):
        rows.append((name,) + tuple(docs[m][key] for m in columns))
    _print_table(
        f"certificates (b_omega={inputs.b_omega:g}, s_max={s_max:g})", columns, rows
    )
    for rec_row in docs["recursive"]["per_layer"]:
        print(
            "  layer {layer}: l_n={l_n:.6g} l_grad_n={l_grad_n:.6g} b_n={b_n:.6g}".format(
                **rec_row
            )
        )
    flags = sorted({f for d in docs.values() for f in d["flags"]})
    if flags:
        print(f"  flags: {', '.join(flags)}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# verify


def _verify_input(arch, vdoc, seed: int) -> np.ndarray:
    x_cfg = get(vdoc, "x", list, default=None, where="verify")
    if x_cfg is not None:
        x = np.asarray([float(v) for v in x_cfg])
        if x.shape != (arch.widths[0],):
            raise ConfigError(f"verify.x must have {arch.widths[0]} entries")
        return x
    s = get(vdoc, "input_norm", float, default=1.0, where="verify")
    if s < 0:
        raise ConfigError("verify.input_norm must be nonnegative")
    if s == 0.0:
        return np.zeros(arch.widths[0])
    rng = np.random.default_rng(seed)
    d = rng.standard_normal(arch.widths[0])
    return d / np.linalg.norm(d) * s


def cmd_verify(cfg: dict, args, out: Path) -> int:
    arch = build_architecture(cfg)
    inputs = build_bound_inputs(cfg)
    vdoc = section(cfg, "verify")
    top_seed = get(cfg, "seed", int, default=0)
    seed = get(vdoc, "seed", int, default=top_seed, where="verify")
    n_pairs = get(vdoc, "n_pairs", int, default=10000, where="verify")
    mode = get(vdoc, "mode", str, default="mixed", where="verify")
    if n_pairs < 1:
        raise ConfigError("verify.n_pairs must be positive")
    x = _verify_input(arch, vdoc, seed)
    s = float(np.linalg.norm(x))

    cert_path = get(vdoc, "certificate_path", str, default=None, where="verify")
    if cert_path is not None:
        doc = load_config(cert_path)
        cert_l_n = get(doc, "l_n_final", float, where="certificate")
        cert_l_grad = get(doc, "l_grad_n_final", float, where="certificate")
    else:
        nb = network_certificate(arch, inputs, s)
        cert_l_n, cert_l_grad = nb.l_n, nb.l_grad_n
    _gate([cert_l_n, cert_l_grad], args.allow_inf, "verify")

    cid = _config_id(cfg)
    b = inputs.b_omega
    n_params = arch.n_params
    rows: list[tuple] = []

    est_n = empirical_lipschitz(network_output_map(arch, x), n_params, b, n_pairs, seed, mode)
    rows.append((cid, "l_n", cert_l_n, est_n.max_ratio, _ratio(cert_l_n, est_n.max_ratio), n_pairs, seed))
    est_g = empirical_grad_lipschitz(
        network_jacobian_map(arch, x), n_params, b, n_pairs, seed + 1, mode
    )
    rows.append((cid, "l_grad_n", cert_l_grad, est_g.max_ratio, _ratio(cert_l_grad, est_g.max_ratio), n_pairs, seed + 1))

    if get(vdoc, "directed_affine", bool, default=False, where="verify"):
        if arch.m != 0:
            raise ConfigError("verify.directed_affine applies to depth-zero networks")
        lo, hi = directed_affine_pair(arch, x, b)
        f = network_output_map(arch, x)
        quot = float(
            np.linalg.norm(f(hi[None])[0] - f(lo[None])[0]) / np.linalg.norm(hi - lo)
        )
        rows.append((cid, "directed_affine", cert_l_n, quot, _ratio(cert_l_n, quot), 1, seed))

    wdoc = get(vdoc, "worst_case", dict, default=None, where="verify")
    if wdoc is not None:
        m = get(wdoc, "m", int, where="verify.worst_case")
        c = get(wdoc, "c", float, where="verify.worst_case")
        r_sat = get(wdoc, "r_sat", float, where="verify.worst_case")
        try:
            wc = worst_case_construction(m, c, r_sat, b)
            chain = ArchitectureSpec(
                widths=(1,) * (m + 2),
                activations=tuple(saturated_linear(c, r_sat) for _ in range(m)),
            )
        except ValueError as exc:
            raise ConfigError(f"verify.worst_case: {exc}") from exc
        chain_l_n = network_certificate(chain, BoundInputs(b_omega=b), 0.0).l_n
        dth = flatten_params(wc.theta) - flatten_params(wc.theta_tilde)
        quot = abs(
            chain_output(wc.theta, wc.activation) - chain_output(wc.theta_tilde, wc.activation)
        ) / float(np.linalg.norm(dth))
        rows.append((cid, "worst_case_ratio", chain_l_n, quot, _ratio(chain_l_n, quot), 1, seed))

    csv_path = out / "soundness.csv"
    meta_path = out / "run_meta.json"
    ensure_writable([csv_path, meta_path], args.force)
    write_csv(csv_path, SOUNDNESS_HEADER, rows)
    write_json(meta_path, _run_meta("verify", cfg, [csv_path.name, meta_path.name]))

    violations = [r for r in rows if r[3] > r[2]]
    for r in rows:
        status = "VIOLATION" if r[3] > r[2] else "ok"
        print(f"{r[1]}: certificate={r[2]:.6g} empirical={r[3]:.6g} ({status})")
    if violations:
        print(f"{len(violations)} soundness violation(s): certificate falsified", file=sys.stderr)
        return EXIT_VIOLATION
    return EXIT_OK


# ---------------------------------------------------------------------------
# train


def cmd_train(cfg: dict, args, out: Path) -> int:
    arch = build_architecture(cfg)
    inputs = build_bound_inputs(cfg)
    tdoc = section(cfg, "train")
    top_seed = get(cfg, "seed", int, default=0)
    head, _ = build_loss(cfg, required=True)
    if head is None:
        raise ConfigError("train needs a trainable loss kind (squared_error or pseudo_huber)")

    samples, target_bound = samples_from_config(cfg, arch)
    norms = dataset_norms(samples)
    env = resolve_loss_envelope(cfg, arch, inputs, max(norms), target_bound)
    cert = loss_certificate(arch, inputs, env, dataset_norms=norms)
    if math.isinf(cert.l_grad_phi):
        print("certificate overflowed: no finite certified step size exists", file=sys.stderr)
        return EXIT_OVERFLOW

    algorithm = get(tdoc, "algorithm", str, default="gd", where="train")
    steps = get(tdoc, "steps", int, where="train")
    if steps < 1:
        raise ConfigError("train.steps must be positive")
    init_seed = get(tdoc, "init_seed", int, default=top_seed, where="train")
    radius_fraction = get(tdoc, "radius_fraction", float, default=0.5, where="train")
    shrink = get(tdoc, "shrink", float, default=0.999, where="train")
    theta0 = flatten_params(
        init_params(arch, inputs.b_omega, seed=init_seed, radius_fraction=radius_fraction)
    )
    objective = NetworkObjective(arch, samples, head)

    # diagnostic knob: run descent with a manual constant instead of the
    # certified one, so the exit-5 falsification path can be exercised
    override = get(tdoc, "l_grad_phi_override", float, default=None, where="train")
    l_grad_phi = cert.l_grad_phi if override is None else override

    try:
        if algorithm == "gd":
            trace = run_gd(objective, theta0, l_grad_phi, steps, inputs.b_omega, shrink)
        elif algorithm == "adagrad_norm":
            eps_exponent = get(tdoc, "eps_exponent", float, default=0.0, where="train")
            eps_margin = get(tdoc, "eps_margin", float, default=1.0, where="train")
            batch_size = get(tdoc, "batch_size", int, default=len(samples), where="train")
            seed = get(tdoc, "seed", int, default=top_seed, where="train")
            alpha, beta = derive_adagrad_params(cert, eps_margin, eps_exponent)
            trace = run_adagrad_norm(
                objective, theta0, alpha, beta, eps_exponent, batch_size,
                steps, seed, inputs.b_omega, shrink, l_grad_phi=cert.l_grad_phi,
            )
        else:
            raise ConfigError(f"train.algorithm must be gd or adagrad_norm, got '{algorithm}'")
    except ValueError as exc:
        raise ConfigError(f"train: {exc}") from exc

    trace_path = out / "trace.csv"
    cert_path = out / "certificate.json"
    meta_path = out / "run_meta.json"
    ensure_writable([trace_path, cert_path, meta_path], args.force)
    trace.to_csv(trace_path)
    write_json(cert_path, certificate_to_dict(cert))
    write_json(meta_path, _run_meta("train", cfg, [trace_path.name, cert_path.name, meta_path.name]))

    grads = [st.grad_norm for st in trace.steps]
    print(
        f"{algorithm}: {len(trace.steps)} steps, l_grad_phi={l_grad_phi:.6g}, "
        f"phi {trace.steps[0].phi:.6g} -> {trace.final_phi:.6g}, "
        f"min ||G||={min(grads):.6g}, projections={trace.n_projected}, "
        f"descent violations={trace.n_descent_violations}"
    )
    if trace.n_descent_violations > 0:
        print("descent inequality violated on an in-ball step", file=sys.stderr)
        return EXIT_DESCENT
    return EXIT_OK


# ---------------------------------------------------------------------------
# code subcommands


def _code_envelopes(cdoc: dict):
    """Returns (field_or_None, envelopes) from the code section."""
    name = get(cdoc, "field", str, default=None, where="code")
    env_doc = get(cdoc, "envelopes", dict, default=None, where="code")
    field = None
    if name is not None:
        if name not in _CODE_FIELDS:
            raise ConfigError(
                f"code.field must be one of {sorted(_CODE_FIELDS)}, got '{name}'"
            )
        field = _CODE_FIELDS[name]()
    if env_doc is not None:
        return field, build_field_envelopes(env_doc, "code.envelopes")
    if field is not None and field.envelopes is not None:
        return field, field.envelopes
    raise ConfigError("code: need 'envelopes' or a built-in 'field' with envelopes")


def _code_budget(cdoc: dict):
    bu = get(cdoc, "b_upsilon", float, default=None, where="code")
    ctl_doc = get(cdoc, "control", dict, default=None, where="code")
    control = None if ctl_doc is None else build_control(ctl_doc, "code.control")
    if bu is None:
        if control is None:
            raise ConfigError("code: need 'b_upsilon' or a 'control' section")
        bu = total_variation([control])
    if bu < 0:
        raise ConfigError("code.b_upsilon must be nonnegative")
    return bu, control


def _code_x_norm(cdoc: dict):
    xn = get(cdoc, "x_norm", float, default=None, where="code")
    x_cfg = get(cdoc, "x", list, default=None, where="code")
    x = None if x_cfg is None else np.asarray([float(v) for v in x_cfg])
    if xn is None:
        if x is None:
            raise ConfigError("code: need 'x_norm' or an explicit 'x'")
        xn = float(np.linalg.norm(x))
    if xn < 0:
        raise ConfigError("code.x_norm must be nonnegative")
    return xn, x


def _code_loss_envelope(cfg: dict, cdoc: dict) -> LossEnvelope | None:
    head, doc = build_loss(cfg, required=False)
    if doc is None:
        return None
    kind = doc["kind"]
    if kind == "envelope":
        return LossEnvelope(
            g_p_max=get(doc, "g_p_max", float, where="loss"),
            g_pp_max=get(doc, "g_pp_max", float, where="loss"),
            lip_g=get(doc, "lip_g", float, default=None, where="loss"),
            lip_dg=get(doc, "lip_dg", float, default=None, where="loss"),
        )
    if kind == "pseudo_huber":
        dim = get(cdoc, "dim_state", int, default=1, where="code")
        return loss_head_envelopes(PseudoHuber(doc.get("delta", 1.0)), dim, math.inf, math.inf)
    raise ConfigError(
        "code loss bounds need kind 'envelope' or 'pseudo_huber' "
        "(squared_error has no certified output bound here)"
    )


def cmd_code_certify(cfg: dict, args, out: Path) -> int:
    cdoc = section(cfg, "code")
    _, env = _code_envelopes(cdoc)
    bu, _ = _code_budget(cdoc)
    xn, _ = _code_x_norm(cdoc)
    try:
        cert = code_certificate(env, bu, xn)
    except (ValueError, OverflowError) as exc:
        raise ConfigError(f"code: {exc}") from exc

    loss_env = _code_loss_envelope(cfg, cdoc)
    if loss_env is not None:
        norms = get(cdoc, "sample_norms", list, default=None, where="code")
        mdoc = get(cdoc, "moments", dict, default=None, where="code")
        try:
            if norms is not None:
                cert = code_loss_certificate(cert, loss_env, sample_norms=[float(s) for s in norms])
            elif mdoc is not None:
                moments = {}
                for k, v in mdoc.items():
                    try:
                        moments[int(k)] = float(v)
                    except (TypeError, ValueError):
                        raise ConfigError(f"code.moments: bad entry {k!r}: {v!r}")
                cert = code_loss_certificate(cert, loss_env, moments=moments)
            else:
                raise ConfigError("code loss bounds need 'sample_norms' or 'moments'")
        except ValueError as exc:
            raise ConfigError(f"code: {exc}") from exc

    _gate(
        [cert.b_x, cert.l_x, cert.c_theta_theta, cert.l_dx, cert.l_phi, cert.l_grad_phi],
        args.allow_inf,
        "code certify",
    )

    cert_path = out / "code_certificate.json"
    meta_path = out / "run_meta.json"
    ensure_writable([cert_path, meta_path], args.force)
    write_json(cert_path, code_certificate_to_dict(cert))
    write_json(meta_path, _run_meta("code certify", cfg, [cert_path.name, meta_path.name]))

    rows = [
        ("B_X", cert.b_x),
        ("L_X", cert.l_x),
        ("C_theta_theta", cert.c_theta_theta),
        ("L_dX", cert.l_dx),
    ]
    if cert.l_phi is not None:
        rows += [("L_phi", cert.l_phi), ("L_grad_phi", cert.l_grad_phi)]
    _print_table(
        f"code certificate (b_upsilon={bu:g}, x_norm={xn:g})", ["value"], rows
    )
    return EXIT_OK


def cmd_code_verify(cfg: dict, args, out: Path) -> int:
    cdoc = section(cfg, "code")
    field, env = _code_envelopes(cdoc)
    if field is None:
        raise ConfigError("code verify needs a built-in 'field' to integrate")
    bu, control = _code_budget(cdoc)
    if control is None:
        raise ConfigError("code verify needs a 'control' section")
    xn, x = _code_x_norm(cdoc)
    if x is None:
        raise ConfigError("code verify needs an explicit 'x'")
    if x.shape != (field.dim_state,):
        raise ConfigError(f"code.x must have {field.dim_state} entries")

    box = get(cdoc, "theta_box", list, default=None, where="code")
    if box is None or len(box) != 2:
        raise ConfigError("code verify needs theta_box = [low, high]")
    lo = np.asarray([float(v) for v in box[0]])
    hi = np.asarray([float(v) for v in box[1]])
    if lo.shape != (field.dim_theta,) or hi.shape != (field.dim_theta,):
        raise ConfigError(f"code.theta_box entries must have {field.dim_theta} values")
    if np.any(hi < lo):
        raise ConfigError("code.theta_box: high must dominate low")

    top_seed = get(cfg, "seed", int, default=0)
    seed = get(cdoc, "seed", int, default=top_seed, where="code")
    n_samples = get(cdoc, "n_samples", int, default=10000, where="code")
    n_substeps = get(cdoc, "n_substeps", int, default=64, where="code")
    if n_samples < 2:
        raise ConfigError("code.n_samples must be at least 2")

    cert = code_certificate(env, bu, xn)
    _gate([cert.b_x, cert.l_x], args.allow_inf, "code verify")

    rng = np.random.default_rng(seed)
    max_norm = 0.0
    max_ratio = 0.0
    prev_theta = None
    prev_final = None
    for _ in range(n_samples):
        theta = lo + (hi - lo) * rng.random(field.dim_theta)
        final = solve_code(field, control, theta, x, n_substeps).final_state
        max_norm = max(max_norm, float(np.linalg.norm(final)))
        if prev_theta is not None:
            dth = float(np.linalg.norm(theta - prev_theta))
            if dth > 1e-12:
                max_ratio = max(
                    max_ratio, float(np.linalg.norm(final - prev_final)) / dth
                )
        prev_theta, prev_final = theta, final

    cid = _config_id(cfg)
    rows = [
        (cid, "b_x", cert.b_x, max_norm, _ratio(cert.b_x, max_norm), n_samples, seed),
        (cid, "l_x", cert.l_x, max_ratio, _ratio(cert.l_x, max_ratio), n_samples - 1, seed),
    ]

    if get(cdoc, "check_envelopes", bool, default=False, where="code"):
        n_env = get(cdoc, "n_envelope_samples", int, default=200, where="code")
        x_lo = get(cdoc, "x_box_low", list, default=list(x), where="code")
        x_hi = get(cdoc, "x_box_high", list, default=list(x), where="code")
        t_pts = [0.0, 0.5 * control.t_final, control.t_final]
        problems = verify_envelopes(
            field, env, (lo, hi),
            (np.asarray([float(v) for v in x_lo]), np.asarray([float(v) for v in x_hi])),
            t_pts, n_env, seed,
        )
        for p in problems:
            print(f"envelope violation: {p}", file=sys.stderr)
        rows.append((cid, "envelope_violations", 0.0, float(len(problems)), math.inf, n_env, seed))

    csv_path = out / "code_soundness.csv"
    meta_path = out / "run_meta.json"
    ensure_writable([csv_path, meta_path], args.force)
    write_csv(csv_path, SOUNDNESS_HEADER, rows)
    write_json(meta_path, _run_meta("code verify", cfg, [csv_path.name, meta_path.name]))

    violations = [r for r in rows if r[3] > r[2]]
    for r in rows:
        status = "VIOLATION" if r[3] > r[2] else "ok"
        print(f"{r[1]}: certificate={r[2]:.6g} empirical={r[3]:.6g} ({status})")
    if violations:
        print(f"{len(violations)} soundness violation(s)", file=sys.stderr)
        return EXIT_VIOLATION
    return EXIT_OK


def cmd_code_equivalence(cfg: dict, args, out: Path) -> int:
    from .activations import tanh

    cdoc = section(cfg, "code")
    top_seed = get(cfg, "seed", int, default=0)
    seed = get(cdoc, "seed", int, default=top_seed, where="code")
    n_nets = get(cdoc, "n_nets", int, default=20, where="code")
    max_width = get(cdoc, "max_width", int, default=5, where="code")
    max_hidden = get(cdoc, "max_hidden", int, default=3, where="code")
    b_omega = get(cdoc, "b_omega", float, default=2.0, where="code")
    tol = get(cdoc, "tolerance", float, default=1e-12, where="code")
    if n_nets < 1 or max_width < 1 or max_hidden < 0:
        raise ConfigError("code equivalence: sizes must be positive")

    from .network import forward, unflatten_params

    rng = np.random.default_rng(seed)
    rows = []
    worst = 0.0
    for net_id in range(n_nets):
        depth = int(rng.integers(0, max_hidden + 1))
        widths = tuple(int(w) for w in rng.integers(1, max_width + 1, size=depth + 2))
        arch = ArchitectureSpec(
            widths=widths, activations=tuple(tanh() for _ in range(depth))
        )
        params = init_params(arch, b_omega, seed=int(rng.integers(2**31)))
        x = rng.standard_normal(widths[0])
        field_d, ctrl_d = dnn_as_code(arch)
        traj = solve_code(
            field_d, ctrl_d, flatten_params(params), embed_input(arch, x), n_substeps=1
        )
        ref = forward(params, arch, x).output
        num = float(np.linalg.norm(traj.final_state[: widths[-1]] - ref))
        den = float(np.linalg.norm(ref))
        rel = num if den == 0.0 else num / den
        worst = max(worst, rel)
        rows.append((net_id, "x".join(str(w) for w in widths), rel, tol))

    csv_path = out / "equivalence.csv"
    meta_path = out / "run_meta.json"
    ensure_writable([csv_path, meta_path], args.force)
    write_csv(csv_path, ("net_id", "widths", "rel_error", "tolerance"), rows)
    write_json(meta_path, _run_meta("code equivalence", cfg, [csv_path.name, meta_path.name]))

    print(f"{n_nets} networks, worst relative error {worst:.3e} (tolerance {tol:g})")
    if worst > tol:
        print("equivalence violated: jump semantics diverge from the dense network", file=sys.stderr)
        return EXIT_VIOLATION
    return EXIT_OK


# ---------------------------------------------------------------------------
# entry point


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="path to the JSON run config")
    common.add_argument("--out", default=".", help="output directory (default: cwd)")
    common.add_argument("--seed", type=int, default=None, help="override the config seed")
    common.add_argument(
        "--threads", type=int, default=1,
        help="worker cap; computation is sequential, 1 guarantees bit-reproducibility",
    )
    common.add_argument(
        "--allow-inf", action="store_true",
        help="accept certificates that overflowed to infinity",
    )
    common.add_argument("--force", action="store_true", help="overwrite existing reports")

    p = argparse.ArgumentParser(
        prog="lipcert",
        description="Certified parameter-Lipschitz constants for dense and controlled-ODE networks",
    )
    p.add_argument("--version", action="version", version=f"lipcert {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("certify", parents=[common], help="write certificates side by side").set_defaults(func=cmd_certify)
    sub.add_parser("verify", parents=[common], help="empirical soundness sweep").set_defaults(func=cmd_verify)
    sub.add_parser("train", parents=[common], help="certified-step training run").set_defaults(func=cmd_train)
    code = sub.add_parser("code", help="controlled-ODE workflows")
    csub = code.add_subparsers(dest="subcommand", required=True)
    csub.add_parser("certify", parents=[common], help="Grönwall certificate from envelopes").set_defaults(func=cmd_code_certify)
    csub.add_parser("verify", parents=[common], help="sampled state/sensitivity soundness").set_defaults(func=cmd_code_verify)
    csub.add_parser("equivalence", parents=[common], help="dense network vs jump encoding").set_defaults(func=cmd_code_equivalence)
    return p


def main(argv=None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    if args.threads < 1:
        print("error: --threads must be at least 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg = {**cfg, "seed": args.seed}
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        return args.func(cfg, args, out)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OverflowGate as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_OVERFLOW


if __name__ == "__main__":
    sys.exit(main())
