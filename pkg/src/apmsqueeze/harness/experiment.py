"""Run driver: executes configs, writes metrics and summaries, compares variants."""
from __future__ import annotations

import csv
import json
import math
import os

import numpy as np

from ..collective import identity_bits_per_step
from ..compression import CompressorKind
from ..exceptions import ConfigError
from ..metrics import write_csv
from ..optimizer import Phase, Variant, run
from ..problems import measure_variance
from .config import RunConfig

VARIANTS = ("identity", "onebit", "topk", "stochastic_quant", "gradient_compression")


def horizon_step_size(smoothness, sigma, eps, v_min, t_total, n_workers) -> float:
    """Constant step size of the form ``1 / (4L/v_min + sigma*sqrt(T/n) + eps^(2/3) T^(1/3) / v_min)``."""
    return 1.0 / (
        4.0 * smoothness / v_min
        + sigma * math.sqrt(t_total / n_workers)
        + eps ** (2.0 / 3.0) * t_total ** (1.0 / 3.0) / v_min
    )


def diagnostics(cfg: RunConfig, problem, result) -> dict:
    """Theory-side quantities measured on a finished run.

    ``eps`` is twice the largest residual-norm sum seen on either side, the
    smallest constant for which the bounded-error assumption held along this
    trajectory.
    """
    state = result.state
    recs = [r for r in result.records if r.phase == Phase.SQUEEZE.value]
    eps_w = max((r.eps_worker for r in recs), default=0.0)
    eps_s = max((r.eps_server for r in recs), default=0.0)
    out = {
        "eps_worker_max": eps_w,
        "eps_server_max": eps_s,
        "eps": 2.0 * max(eps_w, eps_s),
        "v_min": float(np.min(state.v_frozen)) if state.v_frozen is not None else None,
        "sqrt_v_min": float(np.sqrt(np.min(state.v_frozen))) if state.v_frozen is not None else None,
        "smoothness_L": problem.smoothness() if hasattr(problem, "smoothness") else None,
        "f_star": problem.known_optimum,
        "sigma2": None,
    }
    if cfg.sigma_draws >= 2 and cfg.batch_size is not None:
        est = measure_variance(problem, state.x, cfg.sigma_draws, seed=cfg.seed)
        out["sigma2"] = est.max_sigma2
    return out


def summarize(cfg: RunConfig, problem, result) -> dict:
    d, n = problem.dim, cfg.n_workers
    squeeze = [r for r in result.records if r.phase == Phase.SQUEEZE.value]
    squeeze_bits = sum(r.bits_step for r in squeeze)
    per_step = squeeze_bits / len(squeeze) if squeeze else 0.0
    ident64 = identity_bits_per_step(d, n, 64)
    ident32 = identity_bits_per_step(d, n, 32)
    spec = cfg.compressor_spec()
    notes = []
    if spec.kind is CompressorKind.TOP_K:
        notes.append(
            "top-k sends a 32-bit index and a 64-bit value per kept entry, so the bit ratio is about "
            "3x the kept-element fraction against a float32 baseline"
        )
    if n == 1:
        notes.append("single worker: no cross-worker traffic, ratios are undefined")
    return {
        "problem": cfg.problem,
        "compressor": spec.name,
        "n_workers": n,
        "dim": d,
        "t_warmup": cfg.t_warmup,
        "t_total": cfg.t_total,
        "seed": cfg.seed,
        "final_loss": result.final_loss,
        "final_grad_norm_sq": result.final_grad_norm_sq,
        "total_bits": result.total_bits,
        "squeeze_bits": squeeze_bits,
        "bits_per_squeeze_step": per_step,
        "identity_bits_per_step_f64": ident64,
        "identity_bits_per_step_f32": ident32,
        "compression_ratio_vs_identity": per_step / ident64 if ident64 else None,
        "compression_ratio_vs_float32": per_step / ident32 if ident32 else None,
        "diagnostics": diagnostics(cfg, problem, result),
        "notes": notes,
    }


def execute(cfg: RunConfig, variant: Variant = Variant.MOMENTUM, problem=None):
    problem = cfg.build_problem() if problem is None else problem
    result = run(cfg.optimizer_config(), problem, cfg.n_workers, cfg.seed, variant=variant,
                 record_wall_time=cfg.record_wall_time)
    return problem, result


def _dump_json(path, payload):
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True, allow_nan=True)
        fh.write("\n")


def run_and_write(cfg: RunConfig, output_dir=None) -> dict:
    """Execute ``cfg`` and write ``metrics.csv`` and ``summary.json``; return the summary."""
    out = output_dir or cfg.resolved_output_dir()
    os.makedirs(out, exist_ok=True)
    problem, result = execute(cfg)
    write_csv(os.path.join(out, "metrics.csv"), result.records, cfg.eval_every)
    summary = summarize(cfg, problem, result)
    _dump_json(os.path.join(out, "summary.json"), summary)
    return summary


def parse_variant(name: str, cfg: RunConfig) -> tuple[str, RunConfig, Variant]:
    key = name.lower().replace("-", "_")
    if key in ("gradient_compression", "apgsqueeze", "gradient"):
        base = cfg.compressor if CompressorKind.parse(cfg.compressor) is not CompressorKind.IDENTITY else "onebit"
        return "gradient_compression", cfg.with_changes(compressor=base), Variant.GRADIENT
    try:
        kind = CompressorKind.parse(key)
    except ConfigError:
        raise ConfigError(f"unknown variant {name!r}; choose from {', '.join(VARIANTS)}") from None
    label = {
        CompressorKind.IDENTITY: "identity",
        CompressorKind.ONE_BIT: "onebit",
        CompressorKind.TOP_K: "topk",
        CompressorKind.STOCHASTIC_QUANT: "stochastic_quant",
    }[kind]
    return label, cfg.with_changes(compressor=label), Variant.MOMENTUM


def compare(cfg: RunConfig, variants, output_dir=None) -> dict:
    """Run each variant with identical data, seeds and warmup; write aligned per-step columns."""
    if len(variants) < 2:
        raise ConfigError("compare needs at least two variants")
    parsed = [parse_variant(v, cfg) for v in variants]
    labels = [p[0] for p in parsed]
    if len(set(labels)) != len(labels):
        raise ConfigError("duplicate variants")
    problem = cfg.build_problem()
    results = {}
    for label, vcfg, variant in parsed:
        _, results[label] = execute(vcfg, variant, problem=problem)

    out = output_dir or cfg.resolved_output_dir()
    os.makedirs(out, exist_ok=True)
    header = ["t", "phase"]
    for label in labels:
        header += [f"loss_{label}", f"grad_norm_sq_{label}", f"bits_cum_{label}"]
    first = results[labels[0]].records
    with open(os.path.join(out, "comparison.csv"), "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for j, rec in enumerate(first):
            if rec.t % cfg.eval_every and j != len(first) - 1:
                continue
            row = [rec.t, rec.phase]
            for label in labels:
                r = results[label].records[j]
                row += [repr(r.loss), repr(r.grad_norm_sq), r.bits_cum]
            writer.writerow(row)

    reference = "identity" if "identity" in results else labels[0]
    ref_loss = results[reference].final_loss
    summary = {
        "reference": reference,
        "variants": {
            label: {
                "final_loss": res.final_loss,
                "final_grad_norm_sq": res.final_grad_norm_sq,
                "total_bits": res.total_bits,
                "relative_loss_gap": (res.final_loss - ref_loss) / abs(ref_loss) if ref_loss else None,
            }
            for label, res in results.items()
        },
    }
    _dump_json(os.path.join(out, "comparison.json"), summary)
    return summary

