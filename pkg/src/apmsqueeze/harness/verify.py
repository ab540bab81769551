"""Invariant suites runnable from the command line.

Each suite returns a list of :class:`Check` objects recording the tolerance,
the worst observed value and the configuration that produced it.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .. import rng as rngmod
from ..collective import CollectiveState, compressed_allreduce
from ..compression import (
    CompressorSpec,
    ErrorState,
    compress,
    compress_with_error_feedback,
    decompress,
    deserialize,
    serialize,
    topk_count,
)
from ..optimizer import OptimizerConfig, OptimizerState, Phase, run, squeeze_step
from ..problems import averaged_gradient_variance, make_least_squares, make_logistic, make_tiny_mlp

SUITES = ("updating_form", "identity_equiv", "codec_contracts", "variance_scaling", "finite_diff")

ALL_COMPRESSORS = (
    CompressorSpec("identity"),
    CompressorSpec("onebit"),
    CompressorSpec("topk", k_percent=10.0),
    CompressorSpec("stochastic_quant", levels=4),
)


@dataclass
class Check:
    name: str
    config: str
    observed: float
    tolerance: float
    passed: bool

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"[{status}] {self.name:<28} {self.config:<42} observed={self.observed:.3e} tol={self.tolerance:.1e}"


def _upper(name, config, observed, tol):
    return Check(name, config, float(observed), tol, bool(observed < tol))


def updating_form_deviation(spec: CompressorSpec, n: int, d: int, steps: int = 200, beta: float = 0.9,
                            seed: int = 0) -> float:
    """Largest per-element gap between the realised momentum and the closed-form recursion.

    Drives :func:`squeeze_step` with random gradients and checks, at every step,
    ``m_t == beta m_{t-1} + (1 - beta) mean(g_t) + e_{t-1} - e_t`` where ``e`` is
    the mean worker residual plus the server residual.
    """
    cfg = OptimizerConfig(lr=1e-3, beta1=beta, t_warmup=1, t_total=steps + 1, compressor=spec)
    state = OptimizerState.initial(np.zeros(d))
    state.phase, state.v_frozen = Phase.SQUEEZE, np.ones(d)
    coll = CollectiveState(n, d, spec)
    g = rngmod.stream(seed, rngmod.PROBE, n, d)
    err_prev = coll.global_error()
    worst = 0.0
    for _ in range(steps):
        grads = [g.normal(size=d) for _ in range(n)]
        m_prev = state.m.copy()
        squeeze_step(cfg, state, coll, grads)
        err = coll.global_error()
        expected = beta * m_prev + (1 - beta) * (sum(grads) / n) + err_prev - err
        if d:
            worst = max(worst, float(np.max(np.abs(state.m - expected))))
        err_prev = err
    return worst


def suite_updating_form(ns=(1, 2, 4, 8), dims=(7, 64, 1000), compressors=ALL_COMPRESSORS, steps=200, seed=0):
    checks = []
    for spec, n, d in itertools.product(compressors, ns, dims):
        dev = updating_form_deviation(spec, n, d, steps, seed=seed)
        checks.append(_upper("updating_form", f"{spec.name} n={n} d={d} T={steps}", dev, 1e-10))
    return checks


def uncompressed_reference(cfg: OptimizerConfig, problem, seed: int) -> np.ndarray:
    """Adam warmup then momentum SGD with frozen variance and exact averaging; returns final x."""
    n = problem.n_workers
    x = problem.initial_point().astype(np.float64)
    m = np.zeros_like(x)
    v = np.zeros_like(x)
    denom = None
    for t in range(cfg.t_total):
        gbar = np.mean([problem.sample_gradient(i, x, rngmod.stream(seed, rngmod.SAMPLING, i, t)).gradient
                        for i in range(n)], axis=0)
        m = cfg.beta1 * m + (1 - cfg.beta1) * gbar
        if t < cfg.t_warmup:
            v = cfg.beta2 * v + (1 - cfg.beta2) * gbar**2
            mh = m / (1 - cfg.beta1 ** (t + 1))
            vh = v / (1 - cfg.beta2 ** (t + 1))
            x = x - cfg.gamma(t) * mh / (np.sqrt(vh) + cfg.eta)
            if t + 1 == cfg.t_warmup:
                denom = np.maximum(np.sqrt(vh if cfg.freeze_bias_corrected else v), cfg.eta_floor)
        else:
            x = x - cfg.gamma(t) * m / denom
    return x


def suite_identity_equiv(seed=0, steps=2000):
    checks = []
    spec = CompressorSpec("identity")
    g = rngmod.stream(seed, rngmod.PROBE, 99)
    for n, d in itertools.product((1, 2, 4, 8), (7, 64, 1000)):
        coll = CollectiveState(n, d, spec)
        worst = 0.0
        for _ in range(20):
            inputs = [g.normal(size=d) for _ in range(n)]
            out = compressed_allreduce(coll, inputs)
            worst = max(worst, float(np.max(np.abs(out - np.mean(inputs, axis=0)))))
        residual = float(np.max(np.abs(coll.global_error()), initial=0.0))
        checks.append(_upper("identity_allreduce_mean", f"n={n} d={d}", worst, 1e-14))
        checks.append(Check("identity_residuals_zero", f"n={n} d={d}", residual, 0.0, residual == 0.0))

    problem = make_logistic(800, 20, 4, batch_size=16, seed=seed)
    cfg = OptimizerConfig(lr=1e-2, t_warmup=50, t_total=steps, compressor=spec)
    res = run(cfg, problem, seed=seed, probes=False)
    ref = uncompressed_reference(cfg, problem, seed)
    checks.append(_upper("identity_vs_uncompressed", f"logistic n=4 d=20 T={steps}",
                         np.max(np.abs(res.state.x - ref)), 1e-12))
    return checks


def suite_codec_contracts(seed=0):
    checks = []
    g = rngmod.stream(seed, rngmod.PROBE, 7)
    for spec in ALL_COMPRESSORS:
        for length in (0, 1, 5, 64, 333):
            state = ErrorState(length)
            state.residual[:] = g.normal(size=length)
            worst = 0.0
            for step in range(20):
                x = g.normal(size=length) * 3
                before = state.residual.copy()
                chunk = compress_with_error_feedback(spec, x, state, rngmod.stream(seed, 5, step))
                lhs = decompress(chunk) + state.residual
                worst = max(worst, float(np.max(np.abs(lhs - (x + before)), initial=0.0)))
                data = serialize(chunk)
                back = deserialize(data, levels=spec.levels)
                if not np.array_equal(decompress(back), decompress(chunk)):
                    worst = np.inf
                if len(data) != 9 + (chunk.wire_bits + 7) // 8:
                    worst = np.inf
            checks.append(_upper("error_feedback_identity", f"{spec.name} len={length}", worst, 1e-14))

    spec = CompressorSpec("topk", k_percent=10.0)
    bad = 0
    for length in (1, 9, 10, 11, 100, 1000):
        x = g.normal(size=length)
        out = decompress(compress(spec, x))
        kept = np.flatnonzero(out)
        dropped = np.setdiff1d(np.arange(length), kept)
        if len(kept) != topk_count(10.0, length):
            bad += 1
        if len(dropped) and np.min(np.abs(x[kept])) < np.max(np.abs(x[dropped])):
            bad += 1
    checks.append(Check("topk_count_and_order", "k=10%", float(bad), 0.0, bad == 0))

    x = g.normal(size=500)
    out = decompress(compress(CompressorSpec("onebit"), x))
    wrong = int(np.sum(np.sign(out[x != 0]) != np.sign(x[x != 0])))
    checks.append(Check("onebit_signs", "len=500", float(wrong), 0.0, wrong == 0))

    spec = CompressorSpec("stochastic_quant", levels=4)
    x = g.normal(size=16)
    draws = 20000
    gen = rngmod.stream(seed, 6)
    samples = np.stack([decompress(compress(spec, x, gen)) for _ in range(draws)])
    se = samples.std(axis=0, ddof=1) / np.sqrt(draws)
    gap = np.abs(samples.mean(axis=0) - x)
    # coordinates at +-max|x| are deterministic; judge those by absolute error
    random = se > 1e-12
    z = np.max(gap[random] / se[random]) if np.all(gap[~random] < 1e-12) else np.inf
    checks.append(_upper("quant_unbiased_z", f"levels=4 draws={draws}", z, 3.0 + 1e-12))
    return checks


def suite_variance_scaling(ns=(2, 4, 8), draws=10000, seed=0):
    checks = []
    for n in ns:
        problem = make_logistic(4000, 50, n, batch_size=8, seed=seed)
        x = rngmod.stream(seed, rngmod.PROBE, 11).normal(size=problem.dim) * 0.1
        var_avg, var_one = averaged_gradient_variance(problem, x, draws, seed=seed)
        ratio = var_avg / var_one * n
        ok = 0.8 <= ratio <= 1.2
        checks.append(Check("variance_ratio_times_n", f"n={n} draws={draws}", ratio, 0.2, ok))
    return checks


def central_difference_error(problem, x, h=1e-5) -> float:
    """Worst relative error of the analytic gradient against central differences."""
    grad, _ = problem.full_gradient_and_loss(x)
    fd = np.empty_like(x)
    for j in range(x.shape[0]):
        e = np.zeros_like(x)
        e[j] = h
        fd[j] = (problem.loss(x + e) - problem.loss(x - e)) / (2 * h)
    scale = max(1.0, float(np.max(np.abs(grad))))
    return float(np.max(np.abs(fd - grad)) / scale)


def suite_finite_diff(seed=0):
    g = rngmod.stream(seed, rngmod.PROBE, 13)
    problems = [
        ("least_squares", make_least_squares(200, 12, 2, seed=seed)),
        ("logistic", make_logistic(300, 15, 3, seed=seed)),
        ("tiny_mlp", make_tiny_mlp(150, 5, 6, 2, seed=seed)),
    ]
    checks = []
    for name, problem in problems:
        x = g.normal(size=problem.dim) * 0.5
        checks.append(_upper("central_difference", f"{name} d={problem.dim} h=1e-5",
                             central_difference_error(problem, x), 1e-5))
    return checks


def run_suite(name: str, **kwargs):
    table = {
        "updating_form": suite_updating_form,
        "identity_equiv": suite_identity_equiv,
        "codec_contracts": suite_codec_contracts,
        "variance_scaling": suite_variance_scaling,
        "finite_diff": suite_finite_diff,
    }
    if name not in table:
        raise KeyError(name)
    return table[name](**kwargs)

