"""Flat JSON run configuration."""
from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, fields

from ..compression import CompressorSpec
from ..exceptions import ConfigError
from ..optimizer import OptimizerConfig, step_decay
from ..problems import load_csv, make_least_squares, make_logistic, make_tiny_mlp

OUTPUT_DIR_ENV = "APMSQUEEZE_OUTPUT_DIR"

PROBLEM_KINDS = ("logistic", "least_squares", "tiny_mlp")


@dataclass
class RunConfig:
    # problem
    problem: str = "logistic"
    n_samples: int = 4000
    dim: int = 200  # parameter count for linear problems, input width for tiny_mlp
    hidden: int = 16
    label_noise: float = 0.0
    noise: float = 0.1
    l2: float = 0.0
    data_csv: str | None = None
    # distribution
    n_workers: int = 8
    batch_size: int | None = 32
    # optimizer
    lr: float = 1e-3
    lr_decay_every: int | None = None
    lr_decay_factor: float = 0.1
    beta1: float = 0.9
    beta2: float = 0.999
    eta: float = 1e-8
    eta_floor: float = 1e-8
    t_warmup: int = 100
    t_total: int = 1000
    compressor: str = "onebit"
    k_percent: float = 10.0
    levels: int = 4
    freeze_bias_corrected: bool = False
    # harness
    seed: int = 0
    eval_every: int = 1
    output_dir: str = "out"
    record_wall_time: bool = False
    sigma_draws: int = 200

    def __post_init__(self):
        if self.problem not in PROBLEM_KINDS:
            raise ConfigError(f"problem must be one of {PROBLEM_KINDS}, got {self.problem!r}")
        if self.n_workers < 1:
            raise ConfigError("n_workers must be at least 1")
        if self.eval_every < 1:
            raise ConfigError("eval_every must be at least 1")
        if self.sigma_draws < 0:
            raise ConfigError("sigma_draws must be non-negative")
        self.compressor_spec()
        self.optimizer_config()

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        try:
            return cls(**data)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            with open(path) as fh:
                data = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        return cls.from_dict(data)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def with_changes(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)

    def resolved_output_dir(self) -> str:
        return os.environ.get(OUTPUT_DIR_ENV) or self.output_dir

    def compressor_spec(self) -> CompressorSpec:
        return CompressorSpec(self.compressor, k_percent=self.k_percent, levels=self.levels, seed=self.seed)

    def optimizer_config(self) -> OptimizerConfig:
        lr = self.lr
        if self.lr_decay_every:
            lr = step_decay(self.lr, self.lr_decay_every, self.lr_decay_factor)
        return OptimizerConfig(
            lr=lr,
            beta1=self.beta1,
            beta2=self.beta2,
            eta=self.eta,
            eta_floor=self.eta_floor,
            t_warmup=self.t_warmup,
            t_total=self.t_total,
            compressor=self.compressor_spec(),
            freeze_bias_corrected=self.freeze_bias_corrected,
        )

    def build_problem(self):
        if self.data_csv:
            extra = {"hidden": self.hidden} if self.problem == "tiny_mlp" else {}
            if self.problem == "logistic":
                extra["l2"] = self.l2
            return load_csv(self.data_csv, self.problem, self.n_workers, self.batch_size, self.seed, **extra)
        if self.problem == "logistic":
            return make_logistic(self.n_samples, self.dim, self.n_workers, self.batch_size,
                                 label_noise=self.label_noise, l2=self.l2, seed=self.seed)
        if self.problem == "least_squares":
            return make_least_squares(self.n_samples, self.dim, self.n_workers, self.batch_size,
                                      noise=self.noise, seed=self.seed)
        return make_tiny_mlp(self.n_samples, self.dim, self.hidden, self.n_workers, self.batch_size, seed=self.seed)
