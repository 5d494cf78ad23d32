"""Experiment configuration, JSON round-trip, and seed streams."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .wgan import TrainConfig

CASES = ("case1", "case3", "custom")

# Fixed spawn keys so each stage draws from its own stream of the master seed.
STREAMS = {"data": 0, "test": 1, "init": 2, "train": 3, "observation": 4, "inference": 5, "sensors": 6, "eval": 7}


def stream(seed, name):
    """Independent generator for stage ``name`` derived from the master ``seed``."""
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(STREAMS[name],)))


@dataclass
class DataConfig:
    n_samples: int = 1000
    n_test: int = 10
    # case 1
    grid: int = 33
    sensors_per_axis: int = 9
    sensor_lo: float = 0.1
    sensor_hi: float = 0.9
    # case 3
    n_source: int = 100
    lengthscale: float = 0.2
    gp_variance: float = 1.0
    kle_energy: float = 0.999
    fine_nx: int = 100
    fine_nt: int = 100
    coarse: int = 33
    diffusion: float = 0.01
    reaction: float = 0.01
    # custom: directory holding an external bundle (and optionally <dir>_test)
    dataset_dir: str = ""


@dataclass
class GeneratorConfig:
    latent_dim: int = 3
    response_kind: str = "vanilla"  # vanilla | pod | plain
    param_kind: str = "param"  # param | vanilla | pod
    p: int = 10
    param_activation: str = "leaky_relu"
    surrogate_threshold: float = 1e-6
    surrogate_iters: int = 40000
    surrogate_lr: float = 3e-3


@dataclass
class InferenceConfig:
    noise_level: float = 0.01
    noise_mode: str = "absolute"
    sensors: str = "train"  # train | random
    n_random_sensors: int = 64
    random_time_levels: int = 21  # case 3 random layout: time step 1/20
    test_index: int = 0
    map_iters: int = 1000
    map_lr: float = 0.05
    map_starts: int = 5
    n_samples: int = 10000
    burn_in: int = 5000
    initial_scale: float = 0.1
    adapt_every: int = 100
    n_fake: int = 2000
    report_grid: int = 33


@dataclass
class ExperimentConfig:
    case: str = "case1"
    seed: int = 0
    out: str = "runs/case1"
    data: DataConfig = field(default_factory=DataConfig)
    generator: GeneratorConfig = field(default_factory=GeneratorConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    inference: InferenceConfig = field(default_factory=InferenceConfig)

    def __post_init__(self):
        if self.case not in CASES:
            raise ValueError(f"unknown case {self.case!r}; expected one of {CASES}")

    @classmethod
    def defaults(cls, case="case1"):
        """Reference-scale settings per case, with a desk-scale epoch budget."""
        if case == "case3":
            return cls(
                case="case3",
                out="runs/case3",
                data=DataConfig(n_samples=2000),
                generator=GeneratorConfig(latent_dim=6, param_kind="vanilla", surrogate_threshold=1e-6),
                train=TrainConfig(batch_size=500),
                inference=InferenceConfig(noise_level=0.1, n_random_sensors=13),
            )
        return cls(case=case, out=f"runs/{case}")

    def to_dict(self):
        d = asdict(self)
        d["train"] = self.train.as_dict()
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        base = cls.defaults(d.get("case", "case1"))
        parts = {}
        for f in fields(cls):
            if f.name not in d:
                continue
            value = d[f.name]
            sub = getattr(base, f.name)
            if isinstance(value, dict):
                known = {g.name for g in fields(sub)}
                unknown = set(value) - known
                if unknown:
                    raise ValueError(f"unknown {f.name} keys: {sorted(unknown)}")
                merged = asdict(sub)
                merged.update(value)
                parts[f.name] = type(sub)(**merged)
            else:
                parts[f.name] = value
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        merged = {f.name: getattr(base, f.name) for f in fields(cls)}
        merged.update(parts)
        return cls(**merged)

    def dumps(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def loads(cls, text):
        return cls.from_dict(json.loads(text))

    def save(self, path):
        Path(path).write_text(self.dumps() + "\n")

    @classmethod
    def load(cls, path):
        return cls.loads(Path(path).read_text())
