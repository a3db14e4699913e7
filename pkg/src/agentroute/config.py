"""Run configuration: one JSON file describing benchmark, env, and training.

Unknown keys are rejected everywhere so typos fail loudly instead of
silently running defaults. The resolved configuration (every default made
explicit) is written next to training artifacts for reproducibility.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .backend import (Benchmark, BenchmarkSpec, KINDS, load_catalog,
                      make_benchmark)
from .env import EnvConfig
from .ppo import TrainConfig

BENCHMARK_KEYS = {
    "kind", "families", "queries_per_family", "width_profile", "seed",
    "k_models", "d_q", "d_hub", "difficulty", "noise_sigma", "margin",
    "skill_overrides", "catalog",
}
EVAL_KEYS = {"protocol", "episodes", "seed", "absorb"}
TOP_KEYS = {"benchmark", "env", "train", "eval"}


def _check_keys(obj: dict, allowed: set, where: str) -> None:
    if not isinstance(obj, dict):
        raise ValueError(f"{where} must be a JSON object")
    unknown = sorted(set(obj) - allowed)
    if unknown:
        raise ValueError(f"unknown keys in {where}: {unknown}")


@dataclass
class RunConfig:
    benchmark: dict = field(default_factory=dict)
    env: dict = field(default_factory=dict)
    train: dict = field(default_factory=dict)
    eval: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, obj: dict) -> "RunConfig":
        _check_keys(obj, TOP_KEYS, "config")
        benchmark = dict(obj.get("benchmark", {}))
        env = dict(obj.get("env", {}))
        train = dict(obj.get("train", {}))
        ev = dict(obj.get("eval", {}))

        _check_keys(benchmark, BENCHMARK_KEYS, "benchmark")
        env_allowed = {f.name for f in fields(EnvConfig)} - {"n_models"}
        _check_keys(env, env_allowed, "env")
        train_allowed = {f.name for f in fields(TrainConfig)}
        _check_keys(train, train_allowed, "train")
        _check_keys(ev, EVAL_KEYS, "eval")
        if benchmark.get("kind", "separable") not in KINDS:
            raise ValueError(f"unknown benchmark kind: {benchmark.get('kind')!r}")
        return cls(benchmark=benchmark, env=env, train=train, eval=ev)

    @classmethod
    def load(cls, path: str | Path) -> "RunConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    # -- builders -----------------------------------------------------------------

    def make_spec(self) -> BenchmarkSpec:
        b = self.benchmark
        families = b.get("families", 3)
        if isinstance(families, int):
            families = tuple(range(families))
        return BenchmarkSpec(
            kind=b.get("kind", "separable"),
            families=tuple(families),
            queries_per_family=b.get("queries_per_family", 100),
            width_profile=tuple(b.get("width_profile", (2, 3))),
            seed=b.get("seed", 0),
        )

    def make_benchmark(self) -> Benchmark:
        b = self.benchmark
        catalog = None
        if b.get("catalog"):
            catalog = load_catalog(b["catalog"])
        overrides = b.get("skill_overrides")
        return make_benchmark(
            self.make_spec(),
            k_models=b.get("k_models", 4),
            d_q=b.get("d_q", 64),
            d_hub=b.get("d_hub", 64),
            catalog=catalog,
            difficulty=tuple(b.get("difficulty", (0.1, 0.5))),
            noise_sigma=b.get("noise_sigma", 0.05),
            margin=b.get("margin", 0.2),
            skill_overrides=overrides,
        )

    def make_env_cfg(self) -> EnvConfig:
        return EnvConfig(n_models=self.benchmark.get("k_models", 4), **self.env)

    def make_train_cfg(self, seed: int | None = None,
                       workers: int | None = None) -> TrainConfig:
        kw = dict(self.train)
        if seed is not None:
            kw["seed"] = seed
        if workers is not None:
            kw["workers"] = workers
        return TrainConfig(**kw)

    def resolved(self) -> dict:
        """Every default made explicit; stable across identical inputs."""
        return {
            "benchmark": {**asdict(self.make_spec()),
                          "k_models": self.benchmark.get("k_models", 4),
                          "d_q": self.benchmark.get("d_q", 64),
                          "d_hub": self.benchmark.get("d_hub", 64),
                          "difficulty": list(self.benchmark.get("difficulty", (0.1, 0.5))),
                          "noise_sigma": self.benchmark.get("noise_sigma", 0.05),
                          "margin": self.benchmark.get("margin", 0.2),
                          "skill_overrides": self.benchmark.get("skill_overrides"),
                          "catalog": self.benchmark.get("catalog")},
            "env": asdict(self.make_env_cfg()),
            "train": asdict(self.make_train_cfg()),
            "eval": {"protocol": self.eval.get("protocol", "inductive"),
                     "episodes": self.eval.get("episodes", 30),
                     "seed": self.eval.get("seed", 0),
                     "absorb": self.eval.get("absorb", True)},
        }

    def dump_resolved(self, path: str | Path) -> None:
        blob = self.resolved()
        for sect in ("benchmark", "env", "train", "eval"):
            for k, v in blob[sect].items():
                if isinstance(v, tuple):
                    blob[sect][k] = list(v)
        with open(path, "w") as fh:
            json.dump(blob, fh, sort_keys=True, indent=2)
