"""Experiment configuration: one JSON file wiring model, training, and
evaluation settings, hashed so reports can reference the exact setup."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

from .likelihood import NllConfig
from .model import HorizonConfig, ModelConfig
from .solver import SolverConfig
from .training import TrainConfig


@dataclass
class ExperimentConfig:
    model: ModelConfig
    train: TrainConfig = field(default_factory=TrainConfig)
    nll: NllConfig = field(default_factory=NllConfig)
    density_solver: SolverConfig = SolverConfig("rk4", 64)
    horizon: HorizonConfig = field(default_factory=HorizonConfig)
    bootstrap_resamples: int = 1000
    seed: int = 0

    def to_dict(self) -> dict:
        return {
            "model": self.model.to_dict(),
            "train": self.train.to_dict(),
            "eval": {
                "lambda_method": self.nll.lambda_solver.method,
                "lambda_steps": self.nll.lambda_solver.steps_per_interval,
                "mark_method": self.nll.mark_solver.method,
                "mark_steps": self.nll.mark_solver.steps_per_interval,
                "density_method": self.density_solver.method,
                "density_steps": self.density_solver.steps_per_interval,
                "bootstrap": self.bootstrap_resamples,
            },
            "horizon": {
                "mu_tolerance": self.horizon.mu_tolerance,
                "max_gap_multiples": self.horizon.max_gap_multiples,
                "density_target": self.horizon.density_target,
                "max_density_segments": self.horizon.max_density_segments,
            },
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, blob: dict, num_marks: int | None = None) -> "ExperimentConfig":
        model_blob = dict(blob.get("model", {}))
        if num_marks is not None:
            model_blob.setdefault("num_marks", num_marks)
        ev = blob.get("eval", {})
        hz = blob.get("horizon", {})
        return cls(
            model=ModelConfig.from_dict(model_blob),
            train=TrainConfig.from_dict(blob.get("train", {})),
            nll=NllConfig(
                lambda_solver=SolverConfig(ev.get("lambda_method", "rk4"), ev.get("lambda_steps", 64)),
                mark_solver=SolverConfig(ev.get("mark_method", "euler"), ev.get("mark_steps", 16)),
            ),
            density_solver=SolverConfig(
                ev.get("density_method", "rk4"), ev.get("density_steps", 64)
            ),
            horizon=HorizonConfig(
                mu_tolerance=hz.get("mu_tolerance", 1e-4),
                max_gap_multiples=hz.get("max_gap_multiples", 10.0),
                density_target=hz.get("density_target", 0.999),
                max_density_segments=hz.get("max_density_segments", 60),
            ),
            bootstrap_resamples=ev.get("bootstrap", 1000),
            seed=blob.get("seed", 0),
        )

    @classmethod
    def load(cls, path: str, num_marks: int | None = None) -> "ExperimentConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh), num_marks=num_marks)

    def save(self, path: str) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)

    def hash(self) -> str:
        canon = json.dumps(self.to_dict(), sort_keys=True)
        return hashlib.sha256(canon.encode()).hexdigest()[:12]
