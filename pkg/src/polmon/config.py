"""Experiment configuration: one dataclass, serialized verbatim into every
output manifest so a run can be reproduced from its artifacts."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path


@dataclass
class ExperimentConfig:
    # suite
    task: str = "pick_place"
    n_base: int = 24
    n_novel: int = 8
    obs_dim: int = 32
    noise_scale: float = 0.01
    env_variation: float = 0.25
    # datasets
    demos_per_env: int = 6
    succ_per_env: int = 12
    fail_per_env: int = 12
    heldout_per_class: int = 2
    demo_quality: str = "optimal"          # optimal | mixed | suboptimal
    # policies / detectors
    policies: tuple = ("scan",)
    detectors: tuple = ("probe", "svdded", "taskembed", "lstmed", "dcted")
    feature: int = 64
    hidden: int = 64
    policy_epochs: int = 60
    detector_epochs: int = 30
    lr: float = 1e-4
    l2: float = 1e-2
    # augmentation
    augment: bool = True
    aug_probs: tuple = (0.3, 0.3, 0.2, 0.2)
    # probe objectives
    lam_pat: float = 0.1
    lam_tem: float = 0.5
    lam_cls: float = 1.0
    margin: float = 1.0
    alpha: float = 0.1
    clip_frames: int = 10
    triplets: int = 32
    # evaluation
    seeds: tuple = (0, 1, 2)
    eval_rollouts_per_env: int = 20
    accuracy_threshold: float = 0.5
    fpr_target: float = 0.05
    perturb_scale: float = 0.0
    # correction pilot
    correction_threshold: float = 0.9
    correction_pairs: int = 200
    flaky_p: float = 0.3

    def to_dict(self) -> dict:
        d = asdict(self)
        for k, v in d.items():
            if isinstance(v, tuple):
                d[k] = list(v)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        known = {f.name: f for f in fields(cls)}
        unknown = set(d) - set(known)
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        kwargs = {}
        for k, v in d.items():
            if isinstance(v, list):
                v = tuple(v)
            kwargs[k] = v
        return cls(**kwargs)

    @classmethod
    def from_file(cls, path) -> "ExperimentConfig":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), sort_keys=True, indent=1) + "\n",
                              encoding="utf-8")
