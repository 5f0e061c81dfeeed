"""Line-delimited rollout datasets and their sidecar manifest.

One JSON object per line: env id, producer, outcome, onset, and the frame
array as [observation, action, label] triples. ``json.dumps`` uses float
repr, so identical data serializes to identical bytes.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np

from .envsuite import Frame, Rollout


def rollout_to_json(r: Rollout) -> str:
    rec = {
        "env": r.env_id,
        "producer": r.producer,
        "outcome": r.outcome,
        "onset": r.onset,
        "frames": [[f.obs.tolist(), f.action.tolist(), int(f.label)] for f in r.frames],
    }
    return json.dumps(rec, separators=(",", ":"))


def rollout_from_json(line: str) -> Rollout:
    rec = json.loads(line)
    frames = [Frame(obs=np.array(o, dtype=np.float64),
                    action=np.array(a, dtype=np.float64), label=int(lab))
              for o, a, lab in rec["frames"]]
    return Rollout(frames=frames, outcome=rec["outcome"], onset=rec["onset"],
                   env_id=rec["env"], producer=rec["producer"])


def save_rollouts(path, rollouts) -> None:
    path = Path(path)
    with open(path, "w", encoding="utf-8") as f:
        for r in rollouts:
            f.write(rollout_to_json(r))
            f.write("\n")


def load_rollouts(path) -> list[Rollout]:
    with open(path, encoding="utf-8") as f:
        return [rollout_from_json(line) for line in f if line.strip()]


def config_hash(cfg_dict: dict) -> str:
    return hashlib.sha256(json.dumps(cfg_dict, sort_keys=True).encode()).hexdigest()[:16]


def write_manifest(path, cfg_dict: dict, extra: dict | None = None) -> None:
    doc = {"config": cfg_dict, "config_hash": config_hash(cfg_dict)}
    if extra:
        doc.update(extra)
    Path(path).write_text(json.dumps(doc, sort_keys=True, indent=1) + "\n", encoding="utf-8")


def read_manifest(path) -> dict:
    return json.loads(Path(path).read_text(encoding="utf-8"))
