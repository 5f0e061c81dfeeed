"""Per-frame rollout resampling: keep / drop / swap / copy.

Applied to collected agent rollouts before detector training so detectors
see sped-up, slowed-down, and locally reordered variants of the same
behavior. Frames travel as units: observation, action, and label stay
together under every operation. Failed rollouts always keep at least one
error-labeled frame.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .envsuite import ERROR, Rollout

OPS = ("keep", "drop", "swap", "copy")


@dataclass(frozen=True)
class AugmentConfig:
    p_keep: float = 0.3
    p_drop: float = 0.3
    p_swap: float = 0.2
    p_copy: float = 0.2

    def probs(self) -> np.ndarray:
        p = np.array([self.p_keep, self.p_drop, self.p_swap, self.p_copy])
        if abs(float(p.sum()) - 1.0) > 1e-9 or (p < 0).any():
            raise ValueError(f"op probabilities must be nonnegative and sum to 1, got {p}")
        return p


def augment_rollout(rollout: Rollout, config: AugmentConfig,
                    rng: np.random.Generator, stats: dict | None = None) -> Rollout:
    """One augmentation draw. ``stats`` (optional) counts drawn ops.

    swap exchanges a frame with the next not-yet-emitted frame, i.e. emits
    the pair in reversed order and consumes both. A drop that would remove
    the last remaining error frame of a failed rollout is forced to keep,
    and an all-dropped output degenerates to keeping the final frame.
    """
    n = len(rollout.frames)
    if n < 2:
        raise ValueError(f"rollout too short to augment (length {n})")
    cum = np.cumsum(config.probs())
    draws = np.searchsorted(cum, rng.random(n), side="right")
    frames = rollout.frames
    labels = rollout.labels
    err_total = int((labels == ERROR).sum())

    out: list = []
    out_err = 0
    err_seen = 0
    i = 0
    d = 0
    while i < n:
        op = OPS[min(int(draws[d]), 3)]
        d += 1
        if stats is not None:
            stats[op] = stats.get(op, 0) + 1
        is_err = labels[i] == ERROR
        if op == "drop" and is_err and out_err == 0 and err_seen + 1 == err_total:
            op = "keep"  # preserve the final error frame
        if op == "swap" and i + 1 >= n:
            op = "keep"
        if op == "keep":
            out.append(frames[i])
            out_err += int(is_err)
        elif op == "copy":
            out.append(frames[i])
            out.append(frames[i])
            out_err += 2 * int(is_err)
        elif op == "swap":
            nxt_err = labels[i + 1] == ERROR
            out.append(frames[i + 1])
            out.append(frames[i])
            out_err += int(is_err) + int(nxt_err)
            err_seen += int(nxt_err)
            i += 1
        err_seen += int(is_err)
        i += 1
    if not out:
        out = [frames[-1]]
    if rollout.outcome == "failure" and not any(f.label == ERROR for f in out):
        out.append(frames[-1])  # generated failures end on an error frame

    onset = None
    if rollout.outcome == "failure":
        onset = next(i for i, f in enumerate(out) if f.label == ERROR)
    return Rollout(frames=out, outcome=rollout.outcome, onset=onset,
                   env_id=rollout.env_id, producer=rollout.producer)
