"""Error-correction pilot: pause on detection, reset to a safe pose, resume.

The monitored agent is anything with a per-frame ``(action, score)`` step:
a frozen policy with an online detector, or a scripted controller paired
with the ground-truth deviation audit (the oracle arm). On the first score
at or above the threshold the loop scripts a motion to the safe pose
(releasing any held object), tells the controller, and hands control back.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .envsuite import (STEP_BUDGET, BASE_STEP, DeviationAudit, EnvironmentSpec,
                       ScriptedController, initial_state, is_success, observe, step)


@dataclass(frozen=True)
class CorrectionConfig:
    threshold: float = 0.9
    safe_pose: tuple[float, float] = (0.5, 0.9)
    max_corrections: int = 1

    def __post_init__(self):
        if not (0.0 < self.threshold <= 1.0):
            raise ValueError("threshold must lie in (0, 1]")
        if not (0.0 <= self.safe_pose[0] <= 1.0 and 0.0 <= self.safe_pose[1] <= 1.0):
            raise ValueError("safe pose must lie inside the unit square")


@dataclass
class EpisodeRecord:
    outcome: str
    corrections: int
    steps: int
    first_score_hit: int | None


class ScriptedMonitor:
    """Scripted controller (optionally flaky) + the oracle deviation audit."""

    def __init__(self, spec: EnvironmentSpec, rng, flaky_p: float = 0.0):
        self.spec = spec
        self.controller = ScriptedController(spec, rng, flaky_p=flaky_p)
        self.audit = DeviationAudit(spec)
        self._pending: float | None = None

    def step(self, state, obs) -> tuple[np.ndarray, float]:
        # score reflects transitions strictly before this frame, so detection
        # trails the erroneous action instead of preempting it
        score = 1.0 if self.audit.first_deviation is not None else 0.0
        action = self.controller.act(state)
        nxt = step(self.spec, state, action)
        self.audit.observe_step(state, action, nxt)
        return action, score

    @property
    def finished(self) -> bool:
        return self.controller.done

    def notify_reset(self) -> None:
        self.controller.notify_reset()
        self.audit = DeviationAudit(self.spec)


class PolicyMonitor:
    """Frozen policy acting + an online detector scoring the same features."""

    def __init__(self, probe_runner):
        self.runner = probe_runner

    def step(self, state, obs) -> tuple[np.ndarray, float]:
        return self.runner.step(obs)

    @property
    def finished(self) -> bool:
        return False

    def notify_reset(self) -> None:
        pass


def run_with_correction(monitor, spec: EnvironmentSpec, rng,
                        config: CorrectionConfig, budget: int = STEP_BUDGET,
                        enabled: bool = True) -> EpisodeRecord:
    """One closed-loop episode; with ``enabled=False`` (or max_corrections=0)
    this is exactly the uncorrected run."""
    state = initial_state(spec, rng)
    corrections = 0
    first_hit = None
    safe = np.array(config.safe_pose)
    while state.steps < budget:
        obs = observe(spec, state, "agent", rng)
        action, score = monitor.step(state, obs)
        if (enabled and score >= config.threshold and corrections < config.max_corrections
                and not is_success(spec, state)):
            if first_hit is None:
                first_hit = state.steps
            corrections += 1
            state = step(spec, state, np.array([0.0, 0.0, 0.0]))  # pause: release
            while state.steps < budget and float(np.hypot(*(safe - state.eff))) > 1e-9:
                d = safe - state.eff
                dist = float(np.hypot(d[0], d[1]))
                move = d if dist <= BASE_STEP else d / dist * BASE_STEP
                state = step(spec, state, np.array([move[0], move[1], 0.0]))
            monitor.notify_reset()
            continue
        if first_hit is None and score >= config.threshold:
            first_hit = state.steps
        state = step(spec, state, action)
        if is_success(spec, state) or monitor.finished:
            break
    outcome = "success" if is_success(spec, state) else "failure"
    return EpisodeRecord(outcome=outcome, corrections=corrections,
                         steps=state.steps, first_score_hit=first_hit)


def compare_sr(paired: list[tuple[EpisodeRecord, EpisodeRecord]],
               env_ids: list[int] | None = None) -> dict:
    """Success-rate summary for (without, with) correction pairs.

    Std is across environments when env_ids are given, else across episodes.
    """
    if not paired:
        raise ValueError("no paired episodes")
    base = np.array([1.0 if a.outcome == "success" else 0.0 for a, _ in paired])
    corr = np.array([1.0 if b.outcome == "success" else 0.0 for _, b in paired])
    if env_ids is not None:
        if len(env_ids) != len(paired):
            raise ValueError("env_ids must align with paired records")
        env_ids = np.asarray(env_ids)
        groups = sorted(set(env_ids.tolist()))
        base_sr = np.array([base[env_ids == e].mean() for e in groups])
        corr_sr = np.array([corr[env_ids == e].mean() for e in groups])
    else:
        base_sr, corr_sr = base, corr
    return {
        "sr_without": float(base.mean()),
        "sr_with": float(corr.mean()),
        "std_without": float(base_sr.std()),
        "std_with": float(corr_sr.std()),
        "delta": float(corr.mean() - base.mean()),
        "n_pairs": len(paired),
        "corrections": int(sum(b.corrections for _, b in paired)),
    }
