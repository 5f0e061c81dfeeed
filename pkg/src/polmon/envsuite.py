"""Deterministic 2-D kinematic task suite.

Three task kinds with increasing stage counts: ``press`` (1 stage),
``pick_place`` (2 stages), ``organize`` (3 stages). A suite splits into base
and novel environments whose layout ranges and projection seeds are disjoint.
Observations are lossy projections of a canonical state vector, one random
projection per environment (a shared component keeps the control problem
learnable across environments).

Expert demonstrations and intervention-labeled agent rollouts come from a
closed-loop scripted controller that re-plans from world state, which also
lets the error-correction loop resume it after a reset.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field, replace
from functools import lru_cache

import numpy as np

from .seeding import rng_for

MAX_STEP = 0.05
GRASP_RADIUS = 0.04
GRIP_WINDOW = 0.075     # experts raise grip inside this range so the trigger
RELEASE_FRACTION = 0.5  # spans several frames and stays imitable
BASE_STEP = 0.035
STEP_BUDGET = 120
SETTLE_FRAMES = 2

TASK_KINDS = ("press", "pick_place", "organize")
TASK_STAGES = {"press": 1, "pick_place": 2, "organize": 3}
INTERVENTIONS = ("none", "miss_grasp", "wrong_target", "premature_release", "incomplete_final")
APPLICABLE = {
    "press": ("none", "wrong_target", "incomplete_final"),
    "pick_place": INTERVENTIONS,
    "organize": INTERVENTIONS,
}

NORMAL, ERROR = 0, 1

_KINDS = ("button", "item", "zone")
_MAX_OBJECTS = 4
_STAGE_SLOTS = 4
STATE_DIM = 2 + _MAX_OBJECTS * (2 + len(_KINDS)) + 1 + _STAGE_SLOTS + 2
EMBODIMENTS = ("expert", "agent")


@dataclass(frozen=True)
class ObjectSpec:
    kind: str          # button | item | zone
    role: str          # target | distractor | mid
    x: float
    y: float
    radius: float


@dataclass(frozen=True)
class EnvironmentSpec:
    env_id: int
    split: str                      # base | novel
    task: str
    objects: tuple[ObjectSpec, ...]
    projection_seed: int
    suite_seed: int
    obs_dim: int = 32
    noise_scale: float = 0.01
    env_variation: float = 0.25
    embodiments: tuple[str, str] = EMBODIMENTS
    perturb_seed: int = 0
    perturb_scale: float = 0.0

    def find(self, kind: str, role: str) -> int:
        for i, o in enumerate(self.objects):
            if o.kind == kind and o.role == role:
                return i
        raise KeyError(f"no object kind={kind} role={role} in env {self.env_id}")


@dataclass(frozen=True)
class SuiteConfig:
    task: str = "pick_place"
    n_base: int = 24
    n_novel: int = 8
    obs_dim: int = 32
    noise_scale: float = 0.01
    env_variation: float = 0.25
    base_x: tuple[float, float] = (0.10, 0.45)
    novel_x: tuple[float, float] = (0.55, 0.90)
    y_range: tuple[float, float] = (0.30, 0.85)


@dataclass
class WorldState:
    eff: np.ndarray                 # (2,), in [0, 1]^2
    holding: int | None
    obj_pos: np.ndarray             # (n_objects, 2)
    stage: int
    steps: int

    def copy(self) -> "WorldState":
        return WorldState(self.eff.copy(), self.holding, self.obj_pos.copy(),
                          self.stage, self.steps)


@dataclass
class Frame:
    obs: np.ndarray
    action: np.ndarray              # (dx, dy, grip)
    label: int = NORMAL


@dataclass
class Rollout:
    frames: list[Frame]
    outcome: str                    # success | failure
    onset: int | None
    env_id: int
    producer: str                   # expert | scripted | policy

    def __len__(self):
        return len(self.frames)

    @property
    def labels(self) -> np.ndarray:
        return np.array([f.label for f in self.frames], dtype=np.int64)


class RolloutInvariantError(AssertionError):
    pass


def validate_rollout(r: Rollout) -> None:
    """Label/onset consistency: success has no errors, failure flips once."""
    labels = r.labels
    if r.outcome == "success":
        if r.onset is not None or labels.any():
            raise RolloutInvariantError(f"success rollout with onset={r.onset} or error labels")
    else:
        if r.onset is None:
            raise RolloutInvariantError("failure rollout without onset")
        expect = (np.arange(len(labels)) >= r.onset).astype(np.int64)
        if not np.array_equal(labels, expect):
            raise RolloutInvariantError("labels do not flip exactly once at onset")


# ---------------------------------------------------------------------------
# suite construction


def _layout_objects(task: str, rng, x_range, y_range) -> tuple[ObjectSpec, ...]:
    if task == "press":
        slots = [("button", "target", 0.03), ("button", "distractor", 0.03)]
    elif task == "pick_place":
        slots = [("item", "target", 0.02), ("zone", "target", None), ("zone", "distractor", None)]
    else:
        slots = [("item", "target", 0.02), ("zone", "mid", None),
                 ("zone", "target", None), ("zone", "distractor", None)]
    # slot order is shuffled per environment so the state layout does not
    # positionally encode which object is the target; demos carry that
    slots = [slots[int(i)] for i in rng.permutation(len(slots))]
    min_sep = 0.20
    best, best_sep = None, -1.0
    for _ in range(200):
        pts = np.column_stack([rng.uniform(*x_range, size=len(slots)),
                               rng.uniform(*y_range, size=len(slots))])
        d = np.linalg.norm(pts[:, None] - pts[None, :], axis=-1)
        sep = float(d[np.triu_indices(len(slots), 1)].min()) if len(slots) > 1 else 1.0
        if sep > best_sep:
            best, best_sep = pts, sep
        if sep >= min_sep:
            break
    objs = []
    for (kind, role, radius), (x, y) in zip(slots, best):
        r = radius if radius is not None else float(rng.uniform(0.07, 0.09))
        objs.append(ObjectSpec(kind, role, float(x), float(y), r))
    return tuple(objs)


def make_suite(config: SuiteConfig, seed: int) -> list[EnvironmentSpec]:
    """Base specs get ids 0..n_base-1, novel specs follow."""
    if config.task not in TASK_KINDS:
        raise ValueError(f"unknown task kind {config.task!r}")
    if config.n_base < 1 or config.n_novel < 1:
        raise ValueError("environment counts must be >= 1")
    specs = []
    for i in range(config.n_base + config.n_novel):
        split = "base" if i < config.n_base else "novel"
        x_range = config.base_x if split == "base" else config.novel_x
        proj_seed = (1_000_000 + i) if split == "base" else (2_000_000 + i)
        rng = rng_for(seed, "layout", i)
        specs.append(EnvironmentSpec(
            env_id=i, split=split, task=config.task,
            objects=_layout_objects(config.task, rng, x_range, config.y_range),
            projection_seed=proj_seed, suite_seed=seed,
            obs_dim=config.obs_dim, noise_scale=config.noise_scale,
            env_variation=config.env_variation))
    return specs


def with_perturbation(spec: EnvironmentSpec, scale: float, seed: int) -> EnvironmentSpec:
    """Viewpoint-change analog: additively perturb the observation projection."""
    return replace(spec, perturb_scale=float(scale), perturb_seed=int(seed))


# ---------------------------------------------------------------------------
# observation


@lru_cache(maxsize=4096)
def _projection(suite_seed, projection_seed, obs_dim, env_variation, perturb_seed, perturb_scale):
    common = rng_for(suite_seed, "proj-common").normal(0.0, 1.0, (obs_dim, STATE_DIM))
    local = rng_for(suite_seed, "proj-env", projection_seed).normal(0.0, 1.0, (obs_dim, STATE_DIM))
    p = common + env_variation * local
    if perturb_scale:
        p = p + perturb_scale * rng_for(suite_seed, "proj-perturb", perturb_seed,
                                        projection_seed).normal(0.0, 1.0, (obs_dim, STATE_DIM))
    return p / np.sqrt(STATE_DIM)


def projection_matrix(spec: EnvironmentSpec) -> np.ndarray:
    return _projection(spec.suite_seed, spec.projection_seed, spec.obs_dim,
                       spec.env_variation, spec.perturb_seed, spec.perturb_scale)


def canonical_state(spec: EnvironmentSpec, state: WorldState, embodiment: str) -> np.ndarray:
    """Effector position is absolute; object positions are in the effector's
    frame (policies regress direction fields, which are near-linear in
    relative coordinates)."""
    v = np.zeros(STATE_DIM)
    v[0:2] = state.eff
    off = 2
    for i, obj in enumerate(spec.objects):
        base = off + i * (2 + len(_KINDS))
        v[base:base + 2] = state.obj_pos[i] - state.eff
        v[base + 2 + _KINDS.index(obj.kind)] = 1.0
    off += _MAX_OBJECTS * (2 + len(_KINDS))
    v[off] = 1.0 if state.holding is not None else 0.0
    v[off + 1 + min(state.stage, _STAGE_SLOTS - 1)] = 1.0
    v[off + 1 + _STAGE_SLOTS + EMBODIMENTS.index(embodiment)] = 1.0
    return v


def observe(spec: EnvironmentSpec, state: WorldState, embodiment: str,
            rng: np.random.Generator | None = None) -> np.ndarray:
    obs = projection_matrix(spec) @ canonical_state(spec, state, embodiment)
    if spec.noise_scale > 0 and rng is not None:
        obs = obs + rng.normal(0.0, spec.noise_scale, size=obs.shape)
    return obs


# ---------------------------------------------------------------------------
# dynamics


def initial_state(spec: EnvironmentSpec, rng: np.random.Generator) -> WorldState:
    eff = np.array([rng.uniform(0.1, 0.9), rng.uniform(0.05, 0.15)])
    pos = np.array([[o.x, o.y] for o in spec.objects])
    return WorldState(eff=eff, holding=None, obj_pos=pos, stage=0, steps=0)


def _zone_contains(spec, zone_idx, point) -> bool:
    z = spec.objects[zone_idx]
    return float(np.hypot(point[0] - z.x, point[1] - z.y)) <= z.radius


def _advance_stage_on_release(spec, state, item_idx):
    pos = state.obj_pos[item_idx]
    if spec.task == "pick_place":
        if state.stage == 1 and _zone_contains(spec, spec.find("zone", "target"), pos):
            state.stage = 2
    elif spec.task == "organize":
        if state.stage == 1 and _zone_contains(spec, spec.find("zone", "mid"), pos):
            state.stage = 2
        elif state.stage == 2 and _zone_contains(spec, spec.find("zone", "target"), pos):
            state.stage = 3


def step(spec: EnvironmentSpec, state: WorldState, action) -> WorldState:
    """Clamped kinematics; grasp/press/release side effects; latched stages."""
    action = np.asarray(action, dtype=np.float64)
    nxt = state.copy()
    delta = action[:2]
    norm = float(np.hypot(delta[0], delta[1]))
    if norm > MAX_STEP:
        delta = delta * (MAX_STEP / norm)
    grip = float(np.clip(action[2], 0.0, 1.0))
    nxt.eff = np.clip(state.eff + delta, 0.0, 1.0)
    if nxt.holding is not None:
        nxt.obj_pos[nxt.holding] = nxt.eff
    if grip >= 0.5:
        if nxt.holding is None:
            dists = [(float(np.hypot(*(nxt.eff - nxt.obj_pos[i]))), i)
                     for i, o in enumerate(spec.objects) if o.kind == "item"]
            if dists:
                d, i = min(dists)
                if d <= GRASP_RADIUS:
                    nxt.holding = i
                    nxt.obj_pos[i] = nxt.eff
                    if nxt.stage == 0:
                        nxt.stage = 1
            if spec.task == "press" and nxt.stage == 0:
                bt = spec.find("button", "target")
                if float(np.hypot(*(nxt.eff - nxt.obj_pos[bt]))) <= GRASP_RADIUS:
                    nxt.stage = 1
    else:
        if nxt.holding is not None:
            released = nxt.holding
            nxt.holding = None
            _advance_stage_on_release(spec, nxt, released)
    nxt.steps = state.steps + 1
    return nxt


def is_success(spec: EnvironmentSpec, state: WorldState) -> bool:
    return state.stage >= TASK_STAGES[spec.task]


# ---------------------------------------------------------------------------
# scripted controller


def _plan_ops(spec: EnvironmentSpec):
    if spec.task == "press":
        return [("press", spec.find("button", "target"))]
    if spec.task == "pick_place":
        return [("grasp", spec.find("item", "target")),
                ("deliver", spec.find("zone", "target"))]
    return [("grasp", spec.find("item", "target")),
            ("deliver", spec.find("zone", "mid")),
            ("grasp", spec.find("item", "target")),
            ("deliver", spec.find("zone", "target"))]


class ScriptedController:
    """Closed-loop optimal controller with optional intervention or flubs.

    The controller re-derives goal points from world state every frame, so
    it can resume after an external reset (``notify_reset``). ``onset``
    records the frame index of the first erroneous action, or None.
    """

    def __init__(self, spec: EnvironmentSpec, rng: np.random.Generator,
                 intervention: str = "none", quality: str = "optimal",
                 flaky_p: float = 0.0):
        if intervention not in INTERVENTIONS:
            raise ValueError(f"unknown intervention {intervention!r}")
        if intervention not in APPLICABLE[spec.task]:
            raise ValueError(f"intervention {intervention!r} not applicable to task {spec.task!r}")
        self.spec = spec
        self.rng = rng
        self.intervention = intervention
        self.flaky_p = flaky_p
        self.step_len = BASE_STEP * float(rng.uniform(0.7, 1.3))
        self.miss_stop = float(rng.uniform(0.045, 0.07))
        self.premature_frac = float(rng.uniform(0.3, 0.7))
        self.branch_frac = float(rng.uniform(0.4, 0.6))
        self.out_margin = float(rng.uniform(0.015, 0.03))
        self.flub_pending = quality == "suboptimal"
        self.plan = _plan_ops(spec)
        self.plan_idx = 0
        self.believes_holding = False
        self.frame_idx = 0
        self.onset: int | None = None
        self.done = False
        self.settle_left = SETTLE_FRAMES
        self.pause_left = int(rng.integers(0, 4))
        self._leg_start: np.ndarray | None = None
        self._leg_goal_dist = 0.0
        self._branched = False
        self._flaky_mode: str | None = None
        self._flaky_drawn = False
        self._resync = False

    # -- plumbing

    def notify_reset(self) -> None:
        """Called after an external correction reset: drop mistaken beliefs."""
        self.believes_holding = False
        self._flaky_mode = None
        self._flaky_drawn = False
        self._branched = False
        self._leg_start = None
        self.done = False
        self.settle_left = SETTLE_FRAMES
        self._resync = True

    def _mark_onset(self) -> None:
        if self.onset is None:
            self.onset = self.frame_idx

    def _emit(self, dx, dy, grip) -> np.ndarray:
        self.frame_idx += 1
        return np.array([dx, dy, grip])

    def _towards(self, state, goal, grip) -> np.ndarray:
        d = goal - state.eff
        dist = float(np.hypot(d[0], d[1]))
        if dist <= self.step_len:
            return self._emit(d[0], d[1], grip)
        u = d / dist
        return self._emit(u[0] * self.step_len, u[1] * self.step_len, grip)

    def _hold_grip(self, state) -> float:
        return 0.9 if (state.holding is not None or self.believes_holding) else 0.0

    def _advance(self) -> None:
        self.plan_idx += 1
        self._leg_start = None
        self.pause_left = int(self.rng.integers(0, 4))

    def _resync_plan(self, state) -> None:
        """Infer plan position from world state (used after a reset)."""
        task = self.spec.task
        if task == "press":
            self.plan_idx = 1 if state.stage >= 1 else 0
        elif task == "pick_place":
            if state.stage >= 2:
                self.plan_idx = 2
            else:
                self.plan_idx = 1 if state.holding is not None else 0
        else:
            if state.stage >= 3:
                self.plan_idx = 4
            elif state.holding is not None:
                self.plan_idx = 1 if state.stage < 2 else 3
            else:
                self.plan_idx = 0 if state.stage < 2 else 2
        self._leg_start = None
        self._resync = False

    # -- intervention helpers

    def _active(self, mode: str, op_i: int) -> bool:
        """Is the given mistake mode active for the plan step being executed?"""
        if self._flaky_mode == mode:
            return True
        if self.intervention != mode:
            return False
        last = len(self.plan) - 1
        if mode == "miss_grasp":
            return op_i == 0
        if mode == "premature_release":
            return op_i == (1 if self.spec.task == "organize" else last)
        return op_i == last  # wrong_target, incomplete_final
    # -- main loop

    def act(self, state: WorldState) -> np.ndarray:
        if self._resync:
            self._resync_plan(state)
        if self.plan_idx >= len(self.plan) or is_success(self.spec, state):
            if self.settle_left > 0:
                self.settle_left -= 1
                if self.settle_left == 0:
                    self.done = True
            return self._emit(0.0, 0.0, 0.0)
        if self.pause_left > 0:
            self.pause_left -= 1
            return self._emit(0.0, 0.0, self._hold_grip(state))
        kind, obj_i = self.plan[self.plan_idx]
        if kind == "press":
            return self._act_press(state, obj_i)
        if kind == "grasp":
            return self._act_grasp(state, obj_i)
        return self._act_deliver(state, obj_i)

    def _draw_flaky(self, choices) -> None:
        if self.flaky_p > 0 and not self._flaky_drawn:
            self._flaky_drawn = True
            if float(self.rng.random()) < self.flaky_p:
                self._flaky_mode = choices[int(self.rng.integers(0, len(choices)))]

    def _act_press(self, state, btn_i):
        self._draw_flaky(("incomplete_final",))
        spec = self.spec
        goal = state.obj_pos[btn_i].copy()
        if self._leg_start is None:
            self._leg_start = state.eff.copy()
            self._leg_goal_dist = float(np.hypot(*(goal - state.eff)))
        if self._active("wrong_target", self.plan_idx) and not self._branched:
            if float(np.hypot(*(goal - state.eff))) <= (1 - self.branch_frac) * self._leg_goal_dist:
                self._branched = True
        if self._branched:
            goal = state.obj_pos[spec.find("button", "distractor")].copy()
            self._mark_onset()
        stop_out = self._active("incomplete_final", self.plan_idx) or self.flub_pending
        if stop_out:
            away = state.eff - goal
            n = float(np.hypot(away[0], away[1]))
            goal = goal + (away / n) * self.miss_stop if n > 1e-9 else goal + [self.miss_stop, 0.0]
        dist = float(np.hypot(*(goal - state.eff)))
        if dist < 1e-9:
            if self.flub_pending and self._flaky_mode is None and not self._active(
                    "incomplete_final", self.plan_idx):
                self.flub_pending = False
                return self._emit(0.0, 0.0, 0.9)
            if stop_out or self._branched:
                self._mark_onset()
            self._advance()
            return self._emit(0.0, 0.0, 0.9)
        grip = 0.9 if (not stop_out and dist <= GRIP_WINDOW) else 0.0
        return self._towards(state, goal, grip)

    def _next_zone_dir(self, state, item_i):
        op = self.plan[self.plan_idx + 1]
        z = state.obj_pos[op[1]]
        d = z - state.obj_pos[item_i]
        n = float(np.hypot(d[0], d[1]))
        return d / n if n > 1e-9 else np.array([1.0, 0.0])

    def _act_grasp(self, state, item_i):
        if state.holding is not None:
            self._advance()
            return self.act(state)
        if self.plan_idx == 0:
            self._draw_flaky(("miss_grasp",))
        goal = state.obj_pos[item_i].copy()
        missing = self._active("miss_grasp", self.plan_idx)
        if missing or self.flub_pending:
            goal = goal + self.miss_stop * self._next_zone_dir(state, item_i)
        dist = float(np.hypot(*(goal - state.eff)))
        if dist < 1e-9:
            if self.flub_pending and not missing:
                self.flub_pending = False
                return self._emit(0.0, 0.0, 0.9)
            if missing:
                self._mark_onset()
                self.believes_holding = True
                self._advance()
            return self._emit(0.0, 0.0, 0.9)
        grip = 0.9 if (not missing and not self.flub_pending and dist <= GRIP_WINDOW) else 0.0
        return self._towards(state, goal, grip)

    def _act_deliver(self, state, zone_i):
        spec = self.spec
        if state.holding is None and not self.believes_holding:
            self._advance()  # release already happened via the grip window
            return self.act(state)
        center = state.obj_pos[zone_i].copy()
        if self._leg_start is None:
            self._leg_start = state.eff.copy()
            self._leg_goal_dist = float(np.hypot(*(center - state.eff)))
        wrong = self._active("wrong_target", self.plan_idx)
        if wrong and not self._branched:
            if float(np.hypot(*(center - state.eff))) <= (1 - self.branch_frac) * self._leg_goal_dist:
                self._branched = True
        if self._branched:
            center = state.obj_pos[spec.find("zone", "distractor")].copy()
            self._mark_onset()
        goal = center
        release_window = spec.objects[zone_i].radius * RELEASE_FRACTION
        erroneous = self._branched
        if self._active("incomplete_final", self.plan_idx):
            away = self._leg_start - center
            n = float(np.hypot(away[0], away[1]))
            u = away / n if n > 1e-9 else np.array([1.0, 0.0])
            goal = center + u * (spec.objects[zone_i].radius + self.out_margin)
            release_window = 0.0
            erroneous = True
        elif self._active("premature_release", self.plan_idx):
            goal = self._leg_start + self.premature_frac * (center - self._leg_start)
            min_out = spec.objects[zone_i].radius + self.out_margin
            d_center = float(np.hypot(*(goal - center)))
            if d_center < min_out:  # short carry leg: stay outside the zone
                u = (self._leg_start - center) / max(self._leg_goal_dist, 1e-9)
                goal = center + u * min_out
            release_window = 0.0
            erroneous = True
        dist = float(np.hypot(*(goal - state.eff)))
        if dist < 1e-9:
            if erroneous:
                self._mark_onset()
            if self.believes_holding and state.holding is None:
                self.believes_holding = False  # the imagined delivery is "done"
            self._advance()
            return self._emit(0.0, 0.0, 0.1)
        grip = self._hold_grip(state)
        if state.holding is not None and dist <= release_window:
            if erroneous:
                self._mark_onset()
            grip = 0.1
        return self._towards(state, goal, grip)


# ---------------------------------------------------------------------------
# episode loops


class ExpertBudgetError(RuntimeError):
    """The scripted expert could not finish within the step budget."""


def run_controller(spec: EnvironmentSpec, controller, embodiment: str,
                   rng: np.random.Generator, producer: str,
                   budget: int = STEP_BUDGET) -> Rollout:
    state = initial_state(spec, rng)
    frames: list[Frame] = []
    transitions: list[int] = []
    while state.steps < budget and not controller.done:
        obs = observe(spec, state, embodiment, rng)
        action = controller.act(state)
        frames.append(Frame(obs=obs, action=action))
        prev_stage = state.stage
        state = step(spec, state, action)
        if state.stage != prev_stage:
            transitions.append(len(frames) - 1)
    success = is_success(spec, state)
    onset = controller.onset
    if success:
        outcome, onset = "success", None
    else:
        outcome = "failure"
        if onset is None:
            onset = transitions[-1] if transitions else 0
    for i, f in enumerate(frames):
        f.label = ERROR if (onset is not None and i >= onset) else NORMAL
    return Rollout(frames=frames, outcome=outcome, onset=onset,
                   env_id=spec.env_id, producer=producer)


def run_expert(spec: EnvironmentSpec, rng: np.random.Generator,
               quality: str = "optimal") -> Rollout:
    ctl = ScriptedController(spec, rng, intervention="none", quality=quality)
    r = run_controller(spec, ctl, "expert", rng, producer="expert")
    if r.outcome != "success":
        raise ExpertBudgetError(f"expert failed on env {spec.env_id} (task {spec.task})")
    return r


def run_scripted_agent(spec: EnvironmentSpec, intervention: str,
                       rng: np.random.Generator) -> Rollout:
    ctl = ScriptedController(spec, rng, intervention=intervention)
    return run_controller(spec, ctl, "agent", rng, producer="scripted")


# ---------------------------------------------------------------------------
# ground-truth deviation audit


class DeviationAudit:
    """Online audit that flags the first behavior deviation in a rollout.

    The simulator knows target assignments. Flagged conditions:
      - a grip episode (grip held high while not holding) that runs for
        several frames, or ends, without ever grasping or pressing anything
      - a held object released outside the stage's required zone, or out of
        stage order
    Used to label trained-policy rollouts and to drive the oracle detector
    in the correction pilot.
    """

    GRIP_EPISODE_FRAMES = 3

    def __init__(self, spec: EnvironmentSpec):
        self.spec = spec
        self.first_deviation: int | None = None
        self.last_transition: int | None = None
        self._ep_start: int | None = None
        self._ep_min = np.inf
        self._ep_achieved = False
        self._idx = 0

    def _required_zone(self, stage: int) -> int | None:
        spec = self.spec
        if spec.task == "pick_place":
            return spec.find("zone", "target") if stage == 1 else None
        if spec.task == "organize":
            if stage == 1:
                return spec.find("zone", "mid")
            if stage == 2:
                return spec.find("zone", "target")
        return None

    def _flag(self, idx: int) -> None:
        if self.first_deviation is None:
            self.first_deviation = idx

    def _graspable_dist(self, state: WorldState) -> float:
        kind = "button" if self.spec.task == "press" else "item"
        idxs = [i for i, o in enumerate(self.spec.objects) if o.kind == kind]
        return min(float(np.hypot(*(state.eff - state.obj_pos[i]))) for i in idxs)

    def observe_step(self, before: WorldState, action, after: WorldState) -> None:
        spec = self.spec
        grip = float(np.clip(action[2], 0.0, 1.0))
        gripping_empty = grip >= 0.5 and before.holding is None and after.holding is None
        achieved = (after.holding is not None and before.holding is None) or \
                   (spec.task == "press" and after.stage > before.stage)
        if gripping_empty and not achieved:
            if self._ep_start is None:
                self._ep_start = self._idx
                self._ep_min = np.inf
                self._ep_achieved = False
            self._ep_min = min(self._ep_min, self._graspable_dist(after))
            long_enough = self._idx - self._ep_start + 1 >= self.GRIP_EPISODE_FRAMES
            if long_enough and self._ep_min > GRASP_RADIUS:
                self._flag(self._ep_start)
        else:
            if (self._ep_start is not None and not achieved
                    and self._ep_min > GRASP_RADIUS):
                self._flag(self._ep_start)  # episode ended empty-handed
            self._ep_start = None
        if before.holding is not None and after.holding is None:
            zone = self._required_zone(before.stage)
            pos = after.obj_pos[before.holding]
            if zone is None or not _zone_contains(spec, zone, pos) or after.stage == before.stage:
                self._flag(self._idx)
        if after.stage != before.stage:
            self.last_transition = self._idx
        self._idx += 1

    def onset_for_failure(self) -> int:
        if self.first_deviation is not None:
            return self.first_deviation
        if self.last_transition is not None:
            return self.last_transition
        return 0
