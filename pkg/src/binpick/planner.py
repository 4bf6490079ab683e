"""Primitive-action selection heuristics and a simulated stow executor.

The planner scales every proposal's affordance by a per-primitive multiplier
that (a) favors suction over parallel-jaw grasping early in a task, and
(b) backs off primitives that keep failing; proposals near a recent failed
attempt of the same primitive are suppressed outright until the scene
changes. A simulated bin lets the closed loop run end-to-end from recorded
or synthetic data, with byte-reproducible episode logs.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .affordance import KIND_ORDER, GraspProposal, PrimitiveKind, SuctionProposal

GRASP_KINDS = (PrimitiveKind.GRASP_DOWN, PrimitiveKind.FLUSH_GRASP)


@dataclass(frozen=True)
class PlannerConfig:
    gamma: dict = field(default_factory=dict)  # PrimitiveKind -> base multiplier
    suction_first_window: float = 180.0        # seconds favoring suction
    suppression_radius: float = 0.02
    speed_pick_spacing: float = 0.03
    failure_window: float = 180.0

    def __post_init__(self):
        gamma = dict(self.gamma)  # never mutate the caller's mapping
        for kind in PrimitiveKind:
            gamma.setdefault(kind, 1.0)
        object.__setattr__(self, "gamma", gamma)
        if any(not 0.0 <= g <= 1.0 for g in gamma.values()):
            raise ValueError("gamma multipliers must lie in [0, 1]")
        if self.suppression_radius <= 0 or self.speed_pick_spacing <= 0:
            raise ValueError("radii must be positive")

    def to_json_dict(self) -> dict:
        return {
            "gamma": {k.value: v for k, v in sorted(self.gamma.items(), key=lambda kv: kv[0].value)},
            "suction_first_window": self.suction_first_window,
            "suppression_radius": self.suppression_radius,
            "speed_pick_spacing": self.speed_pick_spacing,
            "failure_window": self.failure_window,
        }

    @classmethod
    def from_json_dict(cls, data: dict) -> "PlannerConfig":
        gamma = {PrimitiveKind(k): float(v) for k, v in data.get("gamma", {}).items()}
        return cls(gamma=gamma,
                   suction_first_window=float(data.get("suction_first_window", 180.0)),
                   suppression_radius=float(data.get("suppression_radius", 0.02)),
                   speed_pick_spacing=float(data.get("speed_pick_spacing", 0.03)),
                   failure_window=float(data.get("failure_window", 180.0)))


@dataclass(frozen=True)
class AttemptRecord:
    time: float
    primitive: PrimitiveKind
    position: np.ndarray
    success: bool

    def __post_init__(self):
        if self.time < 0:
            raise ValueError("attempt time must be non-negative")
        object.__setattr__(self, "position",
                           np.asarray(self.position, dtype=np.float64).reshape(3))


@dataclass
class PlannerState:
    history: list[AttemptRecord] = field(default_factory=list)
    clock: float = 0.0
    scene_version: int = 0
    last_scene_change: float = 0.0  # clock time of the last scene change

    def record(self, attempt: AttemptRecord) -> None:
        if self.history and attempt.time < self.history[-1].time:
            raise ValueError("attempt times must be non-decreasing")
        self.history.append(attempt)

    def mark_scene_changed(self) -> None:
        self.scene_version += 1
        self.last_scene_change = self.clock

    def recent_failures(self, kind: PrimitiveKind, window: float) -> int:
        cutoff = self.clock - window
        return sum(1 for a in self.history
                   if not a.success and a.primitive is kind and a.time >= cutoff)

    def failures_since_scene_change(self, kind: PrimitiveKind) -> list[AttemptRecord]:
        return [a for a in self.history
                if not a.success and a.primitive is kind
                and a.time >= self.last_scene_change]


def effective_gamma(state: PlannerState, cfg: PlannerConfig, kind: PrimitiveKind) -> float:
    """Affordance multiplier for one primitive at the current clock.

    Parallel-jaw primitives are halved during the initial suction-first
    window; any primitive that failed 2-3 times inside the failure window is
    halved, and quartered beyond 3 failures. Factors multiply with the
    configured base gamma.
    """
    factor = cfg.gamma[kind]
    if kind in GRASP_KINDS and state.clock < cfg.suction_first_window:
        factor *= 0.5
    failures = state.recent_failures(kind, cfg.failure_window)
    if failures > 3:
        factor *= 0.25
    elif failures >= 2:
        factor *= 0.5
    return factor


def _position(proposal) -> np.ndarray:
    return proposal.point if isinstance(proposal, SuctionProposal) else proposal.midpoint


def suppress(proposals: list, state: PlannerState, cfg: PlannerConfig) -> list:
    """Zero the affordance of proposals near a same-primitive failure.

    Only failures since the last scene change count; a successful pick (or an
    explicit re-observation) changes the scene and clears suppression.
    """
    failure_positions: dict[PrimitiveKind, np.ndarray] = {}
    out = []
    for prop in proposals:
        pos = failure_positions.get(prop.primitive)
        if pos is None:
            fails = state.failures_since_scene_change(prop.primitive)
            pos = np.array([a.position for a in fails]) if fails else np.zeros((0, 3))
            failure_positions[prop.primitive] = pos
        if len(pos) and np.linalg.norm(pos - _position(prop), axis=1).min() <= cfg.suppression_radius:
            out.append(replace(prop, affordance=0.0))
        else:
            out.append(prop)
    return out


def _sort_key(prop):
    pos = _position(prop)
    # angle/point indices only disambiguate exact position+kind collisions
    tail = (prop.angle_index, prop.pixel) if isinstance(prop, GraspProposal) \
        else (prop.point_index,)
    return (KIND_ORDER[prop.primitive], pos[0], pos[1], pos[2]) + tail


def select_action(suction: list[SuctionProposal], grasp: list[GraspProposal],
                  state: PlannerState, cfg: PlannerConfig):
    """Pick the proposal with the highest gamma-scaled affordance, or None.

    Suppressed (and zero-scoring) proposals are never selected. Ties break by
    primitive order sd < ss < gd < fg, then lexicographically by position.
    """
    candidates = suppress(list(suction) + list(grasp), state, cfg)
    best = None
    best_score = 0.0
    for prop in candidates:
        score = prop.affordance * effective_gamma(state, cfg, prop.primitive)
        if score <= 0.0:
            continue
        if best is None or score > best_score or (
                score == best_score and _sort_key(prop) < _sort_key(best)):
            best = prop
            best_score = score
    return best


def speed_pick_batch(proposals: list, cfg: PlannerConfig, k: int,
                     state: PlannerState | None = None) -> list:
    """Up to k spatially spread proposals for quick-succession attempts.

    Greedy in descending scaled-affordance order, skipping candidates within
    `speed_pick_spacing` of one already chosen. Pass `state` to apply
    suppression and gamma scaling first; otherwise raw affordances rank.
    """
    if k < 1:
        raise ValueError("k must be at least 1")
    cands = list(proposals)
    if state is not None:
        cands = suppress(cands, state, cfg)

    def score(prop):
        g = effective_gamma(state, cfg, prop.primitive) if state is not None else 1.0
        return prop.affordance * g

    cands.sort(key=lambda p: (-score(p),) + _sort_key(p))
    chosen = []
    for prop in cands:
        if score(prop) <= 0.0:
            continue
        pos = _position(prop)
        if any(np.linalg.norm(pos - _position(c)) < cfg.speed_pick_spacing for c in chosen):
            continue
        chosen.append(prop)
        if len(chosen) == k:
            break
    return chosen


# --- simulated closed-loop execution ----------------------------------------

@dataclass
class SimObject:
    object_id: str
    position: np.ndarray
    affordances: dict  # PrimitiveKind -> value in [0, 1]

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=np.float64).reshape(3)


@dataclass
class SimulatedBin:
    objects: list[SimObject]

    def observe(self) -> tuple[list[SuctionProposal], list[GraspProposal]]:
        """One proposal per object and primitive, from the scripted affordances."""
        suction, grasp = [], []
        up = np.array([0.0, 0.0, 1.0])
        for i, obj in enumerate(self.objects):
            for kind, aff in sorted(obj.affordances.items(), key=lambda kv: kv[0].value):
                if kind in (PrimitiveKind.SUCTION_DOWN, PrimitiveKind.SUCTION_SIDE):
                    suction.append(SuctionProposal(obj.position.copy(), up.copy(),
                                                   float(aff), kind, point_index=i))
                else:
                    grasp.append(GraspProposal(obj.position.copy(), 0.0, 0.05,
                                               float(aff), kind, pixel=(0, 0),
                                               angle_index=0))
        return suction, grasp

    def remove_nearest(self, position: np.ndarray) -> SimObject:
        dists = [float(np.linalg.norm(o.position - position)) for o in self.objects]
        idx = int(np.argmin(dists))
        return self.objects.pop(idx)


def logistic_success_model(sharpness: float = 10.0, midpoint: float = 0.5):
    """P(success) = sigmoid(sharpness * (affordance - midpoint))."""
    def model(proposal, scene) -> float:
        return 1.0 / (1.0 + math.exp(-sharpness * (proposal.affordance - midpoint)))
    return model


def run_stow_episode(scene: SimulatedBin, cfg: PlannerConfig, success_model,
                     time_limit: float = 900.0, seed: int = 0,
                     attempt_seconds: float = 6.0) -> list[dict]:
    """Closed-loop stow run: observe, select, attempt, update, repeat.

    Ends when the bin is empty, the clock passes `time_limit`, or no
    selectable proposal remains. Returns the episode log as a list of JSON
    records: a header (config + seed) followed by one record per attempt and
    a placement event per successful pick.
    """
    rng = np.random.default_rng(seed)
    state = PlannerState()
    log = [{"event": "header", "config": cfg.to_json_dict(), "seed": seed,
            "time_limit": time_limit, "objects": len(scene.objects)}]
    while scene.objects and state.clock < time_limit:
        suction, grasp = scene.observe()
        choice = select_action(suction, grasp, state, cfg)
        if choice is None:
            log.append({"event": "exhausted", "time": state.clock})
            break
        p_success = float(success_model(choice, scene))
        success = bool(rng.random() < p_success)
        pos = _position(choice)
        state.record(AttemptRecord(state.clock, choice.primitive, pos, success))
        log.append({"event": "attempt", "time": state.clock,
                    "primitive": choice.primitive.value,
                    "position": [float(x) for x in pos],
                    "affordance": choice.affordance, "success": success})
        if success:
            removed = scene.remove_nearest(pos)
            state.mark_scene_changed()
            log.append({"event": "placement", "time": state.clock,
                        "object_id": removed.object_id})
        state.clock += attempt_seconds
    picked = sum(1 for r in log if r["event"] == "placement")
    log.append({"event": "summary", "time": state.clock,
                "picked": picked, "remaining": len(scene.objects)})
    return log


def write_episode_log(path, log: list[dict]) -> None:
    with open(path, "w") as f:
        for record in log:
            f.write(json.dumps(record, sort_keys=True) + "\n")


def read_episode_log(path) -> list[dict]:
    with open(path) as f:
        return [json.loads(line) for line in f if line.strip()]


def pick_success_summary(log: list[dict]) -> dict:
    """Per-mode pick success rates in the competition-report style."""
    stats = {"suction": [0, 0], "grasping": [0, 0]}
    for rec in log:
        if rec.get("event") != "attempt":
            continue
        mode = "suction" if rec["primitive"] in ("sd", "ss") else "grasping"
        stats[mode][1] += 1
        stats[mode][0] += int(rec["success"])
    out = {}
    for mode, (succ, total) in stats.items():
        out[mode] = {"attempts": total, "successes": succ,
                     "rate": (succ / total) if total else None}
    return out
