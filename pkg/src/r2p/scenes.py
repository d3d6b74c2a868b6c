"""Synthetic driving scenes: generation, agent-centric normalization, file IO.

A scene is a single agent-centric forecasting sample: the target agent's
observed history, neighbor histories, lane polylines, traffic-light states,
and ground-truth futures.  Scenes are generated from seeded kinematic
profiles (constant-speed arcs, piecewise arcs, braking) so every expected
value in the test suite has a closed form.

Feature layouts (all arrays float64):
    agent step:  (x, y, heading, v_x, v_y, valid, normalized_time)
    lane node:   (x, y, dir_x, dir_y, valid, lane-type one-hot x3)
    light step:  (x, y, valid, state one-hot x3)

Invalid rows are zero-filled; the ``valid`` channel is the mask.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .errors import SceneFormatError, SceneParseError

DT = 0.1  # seconds per timestep

AGENT_TYPES = ("vehicle", "pedestrian", "cyclist")
INTENTS = ("left_turn", "straight", "right_turn", "stop", "lane_change")

D_AGENT = 7
D_MAP = 8
D_TL = 6

_LANE_OFFSET = 3.5  # meters between adjacent lane centerlines


@dataclass(frozen=True)
class SceneDims:
    """Array sizes shared by every tensor of one scene."""

    n_agents: int
    n_lanes: int
    nodes_per_lane: int
    n_lights: int
    t_history: int
    t_future: int

    def validate(self) -> None:
        for name, value in self.__dict__.items():
            if int(value) <= 0:
                raise ValueError(f"scene dimension {name} must be positive, got {value}")

    def as_dict(self) -> dict:
        return {k: int(v) for k, v in self.__dict__.items()}


@dataclass(frozen=True)
class KinematicProfile:
    """One motion intent plus the parameter ranges it is sampled from."""

    intent: str
    speed_range: tuple[float, float]
    turn_radius_range: tuple[float, float] = (15.0, 30.0)
    noise_std: float = 0.0

    def __post_init__(self):
        if self.intent not in INTENTS:
            raise ValueError(f"unknown intent {self.intent!r}, expected one of {INTENTS}")
        lo, hi = self.speed_range
        if lo < 0 or hi < lo:
            raise ValueError(f"bad speed_range {self.speed_range}")
        rlo, rhi = self.turn_radius_range
        if rlo <= 0 or rhi < rlo:
            raise ValueError(f"bad turn_radius_range {self.turn_radius_range}")
        if self.noise_std < 0:
            raise ValueError("noise_std must be >= 0")


@dataclass
class Scene:
    """One agent-centric driving sample.

    Positions are meters, headings radians, velocities m/s.  After
    normalization the target's last observed pose is the origin with zero
    heading; ``frame_pose`` records the pose of that origin in the original
    world frame so predictions can be mapped back.
    """

    target_history: np.ndarray        # [T_s, D_AGENT]
    neighbor_histories: np.ndarray    # [N_a, T_s, D_AGENT]
    lane_polylines: np.ndarray        # [N_m, P, D_MAP]
    traffic_light_states: np.ndarray  # [N_tl, T_s, D_TL]
    target_future: np.ndarray         # [T_f, 5] (x, y, heading, v_x, v_y)
    neighbor_futures: np.ndarray      # [N_a, T_f, 2]
    agent_type: str
    frame_pose: np.ndarray            # [3] (x, y, yaw)

    @property
    def dims(self) -> SceneDims:
        return SceneDims(
            n_agents=self.neighbor_histories.shape[0],
            n_lanes=self.lane_polylines.shape[0],
            nodes_per_lane=self.lane_polylines.shape[1],
            n_lights=self.traffic_light_states.shape[0],
            t_history=self.target_history.shape[0],
            t_future=self.target_future.shape[0],
        )

    @property
    def neighbor_valid(self) -> np.ndarray:
        """Per-neighbor validity: an agent exists if any history step is valid."""
        return self.neighbor_histories[:, :, 5].any(axis=1)

    def copy(self) -> "Scene":
        return Scene(
            target_history=self.target_history.copy(),
            neighbor_histories=self.neighbor_histories.copy(),
            lane_polylines=self.lane_polylines.copy(),
            traffic_light_states=self.traffic_light_states.copy(),
            target_future=self.target_future.copy(),
            neighbor_futures=self.neighbor_futures.copy(),
            agent_type=self.agent_type,
            frame_pose=self.frame_pose.copy(),
        )


def three_intent_mix(noise_std: float = 0.1,
                     speed_range: tuple[float, float] = (6.0, 12.0),
                     radius_range: tuple[float, float] = (15.0, 30.0)):
    """Equal-probability left / straight / right mix used by the desk dataset."""
    profiles = [
        KinematicProfile("left_turn", speed_range, radius_range, noise_std),
        KinematicProfile("straight", speed_range, radius_range, noise_std),
        KinematicProfile("right_turn", speed_range, radius_range, noise_std),
    ]
    return [(p, 1.0 / 3.0) for p in profiles]


def five_intent_mix(noise_std: float = 0.1):
    probs = (0.25, 0.3, 0.25, 0.1, 0.1)
    profiles = [
        KinematicProfile("left_turn", (6.0, 12.0), (15.0, 30.0), noise_std),
        KinematicProfile("straight", (6.0, 12.0), noise_std=noise_std),
        KinematicProfile("right_turn", (6.0, 12.0), (15.0, 30.0), noise_std),
        KinematicProfile("stop", (4.0, 9.0), noise_std=noise_std),
        KinematicProfile("lane_change", (7.0, 12.0), (40.0, 80.0), noise_std=noise_std),
    ]
    return list(zip(profiles, probs))


# ---------------------------------------------------------------------------
# path primitives
# ---------------------------------------------------------------------------

def _wrap_angle(a):
    return (np.asarray(a) + math.pi) % (2.0 * math.pi) - math.pi


def _arc_state(s, radius: float, sign: float):
    """Pose (x, y, heading) at arclength ``s`` on a constant-curvature path.

    The path passes through the origin with zero heading at s=0; ``sign`` is
    +1 for a left turn, -1 for a right turn, 0 for a straight line.
    """
    s = np.asarray(s, dtype=np.float64)
    if sign == 0.0:
        zeros = np.zeros_like(s)
        return s, zeros, zeros
    x = radius * np.sin(s / radius)
    y = sign * radius * (1.0 - np.cos(s / radius))
    return x, y, sign * s / radius


def _compose(pose, x, y, heading):
    """Map local (x, y, heading) through a rigid pose (px, py, pyaw)."""
    px, py, pyaw = pose
    c, s = math.cos(pyaw), math.sin(pyaw)
    return px + c * x - s * y, py + s * x + c * y, heading + pyaw


class _PathModel:
    """Arclength-parameterized pose and speed for one sampled profile.

    s=0 / t=0 is the last observed step.  History extends to negative s at
    the initial speed; the maneuver itself starts at t=0.
    """

    def __init__(self, intent: str, speed: float, radius: float, t_future: float,
                 change_sign: float = 1.0):
        self.intent = intent
        self.speed = speed
        self.radius = radius
        self.t_stop = 0.7 * t_future
        self.s_switch = 0.5 * speed * t_future
        self.change_sign = change_sign

    def arclength(self, t: float) -> float:
        if self.intent != "stop" or t <= 0.0:
            return self.speed * t
        tc = min(t, self.t_stop)
        return self.speed * (tc - tc * tc / (2.0 * self.t_stop))

    def speed_at(self, t: float) -> float:
        if self.intent != "stop" or t <= 0.0:
            return self.speed
        return self.speed * max(0.0, 1.0 - t / self.t_stop)

    def state_at_arclength(self, s: float):
        if self.intent == "straight" or self.intent == "stop":
            return _arc_state(s, self.radius, 0.0)
        if self.intent == "left_turn":
            return _arc_state(s, self.radius, 1.0)
        if self.intent == "right_turn":
            return _arc_state(s, self.radius, -1.0)
        sgn = self.change_sign
        if s <= 0.0:
            return _arc_state(s, self.radius, 0.0)
        if s <= self.s_switch:
            return _arc_state(s, self.radius, sgn)
        x0, y0, h0 = _arc_state(self.s_switch, self.radius, sgn)
        xl, yl, hl = _arc_state(s - self.s_switch, self.radius, -sgn)
        return _compose((x0, y0, h0), xl, yl, hl)

    def state_at(self, t: float):
        """(x, y, heading, v_x, v_y) at time ``t`` relative to the last observed step."""
        s = self.arclength(t)
        x, y, h = self.state_at_arclength(s)
        v = self.speed_at(t)
        return float(x), float(y), float(h), v * math.cos(h), v * math.sin(h)


def _sample_profile(rng: np.random.Generator, profile_mix):
    probs = np.array([p for _, p in profile_mix], dtype=np.float64)
    idx = int(rng.choice(len(profile_mix), p=probs / probs.sum()))
    profile = profile_mix[idx][0]
    speed = float(rng.uniform(*profile.speed_range))
    radius = float(rng.uniform(*profile.turn_radius_range))
    change_sign = 1.0 if rng.random() < 0.5 else -1.0
    return profile, speed, radius, change_sign


def _route_polyline(model: _PathModel, s_lo: float, s_hi: float, n_nodes: int,
                    lateral_offset: float = 0.0, lane_type: int = 0) -> np.ndarray:
    """Sample a path into a lane polyline, optionally shifted along the normal."""
    out = np.zeros((n_nodes, D_MAP), dtype=np.float64)
    ss = np.linspace(s_lo, s_hi, n_nodes)
    for i, s in enumerate(ss):
        x, y, h = model.state_at_arclength(float(s))
        x += lateral_offset * -math.sin(h)
        y += lateral_offset * math.cos(h)
        out[i, 0], out[i, 1] = x, y
        out[i, 2], out[i, 3] = math.cos(h), math.sin(h)
        out[i, 4] = 1.0
        out[i, 5 + lane_type] = 1.0
    return out


def _transform_polyline(poly: np.ndarray, pose) -> np.ndarray:
    out = poly.copy()
    px, py, pyaw = pose
    c, s = math.cos(pyaw), math.sin(pyaw)
    x, y = poly[:, 0].copy(), poly[:, 1].copy()
    dx, dy = poly[:, 2].copy(), poly[:, 3].copy()
    out[:, 0] = px + c * x - s * y
    out[:, 1] = py + s * x + c * y
    out[:, 2] = c * dx - s * dy
    out[:, 3] = s * dx + c * dy
    return out


# ---------------------------------------------------------------------------
# generation
# ---------------------------------------------------------------------------

def generate_scene(seed: int, profile_mix, counts) -> Scene:
    """Generate one deterministic synthetic scene in the agent-centric frame.

    ``profile_mix`` is a list of (KinematicProfile, probability) pairs;
    probabilities must sum to 1 within 1e-9.  ``counts`` is a SceneDims or a
    (N_a, N_m, P, N_tl, T_s, T_f) tuple.  The same (seed, profile_mix,
    counts) always yields a bitwise-identical scene.
    """
    if not isinstance(counts, SceneDims):
        counts = SceneDims(*counts)
    counts.validate()
    if len(profile_mix) == 0:
        raise ValueError("profile_mix must not be empty")
    total_p = float(sum(p for _, p in profile_mix))
    if abs(total_p - 1.0) > 1e-9:
        raise ValueError(f"profile probabilities sum to {total_p}, expected 1")

    rng = np.random.default_rng(seed)
    d = counts
    t_future_s = d.t_future * DT

    profile, speed, radius, change_sign = _sample_profile(rng, profile_mix)
    model = _PathModel(profile.intent, speed, radius, t_future_s, change_sign)

    target_history = np.zeros((d.t_history, D_AGENT), dtype=np.float64)
    denom = max(d.t_history - 1, 1)
    for i in range(d.t_history):
        t = (i - (d.t_history - 1)) * DT
        x, y, h, vx, vy = model.state_at(t)
        target_history[i] = (x, y, h, vx, vy, 1.0, i / denom)

    target_future = np.zeros((d.t_future, 5), dtype=np.float64)
    noise = rng.normal(0.0, 1.0, size=(d.t_future, 2)) * profile.noise_std
    for j in range(d.t_future):
        x, y, h, vx, vy = model.state_at((j + 1) * DT)
        target_future[j] = (x + noise[j, 0], y + noise[j, 1], h, vx, vy)

    # neighbors follow independent profiles from the same mix
    neighbor_histories = np.zeros((d.n_agents, d.t_history, D_AGENT), dtype=np.float64)
    neighbor_futures = np.zeros((d.n_agents, d.t_future, 2), dtype=np.float64)
    neighbor_models = []
    for a in range(d.n_agents):
        exists = rng.random() < 0.85
        n_profile, n_speed, n_radius, n_sign = _sample_profile(rng, profile_mix)
        pose = (
            float(rng.uniform(-25.0, 25.0)),
            float(rng.choice([-2.0, -1.0, 1.0, 2.0]) * _LANE_OFFSET + rng.uniform(-0.5, 0.5)),
            float(rng.uniform(-0.25, 0.25)),
        )
        drop = int(rng.integers(0, d.t_history - 1)) if rng.random() < 0.3 else 0
        n_noise = rng.normal(0.0, 1.0, size=(d.t_future, 2)) * n_profile.noise_std
        if not exists:
            continue
        n_model = _PathModel(n_profile.intent, n_speed, n_radius, t_future_s, n_sign)
        neighbor_models.append((n_model, pose))
        for i in range(drop, d.t_history):
            t = (i - (d.t_history - 1)) * DT
            x, y, h, vx, vy = n_model.state_at(t)
            gx, gy, gh = _compose(pose, x, y, h)
            c, s = math.cos(pose[2]), math.sin(pose[2])
            gvx, gvy = c * vx - s * vy, s * vx + c * vy
            neighbor_histories[a, i] = (gx, gy, gh, gvx, gvy, 1.0, i / denom)
        for j in range(d.t_future):
            x, y, h, _, _ = n_model.state_at((j + 1) * DT)
            gx, gy, _ = _compose(pose, x, y, h)
            neighbor_futures[a, j] = (gx + n_noise[j, 0], gy + n_noise[j, 1])

    # lanes: the target's route, alternative-intent routes, parallels, then
    # neighbor routes and random distractors
    s_lo = model.arclength(-(d.t_history - 1) * DT) - 2.0
    s_hi = model.arclength(d.t_future * DT) + 4.0
    polylines = [_route_polyline(model, s_lo, s_hi, d.nodes_per_lane)]
    alt_radius = float(rng.uniform(15.0, 30.0))
    for alt in ("left_turn", "straight", "right_turn"):
        if alt == profile.intent:
            continue
        alt_model = _PathModel(alt, speed, alt_radius, t_future_s)
        polylines.append(_route_polyline(alt_model, s_lo, s_hi, d.nodes_per_lane))
    for off in (-_LANE_OFFSET, _LANE_OFFSET):
        polylines.append(
            _route_polyline(model, s_lo, s_hi, d.nodes_per_lane, lateral_offset=off, lane_type=1))
    for n_model, pose in neighbor_models:
        ns_lo = n_model.arclength(-(d.t_history - 1) * DT) - 2.0
        ns_hi = n_model.arclength(d.t_future * DT) + 4.0
        polylines.append(
            _transform_polyline(_route_polyline(n_model, ns_lo, ns_hi, d.nodes_per_lane), pose))
    while len(polylines) < d.n_lanes:
        pose = (float(rng.uniform(-40.0, 40.0)), float(rng.uniform(-40.0, 40.0)),
                float(rng.uniform(-math.pi, math.pi)))
        lane_type = 2 if rng.random() < 0.2 else 1
        length = 8.0 if lane_type == 2 else 40.0
        template = _PathModel("straight", speed, radius, t_future_s)
        polylines.append(_transform_polyline(
            _route_polyline(template, 0.0, length, d.nodes_per_lane, lane_type=lane_type), pose))
    lane_polylines = np.zeros((d.n_lanes, d.nodes_per_lane, D_MAP), dtype=np.float64)
    for i, poly in enumerate(polylines[: d.n_lanes]):
        lane_polylines[i] = poly

    # one light placed ahead on the target route, constant state
    traffic_lights = np.zeros((d.n_lights, d.t_history, D_TL), dtype=np.float64)
    for l in range(d.n_lights):
        s_light = model.arclength(0.8 * d.t_future * DT) + 4.0 * l
        x, y, h = model.state_at_arclength(s_light)
        side = 1.0 if rng.random() < 0.5 else -1.0
        x += 3.0 * side * -math.sin(h)
        y += 3.0 * side * math.cos(h)
        state = int(rng.integers(0, 3))
        traffic_lights[l, :, 0] = x
        traffic_lights[l, :, 1] = y
        traffic_lights[l, :, 2] = 1.0
        traffic_lights[l, :, 3 + state] = 1.0

    agent_type = AGENT_TYPES[int(rng.choice(3, p=[0.8, 0.1, 0.1]))]
    frame_pose = np.array([rng.uniform(-50.0, 50.0), rng.uniform(-50.0, 50.0),
                           rng.uniform(-math.pi, math.pi)], dtype=np.float64)

    return Scene(
        target_history=target_history.astype(np.float64),
        neighbor_histories=neighbor_histories.astype(np.float64),
        lane_polylines=lane_polylines.astype(np.float64),
        traffic_light_states=traffic_lights.astype(np.float64),
        target_future=target_future.astype(np.float64),
        neighbor_futures=neighbor_futures.astype(np.float64),
        agent_type=agent_type,
        frame_pose=frame_pose.astype(np.float64),
    )


def generate_dataset(n_scenes: int, base_seed: int, profile_mix, counts) -> list:
    """Generate ``n_scenes`` scenes with per-scene seeds derived from ``base_seed``."""
    scenes = []
    for i in range(n_scenes):
        child = int(np.random.SeedSequence([int(base_seed), i]).generate_state(1)[0])
        scenes.append(generate_scene(child, profile_mix, counts))
    return scenes


# ---------------------------------------------------------------------------
# normalization
# ---------------------------------------------------------------------------

def _transform_points(xy, origin, yaw):
    c, s = math.cos(-yaw), math.sin(-yaw)
    shifted = xy - origin
    return np.stack([c * shifted[..., 0] - s * shifted[..., 1],
                     s * shifted[..., 0] + c * shifted[..., 1]], axis=-1)


def _rotate_vectors(xy, yaw):
    c, s = math.cos(-yaw), math.sin(-yaw)
    return np.stack([c * xy[..., 0] - s * xy[..., 1],
                     s * xy[..., 0] + c * xy[..., 1]], axis=-1)


def to_agent_frame(scene: Scene) -> Scene:
    """Rotate/translate a scene so the target's last observed pose is the origin.

    The last valid step of ``target_history`` defines the pose; ``frame_pose``
    is kept untouched so the original world frame stays recoverable.  Calling
    this on an already-centered scene is the identity.
    """
    if not np.all(np.isfinite(scene.frame_pose)):
        raise ValueError("frame_pose must be finite")
    valid = scene.target_history[:, 5] > 0.5
    if not valid.any():
        raise ValueError("target history has no valid steps")
    last = int(np.nonzero(valid)[0][-1])
    pose = scene.target_history[last, :3].astype(np.float64)
    if not np.all(np.isfinite(pose)):
        raise ValueError("target pose is not finite")
    origin, yaw = pose[:2], float(pose[2])

    out = scene.copy()

    def _agent_steps(arr, mask):
        a = arr.astype(np.float64)
        a[..., 0:2] = np.where(mask[..., None], _transform_points(a[..., 0:2], origin, yaw), 0.0)
        a[..., 2] = np.where(mask, _wrap_angle(a[..., 2] - yaw), 0.0)
        a[..., 3:5] = np.where(mask[..., None], _rotate_vectors(a[..., 3:5], yaw), 0.0)
        return a.astype(np.float64)

    hist_mask = out.target_history[:, 5] > 0.5
    out.target_history = _agent_steps(out.target_history, hist_mask)
    nb_mask = out.neighbor_histories[:, :, 5] > 0.5
    out.neighbor_histories = _agent_steps(out.neighbor_histories, nb_mask)

    lanes = out.lane_polylines.astype(np.float64)
    lane_mask = lanes[..., 4] > 0.5
    lanes[..., 0:2] = np.where(lane_mask[..., None], _transform_points(lanes[..., 0:2], origin, yaw), 0.0)
    lanes[..., 2:4] = np.where(lane_mask[..., None], _rotate_vectors(lanes[..., 2:4], yaw), 0.0)
    out.lane_polylines = lanes.astype(np.float64)

    lights = out.traffic_light_states.astype(np.float64)
    tl_mask = lights[..., 2] > 0.5
    lights[..., 0:2] = np.where(tl_mask[..., None], _transform_points(lights[..., 0:2], origin, yaw), 0.0)
    out.traffic_light_states = lights.astype(np.float64)

    fut = out.target_future.astype(np.float64)
    fut[:, 0:2] = _transform_points(fut[:, 0:2], origin, yaw)
    fut[:, 2] = _wrap_angle(fut[:, 2] - yaw)
    fut[:, 3:5] = _rotate_vectors(fut[:, 3:5], yaw)
    out.target_future = fut.astype(np.float64)

    nfut = out.neighbor_futures.astype(np.float64)
    nb_valid = scene.neighbor_histories[:, :, 5].any(axis=1)
    nfut = np.where(nb_valid[:, None, None], _transform_points(nfut, origin, yaw), 0.0)
    out.neighbor_futures = nfut.astype(np.float64)
    return out


# ---------------------------------------------------------------------------
# file IO (UTF-8, one JSON object per line)
# ---------------------------------------------------------------------------

_FILE_KEYS = ("target_history", "neighbor_histories", "lane_polylines",
              "traffic_lights", "target_future", "neighbor_futures",
              "agent_type", "frame_pose", "dims")


def _scene_record(scene: Scene) -> dict:
    return {
        "target_history": scene.target_history.tolist(),
        "neighbor_histories": scene.neighbor_histories.tolist(),
        "lane_polylines": scene.lane_polylines.tolist(),
        "traffic_lights": scene.traffic_light_states.tolist(),
        "target_future": scene.target_future.tolist(),
        "neighbor_futures": scene.neighbor_futures.tolist(),
        "agent_type": scene.agent_type,
        "frame_pose": scene.frame_pose.tolist(),
        "dims": scene.dims.as_dict(),
    }


def write_scenes(path, scenes) -> None:
    """Write scenes as line-delimited JSON. All scenes must share dimensions."""
    dims = None
    for s in scenes:
        if dims is None:
            dims = s.dims
        elif s.dims != dims:
            raise SceneFormatError(f"scene dims differ: {s.dims} vs {dims}")
    with open(path, "w", encoding="utf-8") as f:
        for s in scenes:
            f.write(json.dumps(_scene_record(s)) + "\n")


def _parse_scene(obj: dict, line_no: int) -> Scene:
    for key in _FILE_KEYS:
        if key not in obj:
            raise SceneParseError(line_no, f"missing key {key!r}")
    try:
        dims = SceneDims(**{k: int(v) for k, v in obj["dims"].items()})
        d = dims
        arrays = {
            "target_history": (obj["target_history"], (d.t_history, D_AGENT)),
            "neighbor_histories": (obj["neighbor_histories"], (d.n_agents, d.t_history, D_AGENT)),
            "lane_polylines": (obj["lane_polylines"], (d.n_lanes, d.nodes_per_lane, D_MAP)),
            "traffic_lights": (obj["traffic_lights"], (d.n_lights, d.t_history, D_TL)),
            "target_future": (obj["target_future"], (d.t_future, 5)),
            "neighbor_futures": (obj["neighbor_futures"], (d.n_agents, d.t_future, 2)),
        }
        parsed = {}
        for name, (value, shape) in arrays.items():
            arr = np.asarray(value, dtype=np.float64)
            if arr.shape != shape:
                raise SceneParseError(line_no, f"{name} has shape {arr.shape}, expected {shape}")
            parsed[name] = arr
        agent_type = str(obj["agent_type"])
        if agent_type not in AGENT_TYPES:
            raise SceneParseError(line_no, f"unknown agent_type {agent_type!r}")
        frame_pose = np.asarray(obj["frame_pose"], dtype=np.float64)
        if frame_pose.shape != (3,):
            raise SceneParseError(line_no, "frame_pose must have 3 entries")
    except SceneParseError:
        raise
    except (TypeError, ValueError, KeyError) as exc:
        raise SceneParseError(line_no, str(exc)) from exc
    return Scene(
        target_history=parsed["target_history"],
        neighbor_histories=parsed["neighbor_histories"],
        lane_polylines=parsed["lane_polylines"],
        traffic_light_states=parsed["traffic_lights"],
        target_future=parsed["target_future"],
        neighbor_futures=parsed["neighbor_futures"],
        agent_type=agent_type,
        frame_pose=frame_pose,
    )


def read_scenes(path) -> list:
    """Read a line-delimited scene file; raises SceneParseError with the line number."""
    scenes = []
    with open(path, "r", encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise SceneParseError(line_no, f"invalid JSON ({exc.msg})") from exc
            if not isinstance(obj, dict):
                raise SceneParseError(line_no, "expected a JSON object")
            scenes.append(_parse_scene(obj, line_no))
    return scenes


def scene_io(path, scenes=None, mode: str = "read"):
    """Single-entry scene file IO: mode 'read' returns scenes, 'write' stores them."""
    if mode == "read":
        return read_scenes(path)
    if mode == "write":
        if scenes is None:
            raise ValueError("write mode requires scenes")
        write_scenes(path, scenes)
        return None
    raise ValueError(f"unknown mode {mode!r}")
