"""Synthetic bimanual environment: tools, pokes, wrench synthesis, success checks.

Both arms' end-effector frames are known (proprioception); the tool arm sits
at the world origin and the probe arm is re-placed per poke so the probe tip
meets the sampled tool surface point with its axis anti-parallel to the
surface normal. Observations are synthesized analytically from the point
contact model (equal and opposite normal forces), not from a physics engine.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .mechanics import (FRAME_PROBE_EE, FRAME_TOOL_EE, NoiseSpec, Wrench,
                        contact_wrench, inject_noise)
from .mesh import TriMesh, count_penetrating
from .meshgen import extrude_polygon, revolve_profile
from .scope import ActionObservation, ObjectModel
from .transforms import Pose2, RigidTransform, wrap_angle

DEFAULT_FORCE_N = 3.0  # applied normal force per poke

# wrench tool geometry (meters)
JAW_OPENING = 12.7e-3
JAW_FLOOR_Z = 58e-3
JAW_TOP_Z = 80e-3
SCREW_SIDE = 8.9e-3
SCREW_SIDE_LOOSE = 5.7e-3  # cylinder diameter for the 3.5 mm/side variant

_MM = 1e-3

_WRENCH_OUTLINE = np.array([
    (-8, -40), (8, -40), (8, 40), (14, 40), (14, 80), (6.35, 80),
    (6.35, 58), (-6.35, 58), (-6.35, 80), (-14, 80), (-14, 40), (-8, 40),
]) * _MM

_HEXKEY_OUTLINE = np.array([
    (-4, -54), (36, -54), (36, -46), (4, -46), (4, 46), (-4, 46),
]) * _MM

_PAWL_OUTLINE = np.array([
    (-30, -21), (30, -21), (30, -9), (15, -9), (15, 1), (0, 1),
    (0, 11), (-15, 11), (-15, 21), (-30, 21),
]) * _MM

PROBE_RADIUS = 4e-3
PROBE_BASE_Z = -30e-3
PROBE_TIP_Z = 96e-3  # apex of the rounded tip


def _gear_outline(n_teeth: int = 8, r_root: float = 24e-3, r_tip: float = 30e-3) -> np.ndarray:
    pts = []
    pitch = 2.0 * math.pi / n_teeth
    for k in range(n_teeth):
        a0 = k * pitch
        for r, frac in ((r_root, 0.0), (r_tip, 0.2), (r_tip, 0.47), (r_root, 0.67)):
            a = a0 + frac * pitch
            pts.append((r * math.cos(a), r * math.sin(a)))
    return np.asarray(pts)


def make_tool_mesh(name: str) -> TriMesh:
    """Procedural watertight mesh for a named tool (or the probe)."""
    if name == "wrench":
        return extrude_polygon(_WRENCH_OUTLINE, -3e-3, 3e-3)
    if name == "hexkey":
        return extrude_polygon(_HEXKEY_OUTLINE, -3e-3, 3e-3)
    if name == "pawl":
        return extrude_polygon(_PAWL_OUTLINE, -3e-3, 3e-3)
    if name == "gear":
        return extrude_polygon(_gear_outline(), -4e-3, 4e-3)
    if name == "probe":
        r = PROBE_RADIUS
        shoulder = PROBE_TIP_Z - r
        arc = [(r * math.cos(a), shoulder + r * math.sin(a))
               for a in np.linspace(0.0, math.pi / 2, 7)[:-1]]
        profile = [(0.0, PROBE_BASE_Z), (r, PROBE_BASE_Z)] + arc + [(0.0, PROBE_TIP_Z)]
        return revolve_profile(profile, segments=24)
    raise KeyError(f"unknown tool {name!r}")


TOOL_NAMES = ("wrench", "hexkey", "pawl", "gear")

# curated poke sites: approximate (point, outward normal), snapped to the
# sampled surface at action-generation time
CURATED_POKES = {
    "wrench": [
        ((8e-3, 0.0, -10e-3), (1, 0, 0)),
        ((-8e-3, 0.0, 15e-3), (-1, 0, 0)),
        ((2e-3, 0.0, -40e-3), (0, 0, -1)),
        ((10e-3, 0.0, 80e-3), (0, 0, 1)),
        ((-10e-3, 0.0, 80e-3), (0, 0, 1)),
    ],
    "hexkey": [
        ((-4e-3, 0.0, 0.0), (-1, 0, 0)),
        ((4e-3, 0.0, 10e-3), (1, 0, 0)),
        ((0.0, 0.0, 46e-3), (0, 0, 1)),
        ((20e-3, 0.0, -54e-3), (0, 0, -1)),
        ((36e-3, 0.0, -50e-3), (1, 0, 0)),
    ],
    "pawl": [
        ((0.0, 0.0, -21e-3), (0, 0, -1)),
        ((-30e-3, 0.0, 0.0), (-1, 0, 0)),
        ((30e-3, 0.0, -15e-3), (1, 0, 0)),
        ((-22e-3, 0.0, 21e-3), (0, 0, 1)),
        ((7e-3, 0.0, 1e-3), (0, 0, 1)),
    ],
    # three tooth tips and two root arcs, radial normals
    "gear": [
        ((30e-3 * math.cos(a), 0.0, 30e-3 * math.sin(a)),
         (math.cos(a), 0.0, math.sin(a)))
        for a in (math.radians(15), math.radians(150), math.radians(240))
    ] + [
        ((24e-3 * math.cos(a), 0.0, 24e-3 * math.sin(a)),
         (math.cos(a), 0.0, math.sin(a)))
        for a in (math.radians(37.6), math.radians(217.6))
    ],
}


@dataclass(frozen=True)
class PokeAction:
    """One quasi-static poke: where the probe presses and how hard."""

    contact_point: np.ndarray   # tool body frame, on the surface
    normal: np.ndarray          # outward unit normal at the contact
    approach_dir: np.ndarray    # probe axis direction in tool body frame (-normal)
    probe_contact: np.ndarray   # contact point on the probe, probe body frame
    force_mag: float = DEFAULT_FORCE_N

    def __post_init__(self):
        for name in ("contact_point", "normal", "approach_dir", "probe_contact"):
            v = np.asarray(getattr(self, name), dtype=float).reshape(3)
            v.setflags(write=False)
            object.__setattr__(self, name, v)
        if abs(np.linalg.norm(self.normal) - 1.0) > 1e-9:
            raise ValueError("normal must be unit length")
        if self.force_mag < 0:
            raise ValueError("force magnitude must be non-negative")


@dataclass(frozen=True)
class TrialSpec:
    tool: str
    actions: tuple
    seed: int = 0
    noise: NoiseSpec = field(default_factory=NoiseSpec)
    gt_tool: Pose2 = field(default_factory=Pose2)
    gt_probe: Pose2 = field(default_factory=Pose2)

    def __post_init__(self):
        for gt in (self.gt_tool, self.gt_probe):
            if gt.as_array().any():
                raise ValueError("ground-truth in-grasp poses are fixed to zero")


_PROBE_TIP = np.array([0.0, 0.0, PROBE_TIP_Z])


def _snap_to_surface(model: ObjectModel, point, normal) -> tuple[np.ndarray, np.ndarray]:
    """Nearest surface sample whose normal agrees with the requested one."""
    n = np.asarray(normal, dtype=float)
    n = n / np.linalg.norm(n)
    ok = model.surface.normals @ n > 0.9
    if not ok.any():
        raise ValueError("no surface sample matches the requested normal")
    cand = np.flatnonzero(ok)
    d = np.linalg.norm(model.surface.points[cand] - np.asarray(point, dtype=float), axis=1)
    i = cand[np.argmin(d)]
    return model.surface.points[i].copy(), model.surface.normals[i].copy()


def curated_actions(model: ObjectModel, force_mag: float = DEFAULT_FORCE_N,
                    indices=None) -> list[PokeAction]:
    specs = CURATED_POKES[model.name]
    if indices is not None:
        specs = [specs[i] for i in indices]
    actions = []
    for point, normal in specs:
        p, n = _snap_to_surface(model, point, normal)
        actions.append(PokeAction(p, n, -n, _PROBE_TIP, force_mag))
    return actions


def generate_action(model: ObjectModel, strategy: str, rng,
                    probe_model: ObjectModel | None = None,
                    force_mag: float = DEFAULT_FORCE_N, max_tries: int = 100) -> PokeAction:
    """Sample one poke. Random pokes are area-uniform over the surface and are
    re-drawn while the ground-truth probe placement would interpenetrate the tool."""
    if strategy == "curated":
        return curated_actions(model, force_mag)[int(rng.integers(len(CURATED_POKES[model.name])))]
    if strategy != "random":
        raise ValueError(f"unknown strategy {strategy!r}")
    action = None
    for _ in range(max_tries):
        i = int(rng.integers(len(model.surface)))
        action = PokeAction(model.surface.points[i], model.surface.normals[i],
                            -model.surface.normals[i], _PROBE_TIP, force_mag)
        if probe_model is None:
            return action
        ee_probe = place_probe(action, RigidTransform.identity(), Pose2(), Pose2())
        hits = count_penetrating(probe_model.pen_points, model.mesh,
                                 ee_probe, delta_pen=1e-4)
        if hits == 0:
            return action
    return action


def place_probe(action: PokeAction, ee_tool: RigidTransform,
                gt_tool: Pose2, gt_probe: Pose2) -> RigidTransform:
    """Probe end-effector world pose placing the tip on the poked point."""
    tool_world = ee_tool @ gt_tool.as_transform()
    c_w = tool_world.apply(action.contact_point)
    n_w = tool_world.rotate(action.normal)
    a = -n_w  # probe body +z in world: axis points into the surface
    y_ref = ee_tool.rotation[:, 1]
    if abs(float(y_ref @ a)) > 0.99:
        y_ref = ee_tool.rotation[:, 0]
    y = y_ref - (y_ref @ a) * a
    y /= np.linalg.norm(y)
    x = np.cross(y, a)
    R = np.column_stack([x, y, a])
    tip_in_ee = gt_probe.as_transform().apply(action.probe_contact)
    return RigidTransform(R, c_w - R @ tip_in_ee)


def synthesize_observation(action: PokeAction, ee_tool: RigidTransform,
                           ee_probe: RigidTransform, gt_tool: Pose2, gt_probe: Pose2,
                           noise: NoiseSpec, rng=None) -> ActionObservation:
    """Equal-and-opposite point-contact wrenches at both wrists, then noise."""
    tool_world = ee_tool @ gt_tool.as_transform()
    c_w = tool_world.apply(action.contact_point)
    n_w = tool_world.rotate(action.normal)
    f_tool_w = -action.force_mag * n_w  # poke pushes into the tool

    r_t = ee_tool.inverse().apply(c_w)
    f_t = ee_tool.rotation.T @ f_tool_w
    gamma_t = contact_wrench(r_t, f_t, FRAME_TOOL_EE)

    r_p = ee_probe.inverse().apply(c_w)
    f_p = ee_probe.rotation.T @ (-f_tool_w)
    gamma_p = contact_wrench(r_p, f_p, FRAME_PROBE_EE)

    if noise.n_pct > 0.0:
        if rng is None:
            rng = np.random.default_rng(noise.seed)
        gamma_t = inject_noise(gamma_t, noise, rng)
        gamma_p = inject_noise(gamma_p, noise, rng)
    return ActionObservation(gamma_t, gamma_p, ee_tool, ee_probe)


def pose_error(estimate: Pose2, truth: Pose2) -> tuple[float, float]:
    """(translation error in meters, signed wrapped rotation error in radians)."""
    dx, dz = estimate.x - truth.x, estimate.z - truth.z
    return math.hypot(dx, dz), wrap_angle(estimate.theta - truth.theta)


# -- task-based success check ---------------------------------------------------


@dataclass(frozen=True)
class TaskSpec:
    """Surround-the-screw-head check: jaw mouth vs (possibly misplaced) screw."""

    opening: float = JAW_OPENING
    side: float = SCREW_SIDE
    shape: str = "square"          # or "cylinder" (loose real-world variant)
    screw_center_z: float = 69e-3  # nominal engagement depth in the jaw
    floor_z: float = JAW_FLOOR_Z
    top_z: float = JAW_TOP_Z

    def __post_init__(self):
        if self.opening <= self.side:
            raise ValueError("jaw opening must exceed the screw size")
        if self.shape not in ("square", "cylinder"):
            raise ValueError(f"unknown screw shape {self.shape!r}")

    @property
    def tolerance(self) -> float:
        """Clearance per side at perfect alignment."""
        return (self.opening - self.side) / 2.0

    @classmethod
    def loose(cls) -> "TaskSpec":
        return cls(side=SCREW_SIDE_LOOSE, shape="cylinder")


def check_task_success(estimate_t: Pose2, truth_t: Pose2, task: TaskSpec) -> bool:
    """Plan in the estimated frame, execute against ground truth.

    The screw, nominally centered in the jaw mouth, lands displaced by the
    pose discrepancy estimate^-1 ∘ truth; success requires the displaced head
    strictly inside the mouth slot.
    """
    d = estimate_t.inverse().compose(truth_t)
    c, s = math.cos(d.theta), math.sin(d.theta)
    cx = d.x + (-s) * task.screw_center_z
    cz = d.z + c * task.screw_center_z
    half_gap = task.opening / 2.0
    if task.shape == "cylinder":
        r = task.side / 2.0
        return (abs(cx) + r < half_gap
                and cz - r > task.floor_z and cz + r < task.top_z)
    h = task.side / 2.0
    corners = np.array([[h, h], [h, -h], [-h, h], [-h, -h]])
    rot = np.array([[c, -s], [s, c]])
    pts = corners @ rot.T + [cx, cz]
    return bool(
        np.all(np.abs(pts[:, 0]) < half_gap)
        and np.all(pts[:, 1] > task.floor_z)
        and np.all(pts[:, 1] < task.top_z)
    )
