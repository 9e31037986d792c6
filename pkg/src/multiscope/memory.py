"""Contact clouds accumulated across actions, and their consistency loss.

Every action contributes the expected contact point of each retained pose
pair, recorded in the end-effector frame of the arm that felt it (the frame
the contact evidence is physically tied to). Scoring a candidate pose pulls
each cloud point into the object's body frame through that pose and takes
the distance to the surface: points the candidate surface cannot touch are
penalized. Actions whose evidence a later action contradicts can be dropped
from scoring while staying in the record for audit.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field, replace

import numpy as np

from .mesh import TriMesh
from .transforms import Pose2, invert_poses, apply_poses


@dataclass(frozen=True)
class ContactCloud:
    """Per-object evidence: points (EE frame), weights, and source actions."""

    points: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))
    weights: np.ndarray = field(default_factory=lambda: np.zeros(0))
    actions: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    def appended(self, points, weights, action_id: int) -> "ContactCloud":
        points = np.asarray(points, dtype=float).reshape(-1, 3)
        weights = np.asarray(weights, dtype=float).reshape(-1)
        if np.any(weights <= 0):
            raise ValueError("cloud weights must be positive")
        return ContactCloud(
            np.vstack([self.points, points]),
            np.concatenate([self.weights, weights]),
            np.concatenate([self.actions, np.full(len(points), action_id, dtype=np.int64)]),
        )

    def __len__(self) -> int:
        return len(self.points)


@dataclass(frozen=True)
class MemoryState:
    tool_cloud: ContactCloud = field(default_factory=ContactCloud)
    probe_cloud: ContactCloud = field(default_factory=ContactCloud)
    dropped_actions: frozenset = frozenset()
    s_bar_prev: float | None = None
    prev_action_id: int | None = None


def softmin_weights(costs, beta: float) -> np.ndarray:
    """Normalized softmin weights exp(-beta * cost) / sum."""
    c = np.asarray(costs, dtype=float)
    w = np.exp(-beta * (c - c.min()))
    return w / w.sum()


def update_contact_cloud(state: MemoryState, action_id: int, s_c,
                         mean_r_tool, mean_r_probe, beta: float) -> MemoryState:
    """Append the top pairs' expected contact points, softmin-weighted by S_C.

    mean_r_* are the score-weighted mean contact locations of each retained
    pair's belief, in the owning arm's end-effector frame.
    """
    w = softmin_weights(s_c, beta)
    return replace(
        state,
        tool_cloud=state.tool_cloud.appended(mean_r_tool, w, action_id),
        probe_cloud=state.probe_cloud.appended(mean_r_probe, w, action_id),
    )


def _active(cloud: ContactCloud, dropped) -> tuple[np.ndarray, np.ndarray]:
    if len(cloud) == 0:
        return np.zeros((0, 3)), np.zeros(0)
    keep = ~np.isin(cloud.actions, list(dropped)) if dropped else np.ones(len(cloud), bool)
    return cloud.points[keep], cloud.weights[keep]


def loss_memory_batch(poses, cloud: ContactCloud, dropped, mesh: TriMesh) -> np.ndarray:
    """Σ w |SDF(pose^-1 · point)| for each candidate pose (one object's term)."""
    poses = np.asarray(poses, dtype=float).reshape(-1, 3)
    pts, w = _active(cloud, dropped)
    if len(pts) == 0:
        return np.zeros(len(poses))
    body = apply_poses(invert_poses(poses), np.broadcast_to(pts, (len(poses), len(pts), 3)))
    sd = mesh.signed_distances(body.reshape(-1, 3)).reshape(len(poses), len(pts))
    return np.abs(sd) @ w


def loss_memory(pose_t: Pose2, pose_p: Pose2, state: MemoryState,
                mesh_t: TriMesh, mesh_p: TriMesh) -> float:
    """Memory loss of one pose pair; zero for an empty cloud."""
    lt = loss_memory_batch(pose_t.as_array()[None], state.tool_cloud,
                           state.dropped_actions, mesh_t)
    lp = loss_memory_batch(pose_p.as_array()[None], state.probe_cloud,
                           state.dropped_actions, mesh_p)
    return float(lt[0] + lp[0])


def check_dropout(s_bar_0: float, state: MemoryState, delta_c: float) -> tuple[bool, MemoryState]:
    """Fire when the new action's first consistency score degrades past delta_c.

    On fire the previous action is excluded from all future memory scoring.
    Never fires on the first action (no previous score to compare).
    """
    if state.s_bar_prev is None:
        return False, state
    if s_bar_0 > delta_c * state.s_bar_prev:
        return True, replace(
            state,
            dropped_actions=state.dropped_actions | {state.prev_action_id},
        )
    return False, state


def dump_contact_cloud(state: MemoryState, out_dir, prefix: str = "cloud") -> list[str]:
    """Write per-object cloud CSVs (action, x, y, z, weight, dropped)."""
    paths = []
    for name, cloud in (("tool", state.tool_cloud), ("probe", state.probe_cloud)):
        path = os.path.join(out_dir, f"{prefix}_{name}.csv")
        with open(path, "w", encoding="ascii") as fh:
            fh.write("action,x,y,z,weight,dropped\n")
            for i in range(len(cloud)):
                a = int(cloud.actions[i])
                p = cloud.points[i]
                fh.write(
                    f"{a},{p[0]:.9g},{p[1]:.9g},{p[2]:.9g},"
                    f"{cloud.weights[i]:.9g},{int(a in state.dropped_actions)}\n"
                )
        paths.append(path)
    return paths
