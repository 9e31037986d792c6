"""Full estimation pipeline: build object models, run trials, write results.

A trial initializes one pose-pair population, then folds the per-action
filter over a fixed poke sequence, carrying the population and contact-cloud
memory between actions. Everything is reproducible from (config, seed): RNG
streams are derived from integer key tuples, never from global state.
"""

from __future__ import annotations

import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import memory as memory_mod
from .cpf import ClpSupport, CpfParams
from .mechanics import NoiseSpec, SensorNoise
from .mesh import TriMesh, sample_surface
from .scope import (ActionObservation, FilterConfig, LossWeights, ObjectModel,
                    PairPopulation, estimate_from_population, init_population,
                    scope_action)
from .segmentation import SegmentationParams, segment_tool
from .simenv import (PokeAction, TaskSpec, check_task_success, curated_actions,
                     generate_action, make_tool_mesh, place_probe, pose_error,
                     synthesize_observation)
from .transforms import Pose2, RigidTransform

RAD2DEG = 180.0 / math.pi


def build_object_model(name: str, mesh: TriMesh, density: float,
                       seg_params: SegmentationParams, sample_seed: int = 0,
                       k_neighbors: int = 8, max_pen_points: int = 700) -> ObjectModel:
    """Sample, segment, and index one object for use by the filters."""
    surface = sample_surface(mesh, density, seed=sample_seed)
    faces = segment_tool(surface, seg_params)
    support = ClpSupport(faces, k_neighbors=k_neighbors)
    n = len(surface)
    pen = np.unique(np.linspace(0, n - 1, min(max_pen_points, n)).astype(np.int64))
    return ObjectModel(name=name, mesh=mesh, surface=surface, faces=faces,
                       support=support, pen_indices=pen)


@dataclass
class ActionRecord:
    action_index: int
    estimate_tool: Pose2
    estimate_probe: Pose2
    dropout_fired: bool
    task_success: bool
    trace: list = field(default_factory=list)


@dataclass
class TrialResult:
    trial: int
    records: list[ActionRecord]
    memory: memory_mod.MemoryState

    @property
    def final(self) -> ActionRecord:
        return self.records[-1]


def run_trial(tool: ObjectModel, probe: ObjectModel, actions: list[PokeAction],
              weights: LossWeights, cfg: FilterConfig, cpf_params: CpfParams,
              sensor: SensorNoise, noise: NoiseSpec, task: TaskSpec,
              base_seed: int, trial: int, include_gt: bool = False,
              collect_trace: bool = False) -> TrialResult:
    entropy = int(np.random.SeedSequence((base_seed, trial)).generate_state(1)[0])
    gt_t, gt_p = Pose2(), Pose2()
    ee_tool = RigidTransform.identity()

    pop = init_population(cfg, np.random.default_rng(
        np.random.SeedSequence((entropy, 900))), include_gt=include_gt)
    state = memory_mod.MemoryState()
    records = []
    for a_idx, action in enumerate(actions):
        ee_probe = place_probe(action, ee_tool, gt_t, gt_p)
        obs = synthesize_observation(
            action, ee_tool, ee_probe, gt_t, gt_p, noise,
            rng=np.random.default_rng(np.random.SeedSequence((entropy, 901, a_idx))))
        pop, state, info = scope_action(
            pop, obs, tool, probe, state, a_idx, weights, cfg, cpf_params,
            sensor, entropy, collect_trace=collect_trace)
        est_t, est_p = estimate_from_population(pop, cfg)
        records.append(ActionRecord(
            action_index=a_idx, estimate_tool=est_t, estimate_probe=est_p,
            dropout_fired=info["dropout_fired"],
            task_success=check_task_success(est_t, gt_t, task),
            trace=info["trace"]))
    return TrialResult(trial=trial, records=records, memory=state)


# -- experiment-level runner ----------------------------------------------------


def result_rows(result: TrialResult, gt_t: Pose2 = Pose2(), gt_p: Pose2 = Pose2()) -> list[dict]:
    """Flatten one trial into per-(action, object) CSV rows."""
    rows = []
    for rec in result.records:
        for obj, est, gt in (("tool", rec.estimate_tool, gt_t),
                             ("probe", rec.estimate_probe, gt_p)):
            trans, rot = pose_error(est, gt)
            rows.append({
                "trial": result.trial,
                "action_index": rec.action_index,
                "object": obj,
                "x_err_cm": (est.x - gt.x) * 100.0,
                "z_err_cm": (est.z - gt.z) * 100.0,
                "theta_err_deg": (est.theta - gt.theta) * RAD2DEG,
                "trans_err_cm": trans * 100.0,
                "rot_err_deg": rot * RAD2DEG,
                "task_success": int(rec.task_success),
            })
    return rows


ROW_FIELDS = ["trial", "action_index", "object", "x_err_cm", "z_err_cm",
              "theta_err_deg", "trans_err_cm", "rot_err_deg", "task_success"]


def summarize(rows: list[dict], n_actions: int) -> dict:
    """Final-action error statistics and task success rate."""
    final = [r for r in rows if r["action_index"] == n_actions - 1]

    def stats(obj, key):
        vals = np.array([r[key] for r in final if r["object"] == obj])
        std = float(np.std(vals, ddof=1)) if len(vals) > 1 else 0.0
        return {"mean": float(np.mean(vals)), "std": std}

    tool_final = [r for r in final if r["object"] == "tool"]
    return {
        "tool": {"trans_err_cm": stats("tool", "trans_err_cm"),
                 "rot_err_deg": stats("tool", "rot_err_deg")},
        "probe": {"trans_err_cm": stats("probe", "trans_err_cm"),
                  "rot_err_deg": stats("probe", "rot_err_deg")},
        "task_success_rate": float(np.mean([r["task_success"] for r in tool_final])),
        "n_trials": len(tool_final),
        "n_actions": n_actions,
    }


SUMMARY_SCHEMA = {
    "type": "object",
    "required": ["manifest", "tool", "probe", "task_success_rate",
                 "n_trials", "n_actions"],
    "properties": {
        "manifest": {"type": "string"},
        "task_success_rate": {"type": "number", "minimum": 0, "maximum": 1},
        "n_trials": {"type": "integer", "minimum": 1},
        "n_actions": {"type": "integer", "minimum": 1},
        **{
            obj: {
                "type": "object",
                "required": ["trans_err_cm", "rot_err_deg"],
                "properties": {
                    k: {
                        "type": "object",
                        "required": ["mean", "std"],
                        "properties": {"mean": {"type": "number"},
                                       "std": {"type": "number"}},
                    }
                    for k in ("trans_err_cm", "rot_err_deg")
                },
            }
            for obj in ("tool", "probe")
        },
    },
}


def write_rows_csv(rows: list[dict], path: str, manifest_hash: str) -> None:
    with open(path, "w", encoding="ascii") as fh:
        fh.write(",".join(ROW_FIELDS) + "\n")
        for r in rows:
            fh.write(",".join(_fmt(r[k]) for k in ROW_FIELDS) + "\n")


def write_trace_csv(results: list[TrialResult], path: str) -> None:
    cols = ["trial", "action", "step", "pair", "l_p", "l_c", "l_f", "l_gamma",
            "l_m", "s_opp", "tool_x", "tool_z", "tool_theta",
            "probe_x", "probe_z", "probe_theta"]
    with open(path, "w", encoding="ascii") as fh:
        fh.write(",".join(cols) + "\n")
        for res in results:
            for rec in res.records:
                for step in rec.trace:
                    n = len(step["s_opp"])
                    for j in range(n):
                        vals = [res.trial, rec.action_index, step["step"], j,
                                step["l_p"][j], step["l_c"][j], step["l_f"][j],
                                step["l_gamma"][j], step["l_m"][j], step["s_opp"][j],
                                *step["poses_t"][j], *step["poses_p"][j]]
                        fh.write(",".join(_fmt(v) for v in vals) + "\n")


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return f"{float(v):.9g}"


def dump_segmentation_csv(model: ObjectModel, path: str) -> None:
    """Face-labeled point cloud (x,y,z,nx,ny,nz,face_id); noise gets -1."""
    pts, nrm = model.surface.points, model.surface.normals
    with open(path, "w", encoding="ascii") as fh:
        fh.write("x,y,z,nx,ny,nz,face_id\n")
        for i in range(len(pts)):
            fh.write(",".join(_fmt(v) for v in (*pts[i], *nrm[i])) +
                     f",{int(model.faces.point_face[i])}\n")


@dataclass
class Experiment:
    """One fully-specified run: models, actions, parameters, seeds."""

    tool: ObjectModel
    probe: ObjectModel
    actions: list[PokeAction]
    weights: LossWeights
    cfg: FilterConfig
    cpf_params: CpfParams
    sensor: SensorNoise
    noise: NoiseSpec
    task: TaskSpec
    seed: int
    trials: int
    include_gt: bool = False
    collect_trace: bool = False

    def run_one(self, trial: int) -> TrialResult:
        return run_trial(self.tool, self.probe, self.actions, self.weights,
                         self.cfg, self.cpf_params, self.sensor, self.noise,
                         self.task, self.seed, trial, self.include_gt,
                         self.collect_trace)

    def run(self, jobs: int = 1) -> list[TrialResult]:
        if jobs <= 1 or self.trials == 1:
            return [self.run_one(t) for t in range(self.trials)]
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(self.run_one, range(self.trials)))
