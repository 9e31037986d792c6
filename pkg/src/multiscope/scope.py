"""Object-pose particle filter over tool/probe pose pairs.

Each candidate is a pair of in-grasp poses, one per arm. A step scores every
pair with penetration, contact-consistency, force-alignment, wrench, and
memory losses, then resamples with softmin weights and perturbs with an
annealed noise model. Scores are costs: lower is better. Divergence is
prevented by keeping the best pairs of the last and current step, so the
population's best stored score never increases within an action.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from . import memory as memory_mod
from .cpf import ClpSupport, CpfParams, run_cpf_batch
from .mechanics import SensorNoise, Wrench
from .mesh import SurfacePointSet, TriMesh, penetration_count
from .segmentation import FaceSet
from .transforms import Pose2, RigidTransform, wrap_angle


@dataclass(frozen=True)
class LossWeights:
    eta_p: float = 1.0
    eta_c: float = 50.0
    eta_f: float = 0.2
    eta_gamma: float = 0.5

    def __post_init__(self):
        vals = (self.eta_p, self.eta_c, self.eta_f, self.eta_gamma)
        if any(v < 0 for v in vals):
            raise ValueError("loss weights must be non-negative")
        if not any(v > 0 for v in vals):
            raise ValueError("at least one loss weight must be positive")


@dataclass(frozen=True)
class FilterConfig:
    n_opp: int = 50
    n_os: int = 10             # scope steps per action
    n_top: int = 10            # pairs feeding memory, dropout stats, estimates
    n_keep: int | None = None  # union survivors in prevent_divergence (default n_opp)
    eps_pp: int = 10           # penetration count allowed before L_P engages
    beta: float = 5.0          # softmin temperature for resampling and memory
    sigma_x: float = 0.01
    sigma_z: float = 0.01
    sigma_theta: float = math.radians(15.0)
    gamma_anneal: float = 0.8  # per-step std decay within an action
    boost_factor: float = 3.0  # noise multiplier after a memory dropout
    delta_c: float = 4.0       # dropout threshold ratio
    init_x: float = 0.03
    init_z: float = 0.03
    init_theta: float = math.radians(30.0)
    use_memory: bool = True
    wrench_norm: str = "l1"
    delta_pen: float = 1e-3
    estimate: str = "elite"    # or "topk_mean"

    def __post_init__(self):
        if not (self.n_opp >= self.n_top >= 1):
            raise ValueError("need n_opp >= n_top >= 1")
        if not (0.0 < self.gamma_anneal <= 1.0):
            raise ValueError("gamma_anneal must be in (0, 1]")
        if self.delta_c <= 1.0:
            raise ValueError("delta_c must exceed 1")
        if self.n_keep is not None and not (self.n_opp >= self.n_keep >= 1):
            raise ValueError("need n_opp >= n_keep >= 1")

    @property
    def keep_count(self) -> int:
        return self.n_opp if self.n_keep is None else self.n_keep


@dataclass(frozen=True)
class ObjectModel:
    """Everything the filter needs to know about one grasped object."""

    name: str
    mesh: TriMesh
    surface: SurfacePointSet
    faces: FaceSet
    support: ClpSupport
    pen_indices: np.ndarray  # surface subsample used for penetration counting

    @property
    def pen_points(self) -> np.ndarray:
        return self.surface.points[self.pen_indices]


@dataclass(frozen=True)
class ActionObservation:
    """One poke's measurements: wrenches plus both arms' proprioceptive poses."""

    gamma_tool: Wrench
    gamma_probe: Wrench
    ee_tool: RigidTransform
    ee_probe: RigidTransform

    def __post_init__(self):
        if self.gamma_tool.frame != "tool-ee" or self.gamma_probe.frame != "probe-ee":
            raise ValueError("observation wrenches must be tagged tool-ee / probe-ee")


@dataclass
class PairPopulation:
    poses_t: np.ndarray  # (n, 3)
    poses_p: np.ndarray  # (n, 3)
    scores: np.ndarray   # stored selection scores (costs)
    s_c: np.ndarray      # last consistency scores

    def __len__(self) -> int:
        return len(self.poses_t)


@dataclass
class OppPair:
    """One scored pose-pair hypothesis (trace/debug view of population rows)."""

    pose_t: Pose2
    pose_p: Pose2
    l_p: float = 0.0
    l_c: float = 0.0
    l_f: float = 0.0
    l_gamma: float = 0.0
    l_m: float = 0.0
    s_c: float = 0.0
    s_opp: float = 0.0


# -- loss primitives (Eqs. on score components) --------------------------------


def loss_penetration(n_pp: int, eps_pp: int) -> float:
    """max(0, N_pp - eps_pp)."""
    return float(max(0, n_pp - eps_pp))


def loss_contact(s_t, r_t, s_p, r_p) -> float:
    """Pairwise score-weighted distance between the two arms' contact beliefs."""
    d = np.linalg.norm(np.asarray(r_t)[:, None, :] - np.asarray(r_p)[None, :, :], axis=2)
    return float(np.asarray(s_t) @ d @ np.asarray(s_p))

def loss_force_align(s_t, w_t, s_p, w_p) -> float:
    """Pairwise score-weighted violation of force opposition (||-w_t - w_p||)."""
    m = np.linalg.norm(np.asarray(w_t)[:, None, :] + np.asarray(w_p)[None, :, :], axis=2)
    return float(np.asarray(s_t) @ m @ np.asarray(s_p))


def loss_wrench(eps_t: float, eps_p: float, eps_min_t: float, eps_min_p: float) -> float:
    return (eps_t - eps_min_t) + (eps_p - eps_min_p)


def score_consistency(l_p, l_c, l_f, l_gamma, weights: LossWeights):
    return (weights.eta_p * l_p + weights.eta_c * l_c
            + weights.eta_f * l_f + weights.eta_gamma * l_gamma)


def score_opp(s_c, l_m):
    return s_c + l_m


# -- population moves -----------------------------------------------------------


def softmin(scores, beta: float) -> np.ndarray:
    s = np.asarray(scores, dtype=float)
    w = np.exp(-beta * (s - s.min()))
    return w / w.sum()


def systematic_pick(weights: np.ndarray, n_out: int, rng) -> np.ndarray:
    """Low-variance systematic resampling: descendant counts within 1 of n*w."""
    cum = np.cumsum(weights)
    cum[-1] = 1.0
    positions = (rng.random() + np.arange(n_out)) / n_out
    return np.searchsorted(cum, positions, side="left")


def importance_resample(scores, beta: float, rng, n_out: int | None = None,
                        protect_best: bool = True) -> np.ndarray:
    """Softmin systematic resampling over cost scores; the best always survives."""
    s = np.asarray(scores, dtype=float)
    n_out = len(s) if n_out is None else n_out
    w = np.exp(-beta * (s - s.min())) if np.all(np.isfinite(s)) else np.zeros_like(s)
    total = w.sum()
    if not np.isfinite(total) or total <= 0.0:
        warnings.warn("degenerate resampling weights; falling back to uniform", stacklevel=2)
        w = np.ones_like(s)
        total = w.sum()
    sel = systematic_pick(w / total, n_out, rng)
    if protect_best:
        best = int(np.argmin(s))
        if best not in sel:
            sel[int(np.argmax(s[sel]))] = best
    return sel


def noise_model(poses_t, poses_p, step_i: int, action_idx: int, boost: bool,
                cfg: FilterConfig, rng, elite: int | None = None):
    """Perturb pose pairs with per-axis Gaussian noise on an annealed schedule.

    Std per axis is (sigma)·gamma_anneal^i·rho(n_A) with
    rho(n_A) = max(0.3, 0.7^(n_A + 1)), tripled after a memory dropout.
    The elite pair is returned bit-identical.
    """
    rho = max(0.3, 0.7 ** (action_idx + 1))
    scale = (cfg.gamma_anneal ** step_i) * rho * (cfg.boost_factor if boost else 1.0)
    stds = np.array([cfg.sigma_x, cfg.sigma_z, cfg.sigma_theta]) * scale
    out = []
    for poses in (poses_t, poses_p):
        poses = np.asarray(poses, dtype=float)
        noised = poses + rng.normal(0.0, 1.0, poses.shape) * stds
        if elite is not None:
            noised[elite] = poses[elite]
        noised[:, 2] = np.vectorize(wrap_angle)(noised[:, 2])
        out.append(noised)
    return out[0], out[1]


def prevent_divergence(prev: tuple, curr: tuple, n_top: int, n_out: int,
                       beta: float, rng) -> tuple:
    """Keep the best n_top pairs of the last and current step, pad by resampling.

    prev/curr are (poses_t, poses_p, scores, s_c) tuples carrying each pair's
    stored selection score; the merged population's minimum stored score can
    therefore never exceed either input's minimum.
    """
    merged = tuple(np.concatenate([a, b]) for a, b in zip(prev, curr))
    order = np.argsort(merged[2], kind="stable")[:n_top]
    kept = tuple(a[order] for a in merged)
    if n_out > n_top:
        pad = systematic_pick(softmin(kept[2], beta), n_out - n_top, rng)
        return tuple(np.concatenate([a, a[pad]]) for a in kept)
    return kept


def init_population(cfg: FilterConfig, rng, include_gt: bool = False) -> PairPopulation:
    """Uniform pose pairs over the init box (the zero pose only via include_gt)."""
    lo = np.array([-cfg.init_x, -cfg.init_z, -cfg.init_theta])
    hi = -lo
    poses_t = rng.uniform(lo, hi, (cfg.n_opp, 3))
    poses_p = rng.uniform(lo, hi, (cfg.n_opp, 3))
    if include_gt:
        poses_t[0] = 0.0
        poses_p[0] = 0.0
    n = cfg.n_opp
    return PairPopulation(poses_t, poses_p, np.full(n, np.inf), np.full(n, np.inf))


def estimate_from_population(pop: PairPopulation, cfg: FilterConfig) -> tuple[Pose2, Pose2]:
    """Extract the pose estimate: elite pair or softmin mean over the top pairs."""
    if cfg.estimate == "elite":
        i = int(np.argmin(pop.scores))
        return Pose2.from_array(pop.poses_t[i]), Pose2.from_array(pop.poses_p[i])
    order = np.argsort(pop.scores, kind="stable")[:cfg.n_top]
    w = softmin(pop.scores[order], cfg.beta)
    out = []
    for poses in (pop.poses_t, pop.poses_p):
        top = poses[order]
        x, z = w @ top[:, 0], w @ top[:, 1]
        theta = math.atan2(w @ np.sin(top[:, 2]), w @ np.cos(top[:, 2]))
        out.append(Pose2(x, z, theta))
    return out[0], out[1]


# -- per-action step loop --------------------------------------------------------


def _rng(entropy: int, action: int, step: int, tag: int):
    return np.random.default_rng(np.random.SeedSequence((entropy, action, step, tag)))


_TAG_CPF_TOOL, _TAG_CPF_PROBE, _TAG_RESAMPLE, _TAG_NOISE, _TAG_PAD = range(5)


def _score_pairs(poses_t, poses_p, obs: ActionObservation, tool: ObjectModel,
                 probe: ObjectModel, weights: LossWeights, cfg: FilterConfig,
                 cpf_params: CpfParams, sensor: SensorNoise, entropy: int,
                 action_idx: int, step: int, need_cpf: bool):
    n = len(poses_t)
    out = {
        "l_p": np.zeros(n), "l_c": np.zeros(n), "l_f": np.zeros(n),
        "eps_t": np.zeros(n), "eps_p": np.zeros(n),
        "mean_r_t": np.zeros((n, 3)), "mean_r_p": np.zeros((n, 3)),
    }
    if need_cpf:
        bt = run_cpf_batch(tool.support, poses_t, obs.gamma_tool, sensor, cpf_params,
                           _rng(entropy, action_idx, step, _TAG_CPF_TOOL))
        bp = run_cpf_batch(probe.support, poses_p, obs.gamma_probe, sensor, cpf_params,
                           _rng(entropy, action_idx, step, _TAG_CPF_PROBE))
        r_t_w = obs.ee_tool.apply(bt.r_ee)
        r_p_w = obs.ee_probe.apply(bp.r_ee)
        f_t_w = obs.ee_tool.rotate(bt.f_ee)
        f_p_w = obs.ee_probe.rotate(bp.f_ee)
        d = np.linalg.norm(r_t_w[:, :, None, :] - r_p_w[:, None, :, :], axis=3)
        out["l_c"] = np.einsum("pa,pab,pb->p", bt.scores, d, bp.scores)
        m = np.linalg.norm(f_t_w[:, :, None, :] + f_p_w[:, None, :, :], axis=3)
        out["l_f"] = np.einsum("pa,pab,pb->p", bt.scores, m, bp.scores)
        out["eps_t"] = _eps_gamma(bt, obs.gamma_tool, cfg.wrench_norm)
        out["eps_p"] = _eps_gamma(bp, obs.gamma_probe, cfg.wrench_norm)
        out["mean_r_t"] = bt.mean_r_ee()
        out["mean_r_p"] = bp.mean_r_ee()
    if weights.eta_p > 0:
        counts = np.empty(n, dtype=np.int64)
        for j in range(n):
            counts[j] = penetration_count(
                tool.pen_points, tool.mesh,
                obs.ee_tool @ Pose2.from_array(poses_t[j]).as_transform(),
                probe.pen_points, probe.mesh,
                obs.ee_probe @ Pose2.from_array(poses_p[j]).as_transform(),
                delta_pen=cfg.delta_pen,
            )
        out["l_p"] = np.maximum(0, counts - cfg.eps_pp).astype(float)
    return out


def _eps_gamma(batch, gamma: Wrench, norm: str) -> np.ndarray:
    diff = batch.wrenches - gamma.as_vector()
    per = np.abs(diff).sum(axis=2) if norm == "l1" else np.linalg.norm(diff, axis=2)
    return np.einsum("pc,pc->p", batch.scores, per)


def scope_action(pop: PairPopulation, obs: ActionObservation, tool: ObjectModel,
                 probe: ObjectModel, state: memory_mod.MemoryState, action_idx: int,
                 weights: LossWeights, cfg: FilterConfig, cpf_params: CpfParams,
                 sensor: SensorNoise, entropy: int, collect_trace: bool = False):
    """Run all scope steps for one action (carried pairs enter un-noised).

    Returns (population, memory state, info) where info carries the dropout
    flag, the per-step minimum stored score, and optional trace records.
    """
    need_cpf = (weights.eta_c > 0 or weights.eta_f > 0
                or weights.eta_gamma > 0 or cfg.use_memory)
    poses_t, poses_p = pop.poses_t.copy(), pop.poses_p.copy()
    scores, s_c_stored = pop.scores.copy(), pop.s_c.copy()
    eps_min_t = eps_min_p = np.inf
    boost = False
    fired = False
    snapshot = None
    trace = []
    min_score_per_step = []

    for i in range(cfg.n_os):
        sc = _score_pairs(poses_t, poses_p, obs, tool, probe, weights, cfg,
                          cpf_params, sensor, entropy, action_idx, i, need_cpf)
        if need_cpf and weights.eta_gamma > 0:
            eps_min_t = min(eps_min_t, float(sc["eps_t"].min()))
            eps_min_p = min(eps_min_p, float(sc["eps_p"].min()))
            l_gamma = (sc["eps_t"] - eps_min_t) + (sc["eps_p"] - eps_min_p)
        else:
            l_gamma = np.zeros(len(poses_t))
        s_c = score_consistency(sc["l_p"], sc["l_c"], sc["l_f"], l_gamma, weights)

        if i == 0:
            l_m = np.zeros(len(poses_t))
            s_sel = s_c
            if cfg.use_memory:
                order = np.argsort(s_c, kind="stable")[:cfg.n_top]
                state = memory_mod.update_contact_cloud(
                    state, action_idx, s_c[order],
                    sc["mean_r_t"][order], sc["mean_r_p"][order], cfg.beta,
                )
                fired, state = memory_mod.check_dropout(
                    float(s_c[order].mean()), state, cfg.delta_c)
                boost = fired
            poses_t_s, poses_p_s = poses_t, poses_p
            s_c_stored = s_c
        else:
            if cfg.use_memory:
                l_m = (memory_mod.loss_memory_batch(poses_t, state.tool_cloud,
                                                    state.dropped_actions, tool.mesh)
                       + memory_mod.loss_memory_batch(poses_p, state.probe_cloud,
                                                      state.dropped_actions, probe.mesh))
            else:
                l_m = np.zeros(len(poses_t))
            s_opp = score_opp(s_c, l_m)
            poses_t_s, poses_p_s, s_sel, s_c_stored = prevent_divergence(
                snapshot, (poses_t, poses_p, s_opp, s_c), cfg.keep_count,
                cfg.n_opp, cfg.beta, _rng(entropy, action_idx, i, _TAG_PAD))

        if collect_trace:
            trace.append({
                "step": i, "l_p": sc["l_p"], "l_c": sc["l_c"], "l_f": sc["l_f"],
                "l_gamma": l_gamma, "l_m": l_m,
                "s_opp": s_c + l_m if i else s_c,
                "poses_t": poses_t.copy(), "poses_p": poses_p.copy(),
            })
        snapshot = (poses_t_s, poses_p_s, s_sel, s_c_stored)
        min_score_per_step.append(float(s_sel.min()))

        if i + 1 < cfg.n_os:
            sel = importance_resample(s_sel, cfg.beta,
                                      _rng(entropy, action_idx, i, _TAG_RESAMPLE))
            poses_t = poses_t_s[sel]
            poses_p = poses_p_s[sel]
            scores = s_sel[sel]
            s_c_step = s_c_stored[sel]
            elite = int(np.argmin(scores))
            poses_t, poses_p = noise_model(
                poses_t, poses_p, i, action_idx, boost, cfg,
                _rng(entropy, action_idx, i, _TAG_NOISE), elite=elite)
            s_c_stored = s_c_step
        else:
            poses_t, poses_p, scores, s_c_stored = snapshot

    order = np.argsort(s_c_stored, kind="stable")[:cfg.n_top]
    state = replace(state, s_bar_prev=float(s_c_stored[order].mean()),
                    prev_action_id=action_idx)
    pop_out = PairPopulation(poses_t, poses_p, scores, s_c_stored)
    info = {"dropout_fired": fired, "min_score_per_step": min_score_per_step,
            "trace": trace}
    return pop_out, state, info
