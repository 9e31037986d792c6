"""Contact particle filter for a grasped object.

Given one arm's measured end-effector wrench and a hypothesized in-grasp
pose, maintains a particle belief over where on the object surface the
contact is and what force acts there, and scores how well the pose explains
the wrench. Particles live on precomputed surface samples; diffusion moves
them along same-face neighbor graphs with occasional face hops, so they
never leave the surface.

The engine is batched: one call advances the filters of many pose
hypotheses in lockstep (same wrench, same object), which is how the outer
pose filter consumes it.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .mechanics import SensorNoise, Wrench, solve_contact_forces, wrench_error
from .segmentation import FaceSet, init_clps
from .transforms import Pose2, apply_poses, rotate_by_poses


@dataclass(frozen=True)
class CpfParams:
    n_clp: int = 60
    max_steps: int = 30
    tol_conv: float = 1e-3     # minimum best-nll improvement that resets patience
    patience: int = 5
    k_neighbors: int = 8       # same-face neighbors for local diffusion
    p_local: float = 0.60      # hop to a same-face neighbor
    p_face: float = 0.15       # jump uniformly within the current face
    p_line: float = 0.15       # jump near the measured line of action
    lambda_dir: float = 10.0   # penalty weight on outward (pulling) forces
    line_sigma: float = 2.0    # line-proposal width, in sample spacings
    elitism: bool = True

    def __post_init__(self):
        if self.p_local + self.p_face + self.p_line > 1.0:
            raise ValueError("diffusion move probabilities exceed 1")


class ClpSupport:
    """Per-object structures the filter moves on: samples, faces, neighbor graph."""

    def __init__(self, faces: FaceSet, k_neighbors: int = 8):
        self.faces = faces
        self.points = faces.points.points
        self.normals = faces.points.normals
        self.face_of = faces.point_face
        self.n_faces = len(faces)
        self.spacing = faces.points.spacing

        k = k_neighbors
        n = len(self.points)
        knn = np.empty((n, k), dtype=np.int64)
        for f in faces.faces:
            pts = self.points[f]
            if len(f) == 1:
                knn[f] = f[0]
                continue
            kk = min(k + 1, len(f))
            _, nn = cKDTree(pts).query(pts, k=kk)
            local = nn[:, 1:]  # drop self
            if local.shape[1] < k:  # pad small faces by cycling neighbors
                reps = -(-k // local.shape[1])
                local = np.tile(local, (1, reps))[:, :k]
            knn[f] = f[local]
        # noise points keep themselves as neighbors; they are never initialized on
        orphan = faces.point_face < 0
        knn[orphan] = np.flatnonzero(orphan)[:, None]
        self.knn = knn

        self.face_concat = np.concatenate(faces.faces)
        sizes = np.array([len(f) for f in faces.faces], dtype=np.int64)
        self.face_sizes = sizes
        self.face_offsets = np.concatenate([[0], np.cumsum(sizes)[:-1]])


@dataclass
class BeliefBatch:
    """Beliefs of many pose hypotheses over one (object, wrench) pair."""

    idx: np.ndarray        # (P, C) surface sample per particle
    scores: np.ndarray     # (P, C) normalized weights
    nll: np.ndarray        # (P, C)
    r_body: np.ndarray     # (P, C, 3)
    r_ee: np.ndarray       # (P, C, 3)
    f_ee: np.ndarray       # (P, C, 3) solved forces
    wrenches: np.ndarray   # (P, C, 6) particle-predicted wrenches, EE frame
    best_nll: np.ndarray   # (P,)
    steps: np.ndarray      # (P,)
    converged: np.ndarray  # (P,) bool
    history: list = field(default_factory=list)

    def mean_r_ee(self) -> np.ndarray:
        return np.einsum("pc,pci->pi", self.scores, self.r_ee)


def _init_indices(support: ClpSupport, params: CpfParams, rng, n_rows: int,
                  init: str) -> np.ndarray:
    if init == "faces":
        n_face = max(1, -(-params.n_clp // support.n_faces))
        return np.stack([init_clps(support.faces, n_face, rng) for _ in range(n_rows)])
    if init == "random":
        pool = support.face_concat  # exclude DBSCAN noise points
        return rng.choice(pool, size=(n_rows, params.n_clp), replace=True)
    raise ValueError(f"unknown init mode {init!r}")


def run_cpf_batch(support: ClpSupport, poses: np.ndarray, gamma: Wrench,
                  noise: SensorNoise, params: CpfParams, rng,
                  init: str = "faces", keep_history: bool = False) -> BeliefBatch:
    """Run one filter per pose hypothesis, all against the same wrench."""
    if support.n_faces == 0:
        raise ValueError("empty face set")
    poses = np.asarray(poses, dtype=float).reshape(-1, 3)
    P = len(poses)
    idx = _init_indices(support, params, rng, P, init)
    C = idx.shape[1]
    gvec = gamma.as_vector()

    best_nll = np.full(P, np.inf)
    best_idx = idx[:, 0].copy()
    streak = np.zeros(P, dtype=np.int64)
    frozen = np.zeros(P, dtype=bool)
    steps = np.zeros(P, dtype=np.int64)
    history: list = []
    line_cum = _line_proposal(support, poses, gvec, params)

    state = None
    for step in range(params.max_steps):
        r_body = support.points[idx]
        n_body = support.normals[idx]
        r_ee = apply_poses(poses, r_body)
        n_ee = rotate_by_poses(poses, n_body)
        f, _, nll = solve_contact_forces(
            r_ee.reshape(-1, 3), gvec, noise,
            normals=n_ee.reshape(-1, 3), lambda_dir=params.lambda_dir,
        )
        f = f.reshape(P, C, 3)
        nll = nll.reshape(P, C)

        w = np.exp(-(nll - nll.min(axis=1, keepdims=True)))
        w /= w.sum(axis=1, keepdims=True)

        arg = np.argmin(nll, axis=1)
        step_best = nll[np.arange(P), arg]
        improved = step_best < best_nll - params.tol_conv
        better = step_best < best_nll
        best_idx = np.where(better, idx[np.arange(P), arg], best_idx)
        best_nll = np.minimum(best_nll, step_best)
        streak = np.where(improved, 0, streak + 1)

        state = (idx.copy(), w, nll, r_body, r_ee, f)
        steps[~frozen] = step + 1
        frozen = frozen | (streak >= params.patience)
        if keep_history:
            mean_r = np.einsum("pc,pci->pi", w, r_ee)
            history.append((step, best_nll.copy(), mean_r))
        if frozen.all() or step + 1 == params.max_steps:
            break

        active = ~frozen
        idx = _resample_rows(idx, w, active, rng)
        idx = _diffuse(support, idx, active, params, rng, line_cum)
        if params.elitism:
            idx[active, 0] = best_idx[active]

    idx, w, nll, r_body, r_ee, f = state
    wrenches = np.concatenate([f, np.cross(r_ee, f)], axis=2)
    return BeliefBatch(
        idx=idx, scores=w, nll=nll, r_body=r_body, r_ee=r_ee, f_ee=f,
        wrenches=wrenches, best_nll=best_nll, steps=steps,
        converged=frozen, history=history,
    )


def _resample_rows(idx: np.ndarray, w: np.ndarray, active: np.ndarray, rng) -> np.ndarray:
    """Systematic resampling applied independently to each active row."""
    P, C = idx.shape
    u = rng.random(P)  # one draw per row keeps streams aligned across masks
    if not active.any():
        return idx
    rows = np.flatnonzero(active)
    cum = np.cumsum(w[rows], axis=1)
    cum[:, -1] = 1.0
    positions = (u[rows, None] + np.arange(C)[None, :]) / C
    offs = 2.0 * np.arange(len(rows))[:, None]
    sel = np.searchsorted((cum + offs).ravel(), (positions + offs).ravel(), side="left")
    sel = (sel - np.repeat(np.arange(len(rows)) * C, C)).reshape(len(rows), C)
    out = idx.copy()
    out[rows] = idx[rows[:, None], np.clip(sel, 0, C - 1)]
    return out


def _line_proposal(support: ClpSupport, poses: np.ndarray, gvec: np.ndarray,
                   params: CpfParams):
    """Per-pose cumulative weights over samples near the wrench's action line.

    The measured wrench constrains the contact to the line r0 + t*f with
    r0 = f x tau / |f|^2; candidate surface points are weighted by a Gaussian
    on their distance to that line (the poses are fixed within a run, so this
    is computed once).
    """
    if params.p_line <= 0.0:
        return None
    f, tau = gvec[:3], gvec[3:]
    fsq = float(f @ f)
    if fsq < 1e-12:
        return None
    r0 = np.cross(f, tau) / fsq
    fhat = f / np.sqrt(fsq)
    pts = support.points[support.face_concat]
    pts_ee = apply_poses(poses, np.broadcast_to(pts, (len(poses),) + pts.shape))
    d = np.linalg.norm(np.cross(pts_ee - r0, fhat), axis=2)
    sigma = params.line_sigma * support.spacing
    w = np.exp(-0.5 * (d / sigma) ** 2) + 1e-300
    cum = np.cumsum(w, axis=1)
    return cum / cum[:, -1:]


def _diffuse(support: ClpSupport, idx: np.ndarray, active: np.ndarray,
             params: CpfParams, rng, line_cum=None) -> np.ndarray:
    """Mixture move: neighbor hop, same-face jump, line-guided jump, face hop."""
    P, C = idx.shape
    u = rng.random((P, C))
    k = rng.integers(0, params.k_neighbors, size=(P, C))
    new = support.knn[idx, k]

    # uniform jump within the particle's current face
    cut1 = params.p_local + params.p_face
    sel = (u >= params.p_local) & (u < cut1)
    fid = support.face_of[idx]
    off = rng.integers(0, np.iinfo(np.int64).max, size=(P, C)) % support.face_sizes[fid]
    new = np.where(sel, support.face_concat[support.face_offsets[fid] + off], new)

    # jump toward the measured line of action (random-face jump if degenerate)
    cut2 = cut1 + params.p_line
    if line_cum is not None:
        sel = (u >= cut1) & (u < cut2)
        draws = rng.random((P, C))
        offs = 2.0 * np.arange(P)[:, None]
        pick = np.searchsorted((line_cum + offs).ravel(), (draws + offs).ravel())
        pick = np.clip(pick - np.repeat(np.arange(P) * line_cum.shape[1], C), 0,
                       line_cum.shape[1] - 1).reshape(P, C)
        new = np.where(sel, support.face_concat[pick], new)
        hop = u >= cut2
    else:
        hop = u >= cut1

    # jump to a random point on a random face
    fid = rng.integers(0, support.n_faces, size=(P, C))
    off = rng.integers(0, np.iinfo(np.int64).max, size=(P, C)) % support.face_sizes[fid]
    new = np.where(hop, support.face_concat[support.face_offsets[fid] + off], new)
    return np.where(active[:, None], new, idx)


# -- single-run API ------------------------------------------------------------


@dataclass(frozen=True)
class ContactParticle:
    r: np.ndarray       # contact location, end-effector frame
    f: np.ndarray       # solved force, end-effector frame
    s: float
    face_id: int


@dataclass
class ContactBelief:
    """Converged belief of one filter run."""

    idx: np.ndarray
    scores: np.ndarray
    nll: np.ndarray
    r_body: np.ndarray
    r_ee: np.ndarray
    f_ee: np.ndarray
    wrenches: np.ndarray
    face_ids: np.ndarray
    best_nll: float
    steps_taken: int
    converged: bool
    history: list = field(default_factory=list)

    @property
    def n_clp(self) -> int:
        return len(self.idx)

    def particles(self) -> list[ContactParticle]:
        return [
            ContactParticle(self.r_ee[i], self.f_ee[i], float(self.scores[i]),
                            int(self.face_ids[i]))
            for i in range(self.n_clp)
        ]

    def mean_r_ee(self) -> np.ndarray:
        return self.scores @ self.r_ee

    def wrench_error(self, gamma: Wrench, norm: str = "l1") -> float:
        return wrench_error(self.scores, self.wrenches, gamma, norm)


def cpfgrasp_run(support: ClpSupport, pose: Pose2, gamma: Wrench,
                 noise: SensorNoise, params: CpfParams, rng,
                 init: str = "faces", keep_history: bool = False) -> ContactBelief:
    """Run the filter for a single pose hypothesis."""
    if isinstance(rng, (int, np.integer)):
        rng = np.random.default_rng(rng)
    batch = run_cpf_batch(
        support, pose.as_array()[None, :], gamma, noise, params, rng,
        init=init, keep_history=keep_history,
    )
    history = [(s, float(b[0]), m[0]) for s, b, m in batch.history]
    return ContactBelief(
        idx=batch.idx[0], scores=batch.scores[0], nll=batch.nll[0],
        r_body=batch.r_body[0], r_ee=batch.r_ee[0], f_ee=batch.f_ee[0],
        wrenches=batch.wrenches[0], face_ids=support.face_of[batch.idx[0]],
        best_nll=float(batch.best_nll[0]), steps_taken=int(batch.steps[0]),
        converged=bool(batch.converged[0]), history=history,
    )


def cpf_metrics(belief: ContactBelief, truth, gamma: Wrench,
                norm: str = "l1") -> tuple[float, float, int, int]:
    """(position error, wrench error, steps to converge, particle count)."""
    truth = np.asarray(truth, dtype=float).reshape(3)
    pos_err = float(np.linalg.norm(belief.mean_r_ee() - truth))
    return pos_err, belief.wrench_error(gamma, norm), belief.steps_taken, belief.n_clp


def dump_belief_history(belief: ContactBelief, path) -> None:
    """Write the optional per-step diagnostic CSV (step, best_nll, mean r)."""
    with open(path, "w", encoding="ascii") as fh:
        fh.write("step,best_nll,mean_rx,mean_ry,mean_rz\n")
        for step, best, mean_r in belief.history:
            fh.write(f"{step},{best:.9g},{mean_r[0]:.9g},{mean_r[1]:.9g},{mean_r[2]:.9g}\n")
