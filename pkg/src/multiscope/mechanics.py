"""Wrench algebra: point-contact wrenches, frame transforms, force solving, noise.

Contacts are point contacts, so a contact transmits a force but no moment:
the wrench seen at a frame is [f; r x f] for contact location r and force f
expressed in that frame.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .transforms import RigidTransform

FRAME_TOOL_EE = "tool-ee"
FRAME_PROBE_EE = "probe-ee"
FRAME_WORLD = "world"
VALID_FRAMES = (FRAME_TOOL_EE, FRAME_PROBE_EE, FRAME_WORLD)


@dataclass(frozen=True)
class Wrench:
    """Force (N) and torque (N·m) expressed at a named frame's origin."""

    force: np.ndarray
    torque: np.ndarray
    frame: str = FRAME_WORLD

    def __post_init__(self):
        f = np.asarray(self.force, dtype=float).reshape(3)
        t = np.asarray(self.torque, dtype=float).reshape(3)
        if not (np.all(np.isfinite(f)) and np.all(np.isfinite(t))):
            raise ValueError("wrench components must be finite")
        if self.frame not in VALID_FRAMES:
            raise ValueError(f"unknown frame tag {self.frame!r}")
        f.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "force", f)
        object.__setattr__(self, "torque", t)

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.force, self.torque])

    @classmethod
    def from_vector(cls, v, frame: str = FRAME_WORLD) -> "Wrench":
        v = np.asarray(v, dtype=float).reshape(6)
        return cls(v[:3], v[3:], frame)

    def __neg__(self) -> "Wrench":
        return Wrench(-self.force, -self.torque, self.frame)


def skew(r: np.ndarray) -> np.ndarray:
    x, y, z = np.asarray(r, dtype=float).reshape(3)
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def contact_wrench(r, f, frame: str = FRAME_WORLD) -> Wrench:
    """Wrench at the frame origin produced by force f at contact location r."""
    r = np.asarray(r, dtype=float).reshape(3)
    f = np.asarray(f, dtype=float).reshape(3)
    return Wrench(f, np.cross(r, f), frame)


def transform_wrench(w: Wrench, X: RigidTransform, frame: str | None = None) -> Wrench:
    """Re-express a wrench under x' = R x + p: F' = R F, T' = R T + p x (R F)."""
    F = X.rotation @ w.force
    T = X.rotation @ w.torque + np.cross(X.translation, F)
    return Wrench(F, T, frame if frame is not None else w.frame)


@dataclass(frozen=True)
class SensorNoise:
    """Wrist sensor covariance (6x6 SPD) used to weight contact-force solves."""

    cov: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.cov, dtype=float).reshape(6, 6)
        if not np.allclose(c, c.T, atol=1e-12):
            raise ValueError("covariance must be symmetric")
        if np.linalg.eigvalsh(c).min() <= 0:
            raise ValueError("covariance must be positive definite")
        c.setflags(write=False)
        object.__setattr__(self, "cov", c)

    @property
    def weight(self) -> np.ndarray:
        """Inverse covariance."""
        w = getattr(self, "_weight", None)
        if w is None:
            w = np.linalg.inv(self.cov)
            object.__setattr__(self, "_weight", w)
        return w

    @classmethod
    def default(cls, sigma_force: float = 0.05, sigma_torque: float = 0.005) -> "SensorNoise":
        return cls(np.diag([sigma_force**2] * 3 + [sigma_torque**2] * 3))

    @classmethod
    def from_static_capture(cls, path) -> "SensorNoise":
        """Fit the sample covariance of a static (t, F, T) capture CSV."""
        rows = np.genfromtxt(path, delimiter=",", skip_header=0)
        if rows.ndim != 2 or rows.shape[1] < 7:
            rows = np.genfromtxt(path, delimiter=",", skip_header=1)
        if rows.ndim != 2 or rows.shape[1] < 7 or len(rows) < 7:
            raise ValueError(f"{path}: expected >= 7 rows of t,Fx,Fy,Fz,Tx,Ty,Tz")
        return cls(np.cov(rows[:, 1:7].T, ddof=1))


def solve_contact_forces(rs, gamma, noise: SensorNoise,
                         normals=None, lambda_dir: float = 0.0):
    """Weighted least-squares contact forces at candidate locations.

    For each r, minimizes ([f; r x f] - gamma)' W ([f; r x f] - gamma) in
    closed form; nll is half the weighted squared residual. When surface
    normals are given, an outward (pulling) solved force adds a soft penalty
    lambda_dir * max(0, f·n)^2 to the nll.

    Returns (forces (n,3), residuals (n,6), nll (n,)).
    """
    rs = np.asarray(rs, dtype=float).reshape(-1, 3)
    g = gamma.as_vector() if isinstance(gamma, Wrench) else np.asarray(gamma, dtype=float).reshape(6)
    W = noise.weight
    n = len(rs)

    A = np.zeros((n, 6, 3))
    A[:, :3, :] = np.eye(3)
    x, y, z = rs[:, 0], rs[:, 1], rs[:, 2]
    A[:, 3, 1] = -z
    A[:, 3, 2] = y
    A[:, 4, 0] = z
    A[:, 4, 2] = -x
    A[:, 5, 0] = -y
    A[:, 5, 1] = x

    WA = np.matmul(W, A)
    M = np.matmul(A.transpose(0, 2, 1), WA)
    b = WA.transpose(0, 2, 1) @ g
    f = np.linalg.solve(M, b[:, :, None])[:, :, 0]
    resid = np.matmul(A, f[:, :, None])[:, :, 0] - g
    nll = 0.5 * np.einsum("ni,ni->n", resid @ W, resid)
    if normals is not None and lambda_dir > 0.0:
        pulling = np.maximum(0.0, np.einsum("ni,ni->n", f, np.asarray(normals, dtype=float)))
        nll = nll + lambda_dir * pulling**2
    return f, resid, nll


def solve_contact_force(r, gamma, noise: SensorNoise):
    """Single-location form of solve_contact_forces (no direction penalty)."""
    f, resid, nll = solve_contact_forces(np.asarray(r, dtype=float).reshape(1, 3), gamma, noise)
    return f[0], resid[0], float(nll[0])


def wrench_error(scores, particle_wrenches, gamma, norm: str = "l1") -> float:
    """Score-weighted wrench error of a contact belief against a measurement."""
    s = np.asarray(scores, dtype=float)
    w = np.asarray(particle_wrenches, dtype=float).reshape(len(s), 6)
    g = gamma.as_vector() if isinstance(gamma, Wrench) else np.asarray(gamma, dtype=float).reshape(6)
    diff = w - g
    if norm == "l1":
        per = np.abs(diff).sum(axis=1)
    elif norm == "l2":
        per = np.linalg.norm(diff, axis=1)
    else:
        raise ValueError(f"unknown norm {norm!r}")
    return float(np.dot(s, per))


@dataclass(frozen=True)
class NoiseSpec:
    """Fractional wrench noise: per-axis sigma is n_pct of the block magnitude."""

    n_pct: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.n_pct < 0:
            raise ValueError("n_pct must be non-negative")

    def sigmas(self, gamma: Wrench) -> tuple[float, float]:
        return (
            self.n_pct * float(np.linalg.norm(gamma.force)),
            self.n_pct * float(np.linalg.norm(gamma.torque)),
        )


def inject_noise(gamma: Wrench, spec: NoiseSpec, rng=None) -> Wrench:
    """Add i.i.d. zero-mean Gaussian noise per axis; exact passthrough at 0%."""
    if spec.n_pct == 0.0:
        return gamma
    if rng is None:
        rng = np.random.default_rng(spec.seed)
    sigma_f, sigma_t = spec.sigmas(gamma)
    return replace(
        gamma,
        force=gamma.force + rng.normal(0.0, sigma_f, 3),
        torque=gamma.torque + rng.normal(0.0, sigma_t, 3),
    )
