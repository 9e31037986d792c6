"""Tool-face segmentation: normal clustering plus density-based spatial splits.

A "face" is a group of surface samples with similar normals that are also
spatially contiguous. K-Means groups the unique normals; within each normal
group, DBSCAN separates patches that share a normal but are far apart (the
two jaw flats of a wrench, for instance). Particle budgets for contact
filters are then allocated per face, so small functional faces are never
starved at initialization.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from sklearn.cluster import DBSCAN, KMeans

from .mesh import SurfacePointSet

NORMAL_QUANTUM = 1e-6


@dataclass(frozen=True)
class SegmentationParams:
    n_clusters: int = 6
    epsilon: float = 0.005      # DBSCAN neighborhood, meters
    n_min: int = 8              # DBSCAN min samples
    n_face: int = 10            # particles per face at CLP init

    def __post_init__(self):
        if self.n_clusters < 1 or self.n_min < 1 or self.n_face < 1:
            raise ValueError("counts must be >= 1")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")


@dataclass(frozen=True)
class FaceSet:
    """Disjoint face membership over a SurfacePointSet."""

    points: SurfacePointSet
    faces: tuple[np.ndarray, ...]        # point indices per face
    mean_normals: np.ndarray             # (n_faces, 3) unit
    centroids: np.ndarray                # (n_faces, 3)
    noise_indices: np.ndarray            # DBSCAN noise, excluded from faces
    point_face: np.ndarray = field(repr=False)  # (n,) face id, -1 for noise

    def __len__(self) -> int:
        return len(self.faces)


def get_unique_normals(points: SurfacePointSet) -> np.ndarray:
    """Deduplicate sample normals under per-component quantization."""
    if len(points) == 0:
        raise ValueError("empty point set")
    q = np.round(points.normals / NORMAL_QUANTUM).astype(np.int64)
    _, idx = np.unique(q, axis=0, return_index=True)
    return points.normals[np.sort(idx)]


def segment_tool(points: SurfacePointSet, params: SegmentationParams,
                 seed: int = 0) -> FaceSet:
    """Partition surface samples into faces (normal groups split spatially)."""
    unique = get_unique_normals(points)
    k = params.n_clusters
    if len(unique) < k:
        warnings.warn(
            f"only {len(unique)} unique normals for n_clusters={k}; reducing k",
            stacklevel=2,
        )
        k = len(unique)
    if len(points) < k:
        raise ValueError("fewer points than clusters")

    km = KMeans(n_clusters=k, init="k-means++", n_init=1, max_iter=100,
                tol=1e-8, random_state=seed)
    km.fit(unique)
    # groupNorms: every sample joins the centroid nearest its own normal
    d2 = ((points.normals[:, None, :] - km.cluster_centers_[None, :, :]) ** 2).sum(axis=2)
    group_of = np.argmin(d2, axis=1)

    faces: list[np.ndarray] = []
    noise: list[np.ndarray] = []
    for g in range(k):
        members = np.flatnonzero(group_of == g)
        if len(members) == 0:
            continue
        labels = DBSCAN(eps=params.epsilon, min_samples=params.n_min).fit(
            points.points[members]
        ).labels_
        for lab in range(labels.max() + 1):
            faces.append(members[labels == lab])
        noise.append(members[labels == -1])

    noise_idx = np.sort(np.concatenate(noise)) if noise else np.empty(0, dtype=np.int64)
    point_face = np.full(len(points), -1, dtype=np.int64)
    mean_normals = np.empty((len(faces), 3))
    centroids = np.empty((len(faces), 3))
    for i, f in enumerate(faces):
        point_face[f] = i
        m = points.normals[f].mean(axis=0)
        mean_normals[i] = m / np.linalg.norm(m)
        centroids[i] = points.points[f].mean(axis=0)
    return FaceSet(
        points=points,
        faces=tuple(faces),
        mean_normals=mean_normals,
        centroids=centroids,
        noise_indices=noise_idx,
        point_face=point_face,
    )


def init_clps(faces: FaceSet, n_face: int, rng) -> np.ndarray:
    """Sample exactly n_face contact-location particles on every face.

    Returns indices into the underlying SurfacePointSet. Faces smaller than
    n_face are sampled with replacement.
    """
    if len(faces) == 0:
        raise ValueError("empty face set")
    if isinstance(rng, (int, np.integer)):
        rng = np.random.default_rng(rng)
    picks = [
        rng.choice(f, size=n_face, replace=len(f) < n_face)
        for f in faces.faces
    ]
    return np.concatenate(picks)
