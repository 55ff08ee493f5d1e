"""Probabilistic region growing over a stereo point cloud.

Each patch carries a plane fit, a convex boundary hull, and Gamma parameters
over its members' joint point-to-patch distances.  Candidate points are served
nearest-camera-first from a queue; a point joins the patch with the highest
log posterior provided that posterior clears a per-point threshold built from
the global acceptance level and the point's noise penalty.  Rejected points
return to the far end of the queue and are retried after the patches have
grown.
"""

from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from . import geometry
from .distributions import GammaParams, gamma_mle
from .stereo import PointCloud, StereoRig, noise_model_offset, project_many

logger = logging.getLogger(__name__)

_DIST_CLAMP = 1e-12


@dataclass
class GrowConfig:
    """Growth parameters.

    ``log_threshold`` is the acceptance level in log space; the boundary
    weight mixes the hull distance into the joint point-to-patch distance and
    the intensity weight scales the image-prior contribution.  With
    ``batch_size`` > 1 several points are classified against the same patch
    state before the fits are refreshed.
    """

    log_threshold: float = -20.0
    boundary_weight: float = 1.0
    intensity_weight: float = 1.0
    batch_size: int = 1
    max_epochs: int = 60

    def __post_init__(self) -> None:
        if self.boundary_weight <= 0:
            raise ValueError("boundary weight must be positive")
        if self.batch_size < 1:
            raise ValueError("batch size must be at least 1")
        if self.max_epochs < 1:
            raise ValueError("max epochs must be at least 1")


class PointState:
    """Membership bookkeeping: which patch owns each point, if any."""

    def __init__(self, n_points: int) -> None:
        self.assigned_to = np.full(n_points, -1, dtype=int)
        self.rejected_by: dict[int, set[int]] = {}

    def __len__(self) -> int:
        return len(self.assigned_to)

    def assign(self, indices, patch_id: int) -> None:
        idx = np.asarray(indices, dtype=int)
        if np.any(self.assigned_to[idx] >= 0):
            raise ValueError("point already assigned")
        self.assigned_to[idx] = patch_id

    def reassign(self, indices, patch_id: int) -> None:
        self.assigned_to[np.asarray(indices, dtype=int)] = patch_id

    def release(self, indices) -> None:
        self.assigned_to[np.asarray(indices, dtype=int)] = -1

    def reject(self, indices, patch_id: int) -> None:
        for i in np.asarray(indices, dtype=int):
            self.rejected_by.setdefault(int(i), set()).add(patch_id)

    def available_mask(self) -> np.ndarray:
        return self.assigned_to < 0

    def available_indices(self) -> np.ndarray:
        return np.where(self.assigned_to < 0)[0]


@dataclass
class Patch:
    """A growing planar patch: plane + hull + members + distance statistics."""

    id: int
    plane: geometry.Plane
    hull: geometry.PlanarHull
    members: list[int]
    theta: GammaParams
    pair: "object"  # seeding.SegmentPair; kept loose to avoid an import cycle
    boundary_weight: float = 1.0
    intensity_weight: float = 1.0
    log_const: float = field(default=0.0)
    # merged patches carry a member-weighted intensity instead of their pair's
    intensity_override: float | None = None

    def __post_init__(self) -> None:
        self.refresh_log_const()

    @property
    def mean_intensity(self) -> float:
        if self.intensity_override is not None:
            return self.intensity_override
        return 0.5 * (self.pair.ellipse_left.mean_intensity + self.pair.ellipse_right.mean_intensity)

    def refresh_log_const(self) -> None:
        """Recompute the cached constant of the log posterior.

        Combines the Gamma normalization with the (patch-constant) ellipse
        moment determinants: -a*log(b) - log(Gamma(a)) - 0.5*log(product of
        the two views' decorrelated moment products).
        """
        from scipy.special import gammaln

        el = self.pair.ellipse_left
        er = self.pair.ellipse_right
        oml = 1.0 - el.correlation**2
        omr = 1.0 - er.correlation**2
        moment_prod = oml * omr * el.inertia[0] * el.inertia[2] * er.inertia[0] * er.inertia[2]
        self.log_const = float(
            -self.theta.shape * np.log(self.theta.scale)
            - gammaln(self.theta.shape)
            - 0.5 * np.log(moment_prod)
        )


def joint_distance(patch: Patch, position: np.ndarray) -> float:
    """Plane distance plus weighted hull distance, clamped away from zero.

    When the point's projection falls inside the hull the boundary term
    equals the plane term, so the joint distance collapses to
    (1 + w) * plane distance without evaluating the hull at all.
    """
    return float(joint_distance_many(patch, np.asarray(position, float)[None, :])[0])


def joint_distance_many(patch: Patch, positions: np.ndarray) -> np.ndarray:
    pts = np.atleast_2d(np.asarray(positions, float))
    d_plane = patch.plane.sq_dist_many(pts)
    w = patch.boundary_weight
    q = patch.hull.to_2d(pts)
    inside = patch.hull.contains_2d(q)
    out = (1.0 + w) * d_plane
    if not np.all(inside):
        idx = np.where(~inside)[0]
        s = pts[idx] @ patch.hull.normal + patch.hull.offset
        lateral = geometry._point_edges_sq_dist_2d(q[idx], patch.hull.verts2d)
        out[idx] = d_plane[idx] + w * (s * s + lateral)
    return np.maximum(out, _DIST_CLAMP)


def log_posterior(patch: Patch, position: np.ndarray, rig: StereoRig) -> float:
    """Unnormalized log posterior of one 3D point belonging to the patch."""
    return float(_scores_for_patch(patch, np.asarray(position, float)[None, :], rig)[0])


def _scores_for_patch(patch: Patch, positions: np.ndarray, rig: StereoRig) -> np.ndarray:
    d = joint_distance_many(patch, positions)
    pl, okl = project_many(rig.camera_left, positions)
    pr, okr = project_many(rig.camera_right, positions)
    el = patch.pair.ellipse_left
    er = patch.pair.ellipse_right
    zl = el.mahalanobis(pl)
    zr = er.mahalanobis(pr)
    oml = 1.0 - el.correlation**2
    omr = 1.0 - er.correlation**2
    zeta = patch.intensity_weight
    scores = (
        (patch.theta.shape - 1.0) * np.log(d)
        - zeta * (zl / (2.0 * oml) + zr / (2.0 * omr))
        - d / patch.theta.scale
        + patch.log_const
    )
    return np.where(okl & okr, scores, -np.inf)


def posterior_scores(
    patches: list[Patch], positions: np.ndarray, rig: StereoRig
) -> np.ndarray:
    """(n_points, n_patches) matrix of log posteriors."""
    pts = np.atleast_2d(np.asarray(positions, float))
    scores = np.full((len(pts), len(patches)), -np.inf)
    for j, patch in enumerate(patches):
        scores[:, j] = _scores_for_patch(patch, pts, rig)
    return scores


def classify(
    patches: list[Patch],
    cloud: PointCloud,
    index: int,
    cfg: GrowConfig,
    rig: StereoRig,
    state: PointState | None = None,
) -> int | None:
    """Best patch for one point, or None below the acceptance threshold."""
    ids = classify_batch(patches, cloud, np.array([index]), cfg, rig, state)
    return ids[0]


def classify_batch(
    patches: list[Patch],
    cloud: PointCloud,
    indices: np.ndarray,
    cfg: GrowConfig,
    rig: StereoRig,
    state: PointState | None = None,
) -> list[int | None]:
    """Vectorized classification of several points against the current patches.

    The winner is the argmax of the log posteriors (ties go to the lowest
    patch id); it is accepted only when the winning posterior clears
    log_threshold + noise penalty + noise-model offset for that point.
    """
    if rig.noise_model is None:
        raise ValueError("rig has no calibrated noise model")
    if cloud.penalty is None:
        raise ValueError("cloud has no noise penalties; run attach_penalty first")
    idx = np.asarray(indices, dtype=int)
    scores = posterior_scores(patches, cloud.positions[idx], rig)
    if state is not None:
        id_to_col = {p.id: j for j, p in enumerate(patches)}
        for row, i in enumerate(idx):
            for pid in state.rejected_by.get(int(i), ()):
                col = id_to_col.get(pid)
                if col is not None:
                    scores[row, col] = -np.inf
    # np.argmax returns the first maximum, and patches are kept sorted by id,
    # so exact ties resolve to the lowest patch id
    best_col = np.argmax(scores, axis=1)
    best = scores[np.arange(len(idx)), best_col]
    threshold = cfg.log_threshold + cloud.penalty[idx] + noise_model_offset(rig.noise_model)
    out: list[int | None] = []
    for row in range(len(idx)):
        if np.isfinite(best[row]) and best[row] >= threshold[row]:
            out.append(patches[best_col[row]].id)
        else:
            out.append(None)
    return out


def accept(patch: Patch, cloud: PointCloud, state: PointState, indices) -> None:
    """Fold accepted points into the patch and refresh its statistics.

    The plane absorbs the new points through its running sums, the hull is
    re-projected (and rebuilt only if some new point lies outside it), and the
    Gamma parameters are re-estimated from all member distances in one batch.
    A degenerate re-estimate keeps the previous parameters.
    """
    idx = np.asarray(indices, dtype=int).ravel()
    if len(idx) == 0:
        return
    patch.plane = geometry.update_fit_many(patch.plane, cloud.positions[idx])
    patch.members.extend(int(i) for i in idx)
    member_pts = cloud.positions[np.asarray(patch.members, dtype=int)]
    patch.hull = geometry.update_hull(patch.hull, patch.plane, cloud.positions[idx], member_pts)
    state.assign(idx, patch.id)
    distances = joint_distance_many(patch, member_pts)
    try:
        patch.theta = gamma_mle(distances)
    except ValueError:
        logger.debug("patch %d: degenerate distance sample, keeping previous theta", patch.id)
    patch.refresh_log_const()


@dataclass
class GrowResult:
    patches: list[Patch]
    unassigned: list[int]
    epochs: int
    truncated: bool
    accepted: int


def grow(
    patches: list[Patch],
    cloud: PointCloud,
    cfg: GrowConfig,
    rig: StereoRig,
    state: PointState,
) -> GrowResult:
    """Run the acceptance loop until an epoch makes no progress.

    The queue is sorted descending by the sum of squared distances to the two
    camera centers and served from the bottom, so near points are classified
    first while the patches are still small; rejected points are re-inserted
    at the top and come around again in the next epoch.  The loop ends when a
    full epoch accepts nothing, or after ``max_epochs`` (flagged truncated).
    """
    centers = rig.camera_centers()
    avail = state.available_indices()
    cam_d = np.sum((cloud.positions[avail, None, :] - centers[None, :, :]) ** 2, axis=(1, 2))
    # stable descending sort; index breaks ties deterministically
    order = np.lexsort((avail, -cam_d))
    queue: deque[int] = deque(int(i) for i in avail[order])

    epochs = 0
    truncated = False
    accepted_total = 0
    epoch_remaining = len(queue)
    epoch_accepted = 0
    patches_by_id = {p.id: p for p in patches}

    while queue:
        k = min(cfg.batch_size, len(queue), epoch_remaining)
        batch = [queue.pop() for _ in range(k)]
        decisions = classify_batch(patches, cloud, np.array(batch), cfg, rig, state)
        taken: dict[int, list[int]] = {}
        for point_idx, decision in zip(batch, decisions):
            if decision is None:
                queue.appendleft(point_idx)
            else:
                taken.setdefault(decision, []).append(point_idx)
        for pid in sorted(taken):
            accept(patches_by_id[pid], cloud, state, taken[pid])
            n_taken = len(taken[pid])
            epoch_accepted += n_taken
            accepted_total += n_taken
        epoch_remaining -= k
        if epoch_remaining <= 0:
            epochs += 1
            if epoch_accepted == 0:
                break
            if epochs >= cfg.max_epochs:
                truncated = True
                logger.warning("growth truncated after %d epochs", epochs)
                break
            epoch_remaining = len(queue)
            epoch_accepted = 0

    return GrowResult(patches, [int(i) for i in queue], epochs, truncated, accepted_total)
