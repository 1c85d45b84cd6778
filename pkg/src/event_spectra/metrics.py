"""Evaluation metrics: ICP alignment, point-cloud RMSE and Chamfer, image RMSE and IoU.

Point-cloud distances are reported in centimeters.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .core.types import LABEL_NAMES, ValidationError, as_pointcloud


@dataclass(frozen=True)
class RigidTransform:
    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        R = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if not np.allclose(R @ R.T, np.eye(3), atol=1e-9) or abs(np.linalg.det(R) - 1.0) > 1e-9:
            raise ValidationError("rotation must be orthonormal with det +1")
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_axis_angle(cls, axis, angle: float, translation=(0.0, 0.0, 0.0)) -> "RigidTransform":
        k = np.asarray(axis, dtype=np.float64)
        k = k / np.linalg.norm(k)
        K = np.array([[0, -k[2], k[1]], [k[2], 0, -k[0]], [-k[1], k[0], 0]])
        R = np.eye(3) + np.sin(angle) * K + (1 - np.cos(angle)) * (K @ K)
        return cls(R, translation)

    def apply(self, points) -> np.ndarray:
        return as_pointcloud(points) @ self.rotation.T + self.translation

    def compose(self, other: "RigidTransform") -> "RigidTransform":
        """``self`` after ``other``."""
        return RigidTransform(self.rotation @ other.rotation,
                              self.rotation @ other.translation + self.translation)

    def inverse(self) -> "RigidTransform":
        Rt = self.rotation.T
        return RigidTransform(Rt, -Rt @ self.translation)

    @property
    def angle(self) -> float:
        """Rotation angle in radians."""
        c = (np.trace(self.rotation) - 1.0) / 2.0
        return float(np.arccos(np.clip(c, -1.0, 1.0)))


def rotation_error(a: RigidTransform, b: RigidTransform) -> float:
    """Angle (rad) of the relative rotation between two transforms."""
    return a.compose(b.inverse()).angle


def kabsch(source, target) -> RigidTransform:
    """Least-squares rigid transform mapping ``source`` onto paired ``target`` points."""
    P, Q = as_pointcloud(source), as_pointcloud(target)
    cp, cq = P.mean(axis=0), Q.mean(axis=0)
    H = (P - cp).T @ (Q - cq)
    U, _, Vt = np.linalg.svd(H)
    d = np.sign(np.linalg.det(Vt.T @ U.T))
    D = np.diag([1.0, 1.0, d if d != 0 else 1.0])
    R = Vt.T @ D @ U.T
    return RigidTransform(R, cq - R @ cp)


def _check_cloud(points, name: str, minimum: int = 1) -> np.ndarray:
    pts = as_pointcloud(points)
    if len(pts) < minimum:
        raise ValidationError(f"{name} needs at least {minimum} points")
    return pts


def _nn_distances(query: np.ndarray, tree: cKDTree, ref: np.ndarray):
    """Nearest-neighbor distance and index, distances recomputed from coordinates."""
    k = min(4, len(ref))
    _, idx = tree.query(query, k=k)
    idx = idx.reshape(len(query), k)
    d = np.sqrt(np.sum((query[:, None, :] - ref[idx]) ** 2, axis=-1))
    j = np.argmin(d, axis=1)
    rows = np.arange(len(query))
    return d[rows, j], idx[rows, j]


@dataclass(frozen=True)
class IcpResult:
    transform: RigidTransform
    aligned: np.ndarray
    rmse: float          # meters, over the kept (trimmed) correspondences
    iterations: int


def icp_align(source, target, max_iter: int = 50, tol: float = 1e-6, trim: float = 0.0,
              init="centroid") -> IcpResult:
    """Point-to-point ICP.

    Args:
        trim: fraction of the worst correspondences dropped each iteration.
        init: ``"centroid"`` (translate centroids together), ``"identity"``
            or a :class:`RigidTransform`.

    Stops when the RMSE improves by less than ``tol`` meters.
    """
    P = _check_cloud(source, "source", 3)
    Q = _check_cloud(target, "target", 3)
    for name, pts in (("source", P), ("target", Q)):
        if np.linalg.matrix_rank(pts - pts.mean(axis=0), tol=1e-12) < 2:
            raise ValidationError(f"{name} cloud is degenerate (collinear points)")
    if not 0.0 <= trim < 1.0:
        raise ValidationError("trim must be in [0, 1)")
    if isinstance(init, RigidTransform):
        T = init
    elif init == "centroid":
        T = RigidTransform(np.eye(3), Q.mean(axis=0) - P.mean(axis=0))
    elif init == "identity":
        T = RigidTransform.identity()
    else:
        raise ValidationError(f"unknown init {init!r}")

    tree = cKDTree(Q)
    n_keep = max(3, int(round(len(P) * (1.0 - trim))))
    prev = np.inf
    rmse = np.inf
    it = 0
    for it in range(1, max_iter + 1):
        cur = T.apply(P)
        d, j = _nn_distances(cur, tree, Q)
        keep = np.argsort(d, kind="stable")[:n_keep]
        rmse = float(np.sqrt(np.mean(d[keep] ** 2)))
        if prev - rmse < tol:
            break
        prev = rmse
        T = kabsch(P[keep], Q[j[keep]])
    aligned = T.apply(P)
    d, _ = _nn_distances(aligned, tree, Q)
    rmse = float(np.sqrt(np.mean(np.sort(d)[:n_keep] ** 2)))
    return IcpResult(T, aligned, rmse, it)


def rmse_pointcloud(aligned, target) -> float:
    """Root mean squared nearest-neighbor distance from ``aligned`` to ``target``, in cm.

    Not symmetric in its arguments.
    """
    A = _check_cloud(aligned, "aligned cloud")
    B = _check_cloud(target, "target cloud")
    d, _ = _nn_distances(A, cKDTree(B), B)
    return float(np.sqrt(np.mean(d ** 2)) * 100.0)


def chamfer(cloud_a, cloud_b) -> float:
    """Symmetric Chamfer distance in cm: mean of the two one-sided mean NN distances."""
    A = _check_cloud(cloud_a, "cloud a")
    B = _check_cloud(cloud_b, "cloud b")
    d_ab, _ = _nn_distances(A, cKDTree(B), B)
    d_ba, _ = _nn_distances(B, cKDTree(A), A)
    return float(0.5 * (np.mean(d_ab) + np.mean(d_ba)) * 100.0)


def rmse_image(a, b, mask=None):
    """Per-channel and mean RMSE between two images on the 8-bit scale.

    Returns:
        (per_channel tuple, mean)
    """
    A = np.asarray(a, dtype=np.float64)
    B = np.asarray(b, dtype=np.float64)
    if A.shape != B.shape:
        raise ValidationError(f"image shapes differ: {A.shape} vs {B.shape}")
    if A.ndim == 2:
        A, B = A[..., None], B[..., None]
    m = np.ones(A.shape[:2], dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    if m.shape != A.shape[:2]:
        raise ValidationError("mask shape does not match the images")
    if not m.any():
        raise ValidationError("empty mask")
    diff = (A - B)[m]
    per = np.sqrt(np.mean(diff ** 2, axis=0))
    return tuple(float(v) for v in per), float(np.mean(per))


@dataclass(frozen=True)
class IoUReport:
    per_class: dict          # class id -> IoU (nan when absent from both maps)
    mean: float

    def named(self) -> dict:
        return {LABEL_NAMES.get(c, str(c)): v for c, v in self.per_class.items()}


def confusion_matrix(pred, truth, n_classes: int = 3) -> np.ndarray:
    p = np.asarray(pred).ravel().astype(np.int64)
    t = np.asarray(truth).ravel().astype(np.int64)
    return np.bincount(t * n_classes + p, minlength=n_classes ** 2).reshape(n_classes, n_classes)


def iou_from_confusion(cm: np.ndarray) -> IoUReport:
    n = cm.shape[0]
    per = {}
    for c in range(n):
        inter = cm[c, c]
        union = cm[c, :].sum() + cm[:, c].sum() - inter
        per[c] = float(inter / union) if union else float("nan")
    vals = [v for v in per.values() if not np.isnan(v)]
    return IoUReport(per, float(np.mean(vals)) if vals else float("nan"))


def iou(pred, truth, n_classes: int = 3) -> IoUReport:
    """Per-class IoU and their mean over classes present in either map (background included)."""
    p, t = np.asarray(pred), np.asarray(truth)
    if p.shape != t.shape:
        raise ValidationError(f"label maps differ in shape: {p.shape} vs {t.shape}")
    return iou_from_confusion(confusion_matrix(p, t, n_classes))
