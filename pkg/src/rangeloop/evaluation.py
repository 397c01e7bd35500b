"""Retrieval harness and metrics: Recall@N, Recall@1%, max-F1, loop ground
truth, SSIM on the distance channel, descriptor cosine similarity (FSS), and
similarity-matrix export.

Retrieval is exhaustive nearest-neighbor over unit-norm descriptors by dot
product; desk-scale databases need nothing cleverer.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter

from .errors import ConfigurationError, DataError
from .pairing import Pose
from .range_image import RangeImage

SSIM_SIGMA = 1.5
SSIM_RADIUS = 5  # 11x11 window


@dataclass(frozen=True)
class LoopCriterion:
    """Ground-truth rule: pose distance threshold plus index exclusion."""

    distance_threshold: float = 5.0
    exclusion_window: int = 50

    def __post_init__(self) -> None:
        if self.distance_threshold <= 0:
            raise ConfigurationError("loop distance threshold must be positive")
        if self.exclusion_window < 0:
            raise ConfigurationError("exclusion window must be >= 0")


@dataclass
class RetrievalResult:
    query_index: int
    indices: np.ndarray  # ranked database indices, most similar first
    scores: np.ndarray   # matching similarities, nonincreasing


def is_true_loop(pose_q: Pose, pose_db: Pose, crit: LoopCriterion,
                 idx_q: int, idx_db: int, same_sequence: bool = True) -> bool:
    """True iff the database pose is a genuine revisit of the query pose.

    For same-sequence evaluation the database index must lie outside
    (idx_q - exclusion_window, idx_q]; cross-sequence evaluation skips that.
    """
    if same_sequence and idx_q - crit.exclusion_window < idx_db <= idx_q:
        return False
    dist = np.linalg.norm(pose_q.translation - pose_db.translation)
    return bool(dist < crit.distance_threshold)


def exclusion_indices(idx_q: int, db_indices: np.ndarray, crit: LoopCriterion) -> np.ndarray:
    """Positions in db_indices falling inside the query's exclusion window."""
    db_indices = np.asarray(db_indices)
    return np.nonzero((db_indices > idx_q - crit.exclusion_window) & (db_indices <= idx_q))[0]


def retrieve(query: np.ndarray, db: np.ndarray, k: int,
             exclusion: np.ndarray | None = None,
             query_index: int = -1) -> RetrievalResult:
    """Top-k database entries by dot-product similarity.

    Args:
        query: (D,) descriptor.
        db: (M, D) descriptor matrix.
        k: ranking length; clipped to the database size.
        exclusion: positions (rows of db) removed before ranking.
        query_index: carried through for bookkeeping.

    Ties are broken toward the lower database position.
    """
    db = np.asarray(db, dtype=np.float64)
    if db.ndim != 2 or db.shape[1] != query.shape[-1]:
        raise DataError(f"descriptor database shape {db.shape} does not match query")
    scores = db @ np.asarray(query, dtype=np.float64)
    positions = np.arange(db.shape[0])
    if exclusion is not None and len(exclusion) > 0:
        keep = np.ones(db.shape[0], dtype=bool)
        keep[np.asarray(exclusion, dtype=int)] = False
        scores, positions = scores[keep], positions[keep]
    order = np.lexsort((positions, -scores))[: min(k, scores.shape[0])]
    return RetrievalResult(query_index=query_index,
                           indices=positions[order],
                           scores=scores[order])


def recall_at_n(results: list[RetrievalResult],
                ground_truth: dict[int, set[int]], n: int) -> float:
    """Fraction of queries with at least one true loop in the top n.

    Queries whose ground-truth set is empty are not counted.
    """
    eligible = [r for r in results if ground_truth.get(r.query_index)]
    if not eligible:
        raise DataError("no query has a non-empty ground-truth set")
    hits = sum(
        1 for r in eligible
        if any(int(i) in ground_truth[r.query_index] for i in r.indices[:n]))
    return hits / len(eligible)


def recall_at_percent(results: list[RetrievalResult],
                      ground_truth: dict[int, set[int]],
                      db_size: int, pct: float = 0.01) -> float:
    n = int(np.ceil(pct * db_size))
    return recall_at_n(results, ground_truth, max(n, 1))


def f1_score(results: list[RetrievalResult],
             ground_truth: dict[int, set[int]]) -> tuple[float, float]:
    """Max F1 over a similarity-threshold sweep of top-1 decisions.

    A query's top-1 match is accepted when its score is >= threshold; an
    accepted match is a true positive iff it is a true loop. Recall counts
    against all queries with non-empty ground truth. Returns (f1, threshold).
    """
    top = [(r.query_index, float(r.scores[0]), int(r.indices[0]))
           for r in results if len(r.indices) > 0]
    if not top:
        raise DataError("empty retrieval results")
    n_positive = sum(1 for r in results if ground_truth.get(r.query_index))
    if n_positive == 0:
        raise DataError("no query has a non-empty ground-truth set")

    best_f1, best_thresh = 0.0, float("inf")
    for thresh in sorted({score for _, score, _ in top}, reverse=True):
        tp = fp = 0
        for qidx, score, db_idx in top:
            if score >= thresh:
                if db_idx in ground_truth.get(qidx, set()):
                    tp += 1
                else:
                    fp += 1
        if tp == 0:
            continue
        precision = tp / (tp + fp)
        recall = tp / n_positive
        f1 = 2 * precision * recall / (precision + recall)
        if f1 > best_f1:
            best_f1, best_thresh = f1, thresh
    return best_f1, best_thresh


def fss(desc_a: np.ndarray, desc_b: np.ndarray) -> float:
    """Cosine similarity between two descriptors, clipped to [-1, 1]."""
    a = np.asarray(desc_a, dtype=np.float64)
    b = np.asarray(desc_b, dtype=np.float64)
    denom = np.linalg.norm(a) * np.linalg.norm(b)
    if denom == 0:
        raise DataError("zero-norm descriptor in similarity computation")
    return float(np.clip(a.dot(b) / denom, -1.0, 1.0))


def similarity_matrix(queries: np.ndarray, db: np.ndarray) -> np.ndarray:
    """M[i, j] = cosine similarity of query i and database entry j."""
    q = np.asarray(queries, dtype=np.float64)
    d = np.asarray(db, dtype=np.float64)
    qn = q / np.linalg.norm(q, axis=1, keepdims=True)
    dn = d / np.linalg.norm(d, axis=1, keepdims=True)
    return np.clip(qn @ dn.T, -1.0, 1.0).astype(np.float32)


def ssim(a: RangeImage | np.ndarray, b: RangeImage | np.ndarray,
         data_range: float) -> float:
    """Structural similarity on the distance channel.

    11x11 Gaussian window (sigma 1.5), C1 = (0.01 L)^2, C2 = (0.03 L)^2 with
    L = data_range; the window radius is cropped from the borders before
    averaging so padding never contributes.
    """
    x = (a.distance if isinstance(a, RangeImage) else np.asarray(a)).astype(np.float64)
    y = (b.distance if isinstance(b, RangeImage) else np.asarray(b)).astype(np.float64)
    if x.shape != y.shape:
        raise DataError(f"shape mismatch: {x.shape} vs {y.shape}")
    if data_range <= 0:
        raise ConfigurationError("data_range must be positive")

    truncate = SSIM_RADIUS / SSIM_SIGMA
    blur = lambda im: gaussian_filter(im, SSIM_SIGMA, truncate=truncate)
    mu_x, mu_y = blur(x), blur(y)
    xx, yy, xy = blur(x * x), blur(y * y), blur(x * y)
    var_x = xx - mu_x * mu_x
    var_y = yy - mu_y * mu_y
    cov = xy - mu_x * mu_y

    c1 = (0.01 * data_range) ** 2
    c2 = (0.03 * data_range) ** 2
    ssim_map = ((2 * mu_x * mu_y + c1) * (2 * cov + c2) /
                ((mu_x ** 2 + mu_y ** 2 + c1) * (var_x + var_y + c2)))
    r = SSIM_RADIUS
    return float(ssim_map[r:-r, r:-r].mean())


def recall_curve(results: list[RetrievalResult],
                 ground_truth: dict[int, set[int]], max_n: int = 20) -> list[tuple[int, float]]:
    return [(n, recall_at_n(results, ground_truth, n)) for n in range(1, max_n + 1)]


# ---------------------------------------------------------------------------
# Descriptor database and float32 matrix files
# ---------------------------------------------------------------------------

def save_descriptors(path: str | Path, descriptors: np.ndarray, poses: list[Pose]) -> None:
    """Write a descriptor database: uint32 (count, D) header + float32 rows,
    with a parallel pose manifest next to it."""
    from .pairing import save_poses

    descriptors = np.asarray(descriptors, dtype=np.float32)
    if descriptors.ndim != 2:
        raise DataError("descriptors must be (count, D)")
    if len(poses) != descriptors.shape[0]:
        raise DataError("descriptor/pose count mismatch")
    path = Path(path)
    with open(path, "wb") as fh:
        np.array(descriptors.shape, dtype="<u4").tofile(fh)
        descriptors.astype("<f4").tofile(fh)
    save_poses(path.with_suffix(path.suffix + ".manifest"), poses)


def load_descriptors(path: str | Path) -> tuple[np.ndarray, list[Pose]]:
    from .pairing import load_poses

    path = Path(path)
    if not path.is_file():
        raise DataError(f"descriptor file not found: {path}")
    with open(path, "rb") as fh:
        header = np.fromfile(fh, dtype="<u4", count=2)
        if header.size != 2:
            raise DataError(f"truncated descriptor header: {path}")
        count, dim = int(header[0]), int(header[1])
        values = np.fromfile(fh, dtype="<f4")
    if values.size != count * dim:
        raise DataError(f"descriptor payload size mismatch in {path}")
    manifest = path.with_suffix(path.suffix + ".manifest")
    poses = load_poses(manifest) if manifest.is_file() else []
    if poses and len(poses) != count:
        raise DataError(f"manifest length {len(poses)} != descriptor count {count}")
    return values.reshape(count, dim).astype(np.float64), poses


def save_matrix(path: str | Path, matrix: np.ndarray) -> None:
    """Float32 grid with a uint32 (rows, cols) header."""
    matrix = np.asarray(matrix, dtype=np.float32)
    if matrix.ndim != 2:
        raise DataError("matrix must be 2-D")
    with open(path, "wb") as fh:
        np.array(matrix.shape, dtype="<u4").tofile(fh)
        matrix.astype("<f4").tofile(fh)


def load_matrix(path: str | Path) -> np.ndarray:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"matrix file not found: {path}")
    with open(path, "rb") as fh:
        header = np.fromfile(fh, dtype="<u4", count=2)
        if header.size != 2:
            raise DataError(f"truncated matrix header: {path}")
        rows, cols = int(header[0]), int(header[1])
        values = np.fromfile(fh, dtype="<f4")
    if values.size != rows * cols:
        raise DataError(f"matrix payload size mismatch in {path}")
    return values.reshape(rows, cols)
