"""End-to-end retrieval evaluation: restore queries, describe both sides,
run retrieval, and aggregate metrics into a stable JSON document.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import torch

from .dataset import ScanSet
from .errors import DataError
from .evaluation import (
    LoopCriterion,
    exclusion_indices,
    f1_score,
    fss,
    is_true_loop,
    recall_at_n,
    recall_at_percent,
    recall_curve,
    retrieve,
    similarity_matrix,
    ssim,
)
from .nets import DescriptorNet, RestorationNet

METRIC_KEYS = ("recall@1", "recall@5", "recall@1pct", "f1", "ssim_mean", "fss_mean")


def restore_batch(
    ldr: RestorationNet, images: torch.Tensor, chunk: int = 8
) -> torch.Tensor:
    """Run the restorer over (n, 2, H, W) images without gradients."""
    ldr.eval()
    with torch.no_grad():
        parts = [ldr(images[i : i + chunk]) for i in range(0, images.shape[0], chunk)]
    return torch.cat(parts)


def describe_batch(
    lpr: DescriptorNet, images: torch.Tensor, chunk: int = 8
) -> np.ndarray:
    """Descriptors for (n, 2, H, W) images as a float32 (n, D) array."""
    lpr.eval()
    with torch.no_grad():
        parts = [lpr(images[i : i + chunk]) for i in range(0, images.shape[0], chunk)]
    return torch.cat(parts).numpy().astype(np.float32)


def ground_truth_sets(
    queries: ScanSet, database: ScanSet, crit: LoopCriterion, same_sequence: bool
) -> dict[int, set[int]]:
    """True-loop database positions per query position, honoring exclusion."""
    out: dict[int, set[int]] = {}
    for qi, qpose in enumerate(queries.poses):
        out[qi] = {
            di
            for di, dpose in enumerate(database.poses)
            if is_true_loop(qpose, dpose, crit, qpose.index, dpose.index, same_sequence)
        }
    return out


def run_evaluation(
    queries: ScanSet,
    database: ScanSet,
    lpr: DescriptorNet,
    ldr: RestorationNet | None = None,
    crit: LoopCriterion | None = None,
    same_sequence: bool = True,
) -> dict:
    """Evaluate place recognition of degraded queries against a clean map.

    Queries are restored first when a restorer is given, otherwise used raw.
    Returns a dict with scalar metrics, the recall curve, the query/clean
    similarity matrix, and the descriptor arrays.
    """
    if queries.noisy is None:
        raise DataError("query ScanSet has no degraded scans")
    crit = crit or LoopCriterion()

    query_images = restore_batch(ldr, queries.noisy) if ldr is not None else queries.noisy
    q_desc = describe_batch(lpr, query_images)
    q_desc_clean = describe_batch(lpr, queries.clean)
    db_desc = describe_batch(lpr, database.clean)

    truths = ground_truth_sets(queries, database, crit, same_sequence)
    db_indices = np.array(database.indices)
    one_pct = max(1, int(np.ceil(0.01 * len(database))))
    k = max(20, one_pct)
    results = []
    for qi in range(len(queries)):
        excl = (
            exclusion_indices(queries.poses[qi].index, db_indices, crit)
            if same_sequence
            else None
        )
        results.append(
            retrieve(q_desc[qi], db_desc, k=k, exclusion=excl, query_index=qi)
        )

    f1, threshold = f1_score(results, truths)
    curve = dict(recall_curve(results, truths, max_n=20))

    max_range = queries.max_range
    ssim_vals = []
    for qi in range(len(queries)):
        pred = query_images[qi].numpy().astype(np.float64)
        gt = queries.clean[qi].numpy().astype(np.float64)
        ssim_vals.append(ssim(pred[0] * max_range, gt[0] * max_range, data_range=max_range))
    fss_vals = [fss(q_desc[qi], q_desc_clean[qi]) for qi in range(len(queries))]

    metrics = {
        "recall@1": recall_at_n(results, truths, 1),
        "recall@5": recall_at_n(results, truths, 5),
        "recall@1pct": recall_at_percent(results, truths, len(database), 0.01),
        "f1": f1,
        "ssim_mean": float(np.mean(ssim_vals)),
        "fss_mean": float(np.mean(fss_vals)),
    }
    return {
        "metrics": metrics,
        "f1_threshold": threshold,
        "recall_curve": curve,
        "similarity": similarity_matrix(q_desc, q_desc_clean),
        "query_descriptors": q_desc,
        "database_descriptors": db_desc,
    }


def metrics_json(metrics: dict, meta: dict | None = None) -> str:
    """Serialize metrics (plus optional metadata) deterministically."""
    doc = {key: metrics[key] for key in METRIC_KEYS}
    if meta:
        doc["meta"] = meta
    return json.dumps(doc, sort_keys=True, indent=2) + "\n"


def write_recall_curve(path: str | Path, curve: dict[int, float]) -> None:
    lines = ["n,recall"]
    lines += [f"{n},{curve[n]!r}" for n in sorted(curve)]
    Path(path).write_text("\n".join(lines) + "\n")


def read_recall_curve(path: str | Path) -> dict[int, float]:
    lines = Path(path).read_text().strip().splitlines()
    if not lines or lines[0] != "n,recall":
        raise DataError(f"malformed recall curve file: {path}")
    out = {}
    for line in lines[1:]:
        n, r = line.split(",")
        out[int(n)] = float(r)
    return out
