"""Command-line entrypoint.

Every subcommand is a pure function of its config file, its input files,
and the seed, so reruns produce byte-identical artifacts. Exit codes:
0 success, 2 configuration error, 3 data error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import sys
from pathlib import Path

import numpy as np

from .config import ExperimentConfig, load_config, save_config
from .corruption import corrupt
from .dataset import ScanSet, image_to_tensor, load_scan_set, tensor_to_image
from .errors import DataError, RangeloopError
from .evaluation import load_descriptors, load_matrix, retrieve, save_descriptors, save_matrix
from .nets import DescriptorNet, RestorationNet, load_checkpoint, save_checkpoint
from .pairing import find_aligned_pairs, load_poses
from .pipeline import metrics_json, restore_batch, run_evaluation, write_recall_curve
from .range_image import load_cloud, project, save_cloud, save_range_image
from .trainer import STRATEGIES, sub_seed, train
from .toyworld import generate_dataset


def _load_net(path: str | Path, kind: str):
    """Load a checkpoint from a file or from <run dir>/<kind>.npz."""
    path = Path(path)
    if path.is_dir():
        path = path / f"{kind}.npz"
    net, meta = load_checkpoint(path)
    expected = RestorationNet if kind == "ldr" else DescriptorNet
    if not isinstance(net, expected):
        raise DataError(f"{path} holds a {meta['kind']} checkpoint, expected {kind}")
    return net


def _splits(cfg: ExperimentConfig) -> dict[str, tuple[int, int]]:
    return {
        "train": cfg.data.train_split,
        "database": cfg.data.database_split,
        "query": cfg.data.query_split,
    }


def cmd_synth(args: argparse.Namespace) -> None:
    cfg = load_config(args.config) if args.config else None
    proj = cfg.projection if cfg else None
    scans_dir, poses_file = generate_dataset(
        args.out,
        seed=args.seed,
        n_per_lap=args.n_per_lap,
        laps=args.laps,
        cfg=proj,
    )
    print(f"wrote {scans_dir} and {poses_file}")


def cmd_corrupt(args: argparse.Namespace) -> None:
    cfg = load_config(args.config)
    cfg.require_paths()
    out_dir = Path(args.out) if args.out else Path(cfg.data.corrupted_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = []
    for pose in load_poses(cfg.data.poses_file):
        src = Path(cfg.data.scans_dir) / f"{pose.index:06d}.bin"
        dst = out_dir / src.name
        params = dataclasses.replace(
            cfg.corruption, rng_seed=sub_seed(cfg.seed, "corruption", pose.index)
        )
        cloud, flags = corrupt(load_cloud(src), params)
        save_cloud(dst, cloud)
        np.save(out_dir / f"{pose.index:06d}.flags.npy", flags)
        manifest.append(f"{src} {dst}")
    (out_dir / "manifest.txt").write_text("\n".join(manifest) + "\n")
    print(f"corrupted {len(manifest)} scans into {out_dir}")


def cmd_pair(args: argparse.Namespace) -> None:
    cfg = load_config(args.config)
    cfg.require_paths()
    poses = load_poses(cfg.data.poses_file)
    splits = _splits(cfg)
    lo_a, hi_a = splits[args.seq_a]
    lo_b, hi_b = splits[args.seq_b]
    seq_a = [p for p in poses if lo_a <= p.index < hi_a]
    seq_b = [p for p in poses if lo_b <= p.index < hi_b]
    pairs = find_aligned_pairs(
        seq_a, seq_b, dist_thresh=args.dist, ang_thresh=args.angle
    )
    out = Path(args.out) if args.out else Path(cfg.output_dir) / "pairs.txt"
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text("".join(f"{a} {b}\n" for a, b in pairs))
    print(f"wrote {len(pairs)} pairs to {out}")


def cmd_train(args: argparse.Namespace) -> None:
    cfg = load_config(args.config)
    if args.strategy:
        cfg = dataclasses.replace(cfg, strategy=args.strategy)
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    if args.out:
        cfg = dataclasses.replace(cfg, output_dir=str(args.out))
    cfg.require_paths()
    out_dir = Path(cfg.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    save_config(cfg, out_dir / "config.yaml")

    data = load_scan_set(
        cfg.data.scans_dir,
        cfg.data.poses_file,
        cfg.projection,
        corrupted_dir=cfg.data.corrupted_dir,
        split=cfg.data.train_split,
    )
    result = train(
        data,
        cfg.train,
        cfg.ldr,
        cfg.lpr,
        strategy=cfg.strategy,
        seed=cfg.seed,
        out_dir=out_dir,
        log_path=out_dir / "train_log.jsonl",
    )
    if result.ldr is not None:
        save_checkpoint(out_dir / "ldr.npz", result.ldr,
                        meta={"strategy": cfg.strategy, "seed": cfg.seed})
    save_checkpoint(out_dir / "lpr.npz", result.lpr,
                    meta={"strategy": cfg.strategy, "seed": cfg.seed})
    print(f"trained {cfg.strategy} for {cfg.train.epochs} epochs into {out_dir}")


def cmd_restore(args: argparse.Namespace) -> None:
    cfg = load_config(args.config)
    cfg.require_paths()
    ldr = _load_net(args.checkpoint, "ldr")
    out_dir = Path(args.out) if args.out else Path(cfg.output_dir) / "restored"
    out_dir.mkdir(parents=True, exist_ok=True)
    scans_dir = Path(cfg.data.corrupted_dir)
    if not scans_dir.is_dir():
        raise DataError(f"corrupted scans directory not found: {scans_dir}")
    count = 0
    for pose in load_poses(cfg.data.poses_file):
        src = scans_dir / f"{pose.index:06d}.bin"
        if not src.is_file():
            continue
        img = project(load_cloud(src), cfg.projection)
        t = image_to_tensor(img, cfg.projection.max_range)
        restored = restore_batch(ldr, t.unsqueeze(0))[0]
        save_range_image(
            out_dir / f"{pose.index:06d}.rimg",
            tensor_to_image(restored, cfg.projection.max_range),
        )
        count += 1
    if count == 0:
        raise DataError(f"no scans matched the poses file under {scans_dir}")
    print(f"restored {count} scans into {out_dir}")


def _split_descriptors(cfg: ExperimentConfig, split: str, checkpoint: str):
    """Descriptors for one split: clean scans, except the query split which
    uses degraded scans restored when a restorer checkpoint is available."""
    from .pipeline import describe_batch

    lpr = _load_net(checkpoint, "lpr")
    degraded = split == "query"
    data = load_scan_set(
        cfg.data.scans_dir,
        cfg.data.poses_file,
        cfg.projection,
        corrupted_dir=cfg.data.corrupted_dir if degraded else None,
        split=_splits(cfg)[split],
    )
    if degraded:
        images = data.noisy
        if cfg.strategy != "direct":
            ldr_path = Path(checkpoint)
            ldr_path = ldr_path / "ldr.npz" if ldr_path.is_dir() else ldr_path
            if ldr_path.name == "ldr.npz" and ldr_path.is_file():
                images = restore_batch(_load_net(ldr_path, "ldr"), images)
    else:
        images = data.clean
    return describe_batch(lpr, images), data


def cmd_describe(args: argparse.Namespace) -> None:
    cfg = load_config(args.config)
    cfg.require_paths()
    desc, data = _split_descriptors(cfg, args.split, args.checkpoint)
    out_dir = Path(args.out) if args.out else Path(cfg.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / f"descriptors_{args.split}.bin"
    save_descriptors(path, desc, data.poses)
    print(f"wrote {desc.shape[0]} descriptors to {path}")


def cmd_retrieve(args: argparse.Namespace) -> None:
    cfg = load_config(args.config)
    q_desc, q_poses = load_descriptors(args.query_descriptors)
    db_desc, db_poses = load_descriptors(args.database_descriptors)
    if not q_poses or not db_poses:
        raise DataError("retrieval needs descriptor manifests on both sides")
    db_indices = np.array([p.index for p in db_poses])
    out = Path(args.out) if args.out else Path(cfg.output_dir) / "retrieval.txt"
    out.parent.mkdir(parents=True, exist_ok=True)
    from .evaluation import exclusion_indices

    lines = []
    for qi, qpose in enumerate(q_poses):
        excl = exclusion_indices(qpose.index, db_indices, cfg.loop)
        res = retrieve(q_desc[qi], db_desc, k=args.k, exclusion=excl, query_index=qi)
        ranked = " ".join(
            f"{int(db_indices[pos])}:{score:.6f}"
            for pos, score in zip(res.indices, res.scores)
        )
        lines.append(f"{qpose.index} {ranked}")
    out.write_text("\n".join(lines) + "\n")
    print(f"wrote retrievals for {len(lines)} queries to {out}")


def cmd_eval(args: argparse.Namespace) -> None:
    cfg = load_config(args.config)
    if args.strategy:
        cfg = dataclasses.replace(cfg, strategy=args.strategy)
    cfg.require_paths()
    run_dir = Path(args.checkpoint) if args.checkpoint else Path(cfg.output_dir)
    lpr = _load_net(run_dir, "lpr")
    ldr = None
    if cfg.strategy != "direct":
        ldr = _load_net(run_dir, "ldr")

    database = load_scan_set(
        cfg.data.scans_dir, cfg.data.poses_file, cfg.projection,
        split=cfg.data.database_split,
    )
    queries = load_scan_set(
        cfg.data.scans_dir, cfg.data.poses_file, cfg.projection,
        corrupted_dir=cfg.data.corrupted_dir, split=cfg.data.query_split,
    )
    report = run_evaluation(queries, database, lpr, ldr=ldr, crit=cfg.loop)

    out_dir = Path(args.out) if args.out else Path(cfg.output_dir) / "eval"
    out_dir.mkdir(parents=True, exist_ok=True)
    meta = {
        "strategy": cfg.strategy,
        "seed": cfg.seed,
        "database_size": len(database),
        "query_count": len(queries),
        "f1_threshold": report["f1_threshold"],
    }
    (out_dir / "metrics.json").write_text(metrics_json(report["metrics"], meta))
    write_recall_curve(out_dir / "recall_curve.csv", report["recall_curve"])
    save_matrix(out_dir / "similarity.bin", report["similarity"])
    save_descriptors(out_dir / "descriptors_query.bin",
                     report["query_descriptors"], queries.poses)
    save_descriptors(out_dir / "descriptors_database.bin",
                     report["database_descriptors"], database.poses)
    print(f"metrics: {metrics_json(report['metrics']).strip()}")
    print(f"artifacts in {out_dir}")


def plot_recall_curve(curve: dict[int, float]):
    """Recall vs N as a marked line plot; returns the figure."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    if not curve:
        raise DataError("recall curve is empty")
    ns = sorted(curve)
    fig, ax = plt.subplots(figsize=(5, 4))
    ax.plot(ns, [curve[n] for n in ns], marker="o")
    ax.set_xlabel("N")
    ax.set_ylabel("Recall@N")
    ax.set_ylim(0.0, 1.05)
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    return fig


def plot_similarity(matrix: np.ndarray, path: str | Path) -> None:
    """Render a similarity matrix with the colormap spanning exactly the
    data range, one pixel per cell."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    if matrix.size == 0:
        raise DataError("similarity matrix is empty")
    plt.imsave(
        str(path), matrix, cmap="viridis",
        vmin=float(matrix.min()), vmax=float(matrix.max()),
    )


def cmd_plot(args: argparse.Namespace) -> None:
    artifacts = Path(args.artifacts)
    if not artifacts.is_dir():
        raise DataError(f"artifacts directory not found: {artifacts}")
    out_dir = Path(args.out) if args.out else artifacts
    out_dir.mkdir(parents=True, exist_ok=True)
    from .pipeline import read_recall_curve

    made = []
    curve_csv = artifacts / "recall_curve.csv"
    if curve_csv.is_file():
        fig = plot_recall_curve(read_recall_curve(curve_csv))
        fig.savefig(out_dir / "recall_curve.png", dpi=120)
        made.append("recall_curve.png")
    matrix_bin = artifacts / "similarity.bin"
    if matrix_bin.is_file():
        plot_similarity(load_matrix(matrix_bin), out_dir / "similarity.png")
        made.append("similarity.png")
    if not made:
        raise DataError(f"nothing to plot in {artifacts}")
    print(f"wrote {', '.join(made)} to {out_dir}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rangeloop",
        description="Range-image restoration and place recognition pipeline.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate the procedural toy dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--config", default=None)
    p.add_argument("--n-per-lap", type=int, default=110)
    p.add_argument("--laps", type=int, default=2)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("corrupt", help="write corrupted copies of every scan")
    p.add_argument("--config", required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_corrupt)

    p = sub.add_parser("pair", help="match aligned scans between two splits")
    p.add_argument("--config", required=True)
    p.add_argument("--seq-a", default="query", choices=("train", "database", "query"))
    p.add_argument("--seq-b", default="database", choices=("train", "database", "query"))
    p.add_argument("--dist", type=float, default=5.0)
    p.add_argument("--angle", type=float, default=180.0)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_pair)

    p = sub.add_parser("train", help="train one strategy end to end")
    p.add_argument("--config", required=True)
    p.add_argument("--strategy", choices=STRATEGIES, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("restore", help="apply the restorer to corrupted scans")
    p.add_argument("--config", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_restore)

    p = sub.add_parser("describe", help="emit descriptors for one split")
    p.add_argument("--config", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", choices=("train", "database", "query"), default="database")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_describe)

    p = sub.add_parser("retrieve", help="rank a database for saved query descriptors")
    p.add_argument("query_descriptors")
    p.add_argument("database_descriptors")
    p.add_argument("--config", required=True)
    p.add_argument("-k", type=int, default=20)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_retrieve)

    p = sub.add_parser("eval", help="full retrieval evaluation of a run")
    p.add_argument("--config", required=True)
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--strategy", choices=STRATEGIES, default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("plot", help="render eval artifacts to images")
    p.add_argument("artifacts")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_plot)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except RangeloopError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
