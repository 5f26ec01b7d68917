"""Command-line front end: ``extract``, ``train``, ``eval`` (plus ``synth`` for demo data).

Every stage records its configuration, input digests and output digests in
``<out>/manifest.json``; passing that file back through ``--config`` reruns
the stage with identical settings.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import platform
import sys
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import __version__
from ._backend import BACKEND
from .errors import DimMismatch, RadioHybridError
from .evaluation import EvalReport, evaluate, report_delta
from .fusionnet import TrainConfig, TrainHistory, fuse_matrices, load_checkpoint, save_checkpoint, train
from .imgio import CLASS_NAMES, LabeledDataset, read_feature_file, read_pgm, scan_dataset, stratified_split, write_feature_file
from .preprocess import AugmentConfig, preprocess_image
from .radiomics import GaborBank, HogConfig, LbpConfig, RadiomicsConfig, extract_radiomics

log = logging.getLogger("radiohybrid")

SPLITS = {"train": "Training", "test": "Testing"}
MANIFEST = "manifest.json"
CHECKPOINT = "model.rhn"
HISTORY = "history.csv"
METRICS = "metrics.json"
METRICS_TTA = "metrics_tta.json"
TTA_DELTA = "tta_delta.json"


def features_name(split: str) -> str:
    return f"features_{split}.rfv"


@dataclass
class RunConfig:
    """Flat run configuration; every key maps one-to-one onto the JSON config file."""

    data: str | None = None
    out: str = "run"
    seed: int = 0
    image_size: int = 224
    train_fraction: float = 0.8
    deep_features_train: str | None = None
    deep_features_test: str | None = None
    tta: bool = False
    views: int = 8
    # augmentation (test-time)
    aug_rotation_max_deg: float = 15.0
    aug_p_flip_h: float = 0.5
    aug_p_flip_v: float = 0.5
    aug_blur_sigma_min: float = 0.5
    aug_blur_sigma_max: float = 1.0
    aug_brightness: float = 0.1
    aug_contrast_min: float = 0.9
    aug_contrast_max: float = 1.1
    # descriptors
    hog_cell_size: int = 8
    hog_block_size: int = 2
    hog_block_stride: int = 1
    hog_bins: int = 9
    hog_l2_eps: float = 1e-6
    lbp_neighbors: int = 8
    lbp_radius: float = 1.0
    gabor_orientations: list = field(default_factory=lambda: [0.0, 45.0, 90.0, 135.0])
    gabor_wavelengths: list = field(default_factory=lambda: [4.0, 8.0])
    gabor_psi: float = 0.0
    gabor_sigma_ratio: float = 0.56
    gabor_gamma: float = 0.5
    wavelet_levels: int = 2
    # training
    batch_size: int = 32
    max_epochs: int = 50
    lr: float = 1e-3
    early_stop_patience: int = 10
    plateau_factor: float = 0.1
    plateau_patience: int = 5
    min_lr: float = 1e-6
    hidden: list = field(default_factory=lambda: [512, 128])
    dropout: float = 0.5
    weight_decay: float = 0.0

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)

    def augment_config(self) -> AugmentConfig:
        return AugmentConfig(
            self.aug_rotation_max_deg,
            self.aug_p_flip_h,
            self.aug_p_flip_v,
            (self.aug_blur_sigma_min, self.aug_blur_sigma_max),
            self.aug_brightness,
            (self.aug_contrast_min, self.aug_contrast_max),
            self.seed,
        )

    def radiomics_config(self) -> RadiomicsConfig:
        return RadiomicsConfig(
            HogConfig(self.hog_cell_size, self.hog_block_size, self.hog_block_stride, self.hog_bins, self.hog_l2_eps),
            LbpConfig(self.lbp_neighbors, self.lbp_radius),
            GaborBank(
                tuple(self.gabor_orientations),
                tuple(self.gabor_wavelengths),
                self.gabor_psi,
                self.gabor_sigma_ratio,
                self.gabor_gamma,
            ),
            self.wavelet_levels,
        )

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            batch_size=self.batch_size,
            max_epochs=self.max_epochs,
            lr=self.lr,
            early_stop_patience=self.early_stop_patience,
            plateau_factor=self.plateau_factor,
            plateau_patience=self.plateau_patience,
            min_lr=self.min_lr,
            hidden=tuple(self.hidden),
            dropout=self.dropout,
            weight_decay=self.weight_decay,
            seed=self.seed,
        )


# ---------------------------------------------------------------------
# Digests and manifest
# ---------------------------------------------------------------------
def file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def dataset_digest(ds: LabeledDataset, root: Path) -> str:
    h = hashlib.sha256()
    for path, label in ds.samples:
        h.update(f"{Path(path).relative_to(root).as_posix()}\t{label}\t{file_digest(path)}\n".encode())
    return h.hexdigest()


def load_manifest(out: Path) -> dict:
    p = out / MANIFEST
    if p.exists():
        return json.loads(p.read_text())
    return {"format": 1, "stages": {}}


def write_manifest(out: Path, manifest: dict, cfg: RunConfig) -> None:
    manifest["config"] = cfg.to_dict()
    manifest["environment"] = {
        "package_version": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "kernel_backend": BACKEND,
        "blas_threads": _blas_threads(),
    }
    (out / MANIFEST).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _blas_threads():
    try:
        from threadpoolctl import threadpool_info

        return {i["internal_api"]: i["num_threads"] for i in threadpool_info()}
    except ImportError:
        return {k: os.environ.get(k) for k in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS")}


def _check_recorded(manifest: dict, stage: str, path: Path) -> None:
    recorded = manifest.get("stages", {}).get(stage, {}).get("outputs", {}).get(path.name)
    if recorded and recorded != file_digest(path):
        log.warning("%s does not match the digest recorded by %s; it may be stale", path, stage)


# ---------------------------------------------------------------------
# Stages
# ---------------------------------------------------------------------
def cmd_extract(cfg: RunConfig) -> dict:
    if cfg.data is None:
        raise FileNotFoundError("--data is required for extract")
    root = Path(cfg.data)
    if not root.is_dir():
        raise FileNotFoundError(f"dataset root {root} does not exist")
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    rcfg = cfg.radiomics_config()

    splits = {}
    for key, dirname in SPLITS.items():
        if key == "test" and not (root / dirname).is_dir():
            log.info("no %s split under %s; skipping", dirname, root)
            continue
        splits[key] = scan_dataset(root / dirname)

    manifest = load_manifest(out)
    stage = {"inputs": {}, "outputs": {}, "counts": {}}
    elapsed, n_images = 0.0, 0
    for key, ds in splits.items():
        split_root = root / SPLITS[key]
        stage["inputs"][SPLITS[key]] = dataset_digest(ds, split_root)
        rows = []
        segments = None
        for i, (path, _) in enumerate(ds.samples):
            t0 = time.perf_counter()
            tensor = extract_radiomics(preprocess_image(read_pgm(path), cfg.image_size), rcfg)
            elapsed += time.perf_counter() - t0
            n_images += 1
            rows.append(tensor.vector.astype(np.float32))
            segments = tensor.segments
            if (i + 1) % 200 == 0 or i + 1 == len(ds):
                log.info("%s: %d/%d images", SPLITS[key], i + 1, len(ds))
        fpath = out / features_name(key)
        write_feature_file(fpath, np.vstack(rows), ds.labels)
        seg_path = out / f"features_{key}.segments.json"
        seg_path.write_text(json.dumps({k: list(v) for k, v in segments.items()}, indent=2) + "\n")
        list_path = out / f"samples_{key}.txt"
        list_path.write_text("".join(f"{Path(p).relative_to(split_root).as_posix()}\t{lab}\n" for p, lab in ds.samples))
        for p in (fpath, seg_path, list_path):
            stage["outputs"][p.name] = file_digest(p)
        stage["counts"][key] = len(ds)
    stage["ms_per_image"] = 1000.0 * elapsed / max(n_images, 1)
    stage["image_size"] = cfg.image_size
    manifest["stages"]["extract"] = stage
    write_manifest(out, manifest, cfg)
    log.info("extracted %d images, %.1f ms/image", n_images, stage["ms_per_image"])
    return stage


def _load_rows(cfg: RunConfig, out: Path, split: str, deep_path: str | None):
    fpath = out / features_name(split)
    rad, labels = read_feature_file(fpath)
    deep = None
    if deep_path:
        deep, deep_labels = read_feature_file(deep_path)
        if len(deep) != len(rad):
            raise DimMismatch(f"{deep_path} has {len(deep)} rows, {fpath.name} has {len(rad)}")
        if not np.array_equal(deep_labels, labels):
            raise DimMismatch(f"{deep_path} labels do not line up with {fpath.name}")
    return rad, deep, labels.astype(np.int64)


def cmd_train(cfg: RunConfig) -> dict:
    out = Path(cfg.out)
    manifest = load_manifest(out)
    fpath = out / features_name("train")
    _check_recorded(manifest, "extract", fpath)
    rad, deep, labels = _load_rows(cfg, out, "train", cfg.deep_features_train)
    x = fuse_matrices(deep, rad)
    ds = LabeledDataset([(i, int(lab)) for i, lab in enumerate(labels)], CLASS_NAMES)
    tr, va = stratified_split(ds, cfg.train_fraction, cfg.seed)
    tr_idx = np.array([i for i, _ in tr.samples])
    va_idx = np.array([i for i, _ in va.samples])
    tcfg = cfg.train_config()
    t0 = time.perf_counter()
    params, history = train(x[tr_idx], labels[tr_idx], x[va_idx], labels[va_idx], tcfg, log=log.info)
    seconds = time.perf_counter() - t0
    save_checkpoint(params, out / CHECKPOINT)
    history.write_csv(out / HISTORY)
    inputs = {fpath.name: file_digest(fpath)}
    if cfg.deep_features_train:
        inputs[Path(cfg.deep_features_train).name] = file_digest(cfg.deep_features_train)
    stage = {
        "inputs": inputs,
        "outputs": {CHECKPOINT: file_digest(out / CHECKPOINT), HISTORY: file_digest(out / HISTORY)},
        "train_config": tcfg.to_dict(),
        "n_train": len(tr_idx),
        "n_val": len(va_idx),
        "input_dim": int(x.shape[1]),
        "n_parameters": params.n_parameters(),
        "epochs_run": len(history),
        "best_epoch": history.best_epoch,
        "stopped_early": history.stopped_early,
        "seconds": seconds,
    }
    manifest["stages"]["train"] = stage
    write_manifest(out, manifest, cfg)
    return stage


def cmd_eval(cfg: RunConfig) -> dict:
    out = Path(cfg.out)
    manifest = load_manifest(out)
    ckpt = out / CHECKPOINT
    fpath = out / features_name("test")
    for p in (ckpt, fpath):
        if not p.exists():
            raise FileNotFoundError(f"missing input {p}")
    _check_recorded(manifest, "train", ckpt)
    _check_recorded(manifest, "extract", fpath)
    params = load_checkpoint(ckpt)
    rad, deep, labels = _load_rows(cfg, out, "test", cfg.deep_features_test)
    x = fuse_matrices(deep, rad)
    report = evaluate(params, x, labels)
    report.write(out / METRICS)
    outputs = {METRICS: file_digest(out / METRICS)}
    stage = {"inputs": {ckpt.name: file_digest(ckpt), fpath.name: file_digest(fpath)}, "accuracy": report.accuracy}
    if cfg.tta:
        if cfg.data is None:
            raise FileNotFoundError("--tta needs --data to re-read the test images")
        split_root = Path(cfg.data) / SPLITS["test"]
        images = [split_root / line.split("\t")[0] for line in (out / "samples_test.txt").read_text().splitlines()]
        tta = evaluate(
            params,
            x,
            labels,
            tta=True,
            n_views=cfg.views,
            images=images,
            aug_cfg=cfg.augment_config(),
            radiomics_cfg=cfg.radiomics_config(),
            deep=None if deep is None else deep.astype(np.float64),
            image_size=cfg.image_size,
        )
        tta.write(out / METRICS_TTA)
        delta = report_delta(report, tta)
        (out / TTA_DELTA).write_text(json.dumps(delta, indent=2) + "\n")
        outputs[METRICS_TTA] = file_digest(out / METRICS_TTA)
        outputs[TTA_DELTA] = file_digest(out / TTA_DELTA)
        stage["tta_accuracy"] = tta.accuracy
        log.info("accuracy %.2f%%, with TTA (%d views) %.2f%%", report.accuracy, cfg.views, tta.accuracy)
    else:
        log.info("accuracy %.2f%%", report.accuracy)
    # validate what was written
    EvalReport.from_json((out / METRICS).read_text())
    stage["outputs"] = outputs
    manifest["stages"]["eval"] = stage
    write_manifest(out, manifest, cfg)
    return stage


def cmd_synth(args) -> None:
    from .synth import make_dataset

    make_dataset(args.data, args.n_train, args.n_test, args.size, args.seed or 0)
    log.info("wrote synthetic dataset to %s", args.data)


# ---------------------------------------------------------------------
# Argument handling
# ---------------------------------------------------------------------
def build_parser() -> argparse.ArgumentParser:
    shared = argparse.ArgumentParser(add_help=False)
    shared.add_argument("--config", help="JSON config (a previous manifest.json also works)")
    shared.add_argument("--data", help="dataset root holding Training/ and Testing/")
    shared.add_argument("--out", help="run output directory")
    shared.add_argument("--seed", type=int)
    shared.add_argument("--deep-features", dest="deep_features", help="RFV1 file of deep features for this stage")
    shared.add_argument("--tta", action="store_true", default=None, help="also evaluate with test-time augmentation")
    shared.add_argument("--views", type=int, help="TTA views including the original")
    shared.add_argument("--image-size", dest="image_size", type=int)
    shared.add_argument("--max-epochs", dest="max_epochs", type=int)
    shared.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="radiohybrid", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("extract", parents=[shared], help="preprocess images and write radiomic feature files")
    sub.add_parser("train", parents=[shared], help="train the fusion head")
    sub.add_parser("eval", parents=[shared], help="evaluate on the test split")
    sp = sub.add_parser("synth", parents=[shared], help="write a synthetic texture dataset")
    sp.add_argument("--n-train", dest="n_train", type=int, default=75)
    sp.add_argument("--n-test", dest="n_test", type=int, default=25)
    sp.add_argument("--size", type=int, default=64)
    return parser


def resolve_config(args) -> RunConfig:
    base: dict = {}
    if args.config:
        raw = json.loads(Path(args.config).read_text())
        base = raw.get("config", raw)
    cfg = RunConfig.from_dict(base)
    for key in ("data", "out", "seed", "views", "image_size", "max_epochs"):
        val = getattr(args, key, None)
        if val is not None:
            setattr(cfg, key, val)
    if args.tta:
        cfg.tta = True
    if args.deep_features:
        if args.command == "train":
            cfg.deep_features_train = args.deep_features
        elif args.command == "eval":
            cfg.deep_features_test = args.deep_features
    return cfg


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        stream=sys.stderr,
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        if args.command == "synth":
            if not args.data:
                raise FileNotFoundError("--data is required for synth")
            cmd_synth(args)
            return 0
        cfg = resolve_config(args)
        {"extract": cmd_extract, "train": cmd_train, "eval": cmd_eval}[args.command](cfg)
    except RadioHybridError as exc:
        print(json.dumps({"error": exc.code, "message": str(exc)}), file=sys.stderr)
        return 2
    except (FileNotFoundError, ValueError, json.JSONDecodeError) as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
