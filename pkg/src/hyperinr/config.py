"""Experiment configuration: sectioned key=value files with includes, typed
validation, a stable fingerprint, and dataset resolution for the pipelines."""
from __future__ import annotations

import hashlib
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import (
    ImageDataset,
    balanced_subset,
    gen_synthetic_clouds,
    gen_synthetic_images,
    load_image_dataset,
    make_grid,
)
from .arch import HyperNetArch, MainNetArch
from .diagnostics import rank_condition_check
from .errors import ConfigError
from .kdtree import build_udf_dataset, load_udf_dataset, load_xyz, save_udf_dataset
from .training import TrainingData, TrainSettings

DATA_ROOT_ENV = "HYPERINR_DATA"

IMAGE_KINDS = ("mnist", "fashion-mnist", "synthetic-blobs", "synthetic-rings")
CLOUD_KINDS = ("synthetic-clouds", "xyz-dir", "udf-cache")

_MNIST_FILES = {
    "train_images": "train-images-idx3-ubyte",
    "train_labels": "train-labels-idx1-ubyte",
    "test_images": "t10k-images-idx3-ubyte",
    "test_labels": "t10k-labels-idx1-ubyte",
}


def parse_config_text(text: str, source: str = "<string>") -> dict[str, dict[str, str]]:
    """Sections of key=value pairs; '#' and ';' start comments. An
    `include = path` line before the first section is handled by read_config."""
    sections: dict[str, dict[str, str]] = {}
    current = None
    for ln, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].split(";", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            current = line[1:-1].strip()
            if not current:
                raise ConfigError(f"{source}:{ln}: empty section name")
            sections.setdefault(current, {})
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{ln}: expected key = value, got {raw.strip()!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if current is None:
            if key != "include":
                raise ConfigError(f"{source}:{ln}: only 'include' is allowed before sections")
            sections.setdefault("", {})
            prev = sections[""].get("include")
            sections[""]["include"] = f"{prev},{value}" if prev else value
            continue
        sections[current][key] = value
    return sections


def read_config(path) -> dict[str, dict[str, str]]:
    """Parse a config file, resolving includes (relative to the including file)
    first so the including file's keys win."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    sections = parse_config_text(text, str(path))
    includes = sections.pop("", {}).get("include", "")
    merged: dict[str, dict[str, str]] = {}
    for inc in filter(None, (s.strip() for s in includes.split(","))):
        base = read_config(path.parent / inc)
        for sec, kv in base.items():
            merged.setdefault(sec, {}).update(kv)
    for sec, kv in sections.items():
        merged.setdefault(sec, {}).update(kv)
    return merged


def _get(sections, sec, key, default=None, required=False):
    val = sections.get(sec, {}).get(key)
    if val is None or val == "":
        if required and default is None:
            raise ConfigError(f"missing required config key [{sec}] {key}")
        return default
    return val


def _as_int(sections, sec, key, default=None, required=False):
    val = _get(sections, sec, key, default, required)
    if val is None or isinstance(val, int):
        return val
    try:
        return int(val)
    except ValueError as exc:
        raise ConfigError(f"[{sec}] {key}: expected integer, got {val!r}") from exc


def _as_float(sections, sec, key, default=None):
    val = _get(sections, sec, key, default)
    if val is None or isinstance(val, float):
        return val
    try:
        return float(val)
    except ValueError as exc:
        raise ConfigError(f"[{sec}] {key}: expected number, got {val!r}") from exc


def _as_ints(sections, sec, key, default):
    val = _get(sections, sec, key)
    if val is None:
        return tuple(default)
    try:
        return tuple(int(x) for x in val.split(",") if x.strip())
    except ValueError as exc:
        raise ConfigError(f"[{sec}] {key}: expected comma-separated integers") from exc


@dataclass(frozen=True)
class ExperimentConfig:
    """Validated experiment description; immutable once constructed."""

    dataset_kind: str
    data_root: str
    train_per_class: int
    test_per_class: int
    classes: int
    image_size: int
    cloud_points: int
    n_queries: int
    cache_path: str
    data_seed: int

    main_arch: MainNetArch
    hyper_arch_spec: tuple  # (latent_dim, trunk, heads); bound to main_arch

    epochs: int
    batch_size: int
    lr_hyper: float
    lr_latent: float
    precision: str
    coords_per_step: int | None
    infer_epochs: int
    train_seed: int

    classifier_hidden: tuple
    classifier_epochs: int
    classifier_batch: int
    classifier_lr: float

    output_dir: str

    @property
    def hyper_arch(self) -> HyperNetArch:
        latent_dim, trunk, heads = self.hyper_arch_spec
        return HyperNetArch(latent_dim, trunk, self.main_arch, heads=heads)

    @property
    def n_coords_per_sample(self) -> int:
        if self.dataset_kind in IMAGE_KINDS:
            return self.image_size * self.image_size
        return self.n_queries

    def train_settings(self) -> TrainSettings:
        return TrainSettings(
            epochs=self.epochs,
            batch_size=self.batch_size,
            lr_hyper=self.lr_hyper,
            lr_latent=self.lr_latent,
            precision=self.precision,
            coords_per_step=self.coords_per_step,
        )

    def infer_settings(self) -> TrainSettings:
        return TrainSettings(
            epochs=self.infer_epochs,
            batch_size=self.batch_size,
            lr_hyper=self.lr_hyper,
            lr_latent=self.lr_latent,
            precision=self.precision,
            coords_per_step=self.coords_per_step,
        )

    def canonical_lines(self) -> list[str]:
        main = self.main_arch
        latent_dim, trunk, heads = self.hyper_arch_spec
        pairs = {
            "dataset.kind": self.dataset_kind,
            "dataset.train_per_class": self.train_per_class,
            "dataset.test_per_class": self.test_per_class,
            "dataset.classes": self.classes,
            "dataset.image_size": self.image_size,
            "dataset.cloud_points": self.cloud_points,
            "dataset.n_queries": self.n_queries,
            "dataset.seed": self.data_seed,
            "mainnet.input_dim": main.input_dim,
            "mainnet.hidden": ",".join(map(str, main.hidden)),
            "mainnet.output_dim": main.output_dim,
            "mainnet.omega0": repr(main.omega0),
            "hypernet.latent_dim": latent_dim,
            "hypernet.trunk": ",".join(map(str, trunk)),
            "hypernet.heads": heads,
            "train.epochs": self.epochs,
            "train.batch_size": self.batch_size,
            "train.lr_hyper": repr(self.lr_hyper),
            "train.lr_latent": repr(self.lr_latent),
            "train.precision": self.precision,
            "train.coords_per_step": self.coords_per_step or 0,
            "train.infer_epochs": self.infer_epochs,
            "train.seed": self.train_seed,
            "classifier.hidden": ",".join(map(str, self.classifier_hidden)),
            "classifier.epochs": self.classifier_epochs,
            "classifier.batch_size": self.classifier_batch,
            "classifier.lr": repr(self.classifier_lr),
        }
        return [f"{k}={v}" for k, v in sorted(pairs.items())]

    @property
    def fingerprint(self) -> bytes:
        blob = "\n".join(self.canonical_lines()).encode("utf-8")
        return hashlib.sha256(blob).digest()

    def validation_warnings(self) -> list[str]:
        report = rank_condition_check(
            self.n_coords_per_sample, self.main_arch.output_dim,
            self.hyper_arch_spec[0],
        )
        return [] if report.satisfied else [report.message()]


def load_experiment_config(path) -> ExperimentConfig:
    sections = read_config(path)
    kind = _get(sections, "dataset", "kind", required=True, default=None)
    if kind not in IMAGE_KINDS + CLOUD_KINDS:
        raise ConfigError(f"unknown dataset kind {kind!r}")
    is_image = kind in IMAGE_KINDS
    image_size = _as_int(sections, "dataset", "image_size", 28)
    input_dim_default = 2 if is_image else 3
    main = MainNetArch(
        input_dim=_as_int(sections, "mainnet", "input_dim", input_dim_default),
        hidden=_as_ints(sections, "mainnet", "hidden", (64, 64, 64)),
        output_dim=_as_int(sections, "mainnet", "output_dim", 1),
        omega0=_as_float(sections, "mainnet", "omega0", 30.0),
    )
    if is_image and main.input_dim != 2:
        raise ConfigError(f"image datasets need input_dim=2, got {main.input_dim}")
    if not is_image and main.input_dim != 3:
        raise ConfigError(f"point datasets need input_dim=3, got {main.input_dim}")
    latent_dim = _as_int(sections, "hypernet", "latent_dim", 20)
    trunk = _as_ints(sections, "hypernet", "trunk", (256, 256))
    heads = _as_int(sections, "hypernet", "heads", 0)
    HyperNetArch(latent_dim, trunk, main, heads=heads)  # validates

    epochs = _as_int(sections, "train", "epochs", 500)
    coords_default = None if is_image else 2048
    raw_cps = _get(sections, "train", "coords_per_step")
    coords_per_step = int(raw_cps) if raw_cps else coords_default
    infer_epochs = _as_int(sections, "train", "infer_epochs", epochs)
    cfg = ExperimentConfig(
        dataset_kind=kind,
        data_root=_get(sections, "dataset", "root", os.environ.get(DATA_ROOT_ENV, "data")),
        train_per_class=_as_int(sections, "dataset", "train_per_class", 200),
        test_per_class=_as_int(sections, "dataset", "test_per_class", 50),
        classes=_as_int(sections, "dataset", "classes", 10),
        image_size=image_size,
        cloud_points=_as_int(sections, "dataset", "cloud_points", 2000),
        n_queries=_as_int(sections, "dataset", "n_queries", 10000),
        cache_path=_get(sections, "dataset", "cache", ""),
        data_seed=_as_int(sections, "dataset", "seed", 0),
        main_arch=main,
        hyper_arch_spec=(latent_dim, trunk, heads),
        epochs=epochs,
        batch_size=_as_int(sections, "train", "batch_size", 1024),
        lr_hyper=_as_float(sections, "train", "lr_hyper", 1e-4),
        lr_latent=_as_float(sections, "train", "lr_latent", 1e-3),
        precision=_get(sections, "train", "precision", "f64"),
        coords_per_step=coords_per_step,
        infer_epochs=infer_epochs,
        train_seed=_as_int(sections, "train", "seed", 0),
        classifier_hidden=_as_ints(sections, "classifier", "hidden", (128, 128, 128)),
        classifier_epochs=_as_int(sections, "classifier", "epochs", 150),
        classifier_batch=_as_int(sections, "classifier", "batch_size", 128),
        classifier_lr=_as_float(sections, "classifier", "lr", 1e-3),
        output_dir=_get(sections, "output", "dir", "runs/default"),
    )
    if cfg.precision not in ("f64", "f32"):
        raise ConfigError(f"[train] precision must be f64 or f32, got {cfg.precision!r}")
    if cfg.train_per_class < 1 or cfg.test_per_class < 0 or cfg.classes < 1:
        raise ConfigError("dataset subset sizes must be positive")
    return cfg


def _maybe_gz(path: Path) -> Path:
    if path.exists():
        return path
    gz = path.with_name(path.name + ".gz")
    if gz.exists():
        return gz
    raise ConfigError(f"dataset file not found: {path} (or {gz.name})")


def _read_idx_file(path: Path) -> bytes:
    import gzip

    if path.name.endswith(".gz"):
        with gzip.open(path, "rb") as fh:
            return fh.read()
    return path.read_bytes()


def _load_mnist_split(root: Path, train: bool) -> ImageDataset:
    from .data import parse_idx

    img = _read_idx_file(_maybe_gz(root / _MNIST_FILES["train_images" if train else "test_images"]))
    lab = _read_idx_file(_maybe_gz(root / _MNIST_FILES["train_labels" if train else "test_labels"]))
    raw = parse_idx(img)
    labels = parse_idx(lab)
    t, h, w = raw.shape
    return ImageDataset(raw.reshape(t, h * w).astype(np.float64) / 255.0,
                        labels.astype(np.int64), h, w)


def _image_training_data(ds: ImageDataset) -> TrainingData:
    grid = make_grid(ds.height, ds.width)
    t = len(ds)
    return TrainingData(
        targets=ds.images.reshape(t, ds.height * ds.width, 1),
        shared_grid=grid,
        labels=ds.labels,
    )


def _udf_training_data(queries, udf, labels) -> TrainingData:
    t, n, _ = queries.shape
    return TrainingData(targets=udf.reshape(t, n, 1), coords=queries, labels=labels)


def resolve_datasets(cfg: ExperimentConfig):
    """Load or generate the (train, test) TrainingData pair for a config."""
    kind = cfg.dataset_kind
    if kind in ("mnist", "fashion-mnist"):
        root = Path(cfg.data_root) / ("mnist" if kind == "mnist" else "fashion-mnist")
        train_full = _load_mnist_split(root, train=True)
        test_full = _load_mnist_split(root, train=False)
        classes = np.arange(cfg.classes)
        train = balanced_subset(train_full, cfg.train_per_class, classes)
        test = balanced_subset(test_full, cfg.test_per_class, classes)
        return _image_training_data(train), _image_training_data(test)
    if kind in ("synthetic-blobs", "synthetic-rings"):
        flavor = "blobs" if kind.endswith("blobs") else "rings"
        train = gen_synthetic_images(flavor, cfg.classes, cfg.train_per_class,
                                     seed=cfg.data_seed, size=cfg.image_size)
        test = gen_synthetic_images(flavor, cfg.classes, cfg.test_per_class,
                                    seed=cfg.data_seed + 1000003, size=cfg.image_size)
        return _image_training_data(train), _image_training_data(test)
    if kind == "synthetic-clouds":
        return _resolve_cloud_data(cfg)
    if kind == "xyz-dir":
        return _resolve_xyz_data(cfg)
    if kind == "udf-cache":
        ds = load_udf_dataset(Path(cfg.cache_path or cfg.data_root))
        t = len(ds)
        n_train = min(cfg.train_per_class * cfg.classes, t)
        train = _udf_training_data(ds.queries[:n_train], ds.udf[:n_train], ds.labels[:n_train])
        test = _udf_training_data(ds.queries[n_train:], ds.udf[n_train:], ds.labels[n_train:])
        return train, test
    raise ConfigError(f"unknown dataset kind {kind!r}")


def _cached_udf(cfg: ExperimentConfig, tag: str, clouds, labels):
    if cfg.cache_path:
        cache = Path(cfg.cache_path.replace("{split}", tag))
        if cache.exists():
            return load_udf_dataset(cache)
    ds = build_udf_dataset(clouds, labels, n_queries=cfg.n_queries, seed=cfg.data_seed)
    if cfg.cache_path:
        cache = Path(cfg.cache_path.replace("{split}", tag))
        cache.parent.mkdir(parents=True, exist_ok=True)
        save_udf_dataset(ds, cache)
    return ds


def _resolve_cloud_data(cfg: ExperimentConfig):
    train_clouds, train_labels = gen_synthetic_clouds(
        cfg.classes, cfg.train_per_class, seed=cfg.data_seed, n_points=cfg.cloud_points)
    test_clouds, test_labels = gen_synthetic_clouds(
        cfg.classes, cfg.test_per_class, seed=cfg.data_seed + 1000003,
        n_points=cfg.cloud_points)
    train = _cached_udf(cfg, "train", train_clouds, train_labels)
    test = _cached_udf(cfg, "test", test_clouds, test_labels)
    return (_udf_training_data(train.queries, train.udf, train.labels),
            _udf_training_data(test.queries, test.udf, test.labels))


def _resolve_xyz_data(cfg: ExperimentConfig):
    root = Path(cfg.data_root)
    if not root.is_dir():
        raise ConfigError(f"xyz dataset root {root} is not a directory")
    class_dirs = sorted(d for d in root.iterdir() if d.is_dir())
    if not class_dirs:
        raise ConfigError(f"no class subdirectories under {root}")
    train_clouds, train_labels, test_clouds, test_labels = [], [], [], []
    for ci, d in enumerate(class_dirs):
        files = sorted(d.glob("*.xyz"))
        need = cfg.train_per_class + cfg.test_per_class
        if len(files) < need:
            raise ConfigError(f"class {d.name}: {len(files)} clouds, need {need}")
        for f in files[:cfg.train_per_class]:
            train_clouds.append(load_xyz(f))
            train_labels.append(ci)
        for f in files[cfg.train_per_class:need]:
            test_clouds.append(load_xyz(f))
            test_labels.append(ci)
    train = _cached_udf(cfg, "train", train_clouds, np.array(train_labels))
    test = _cached_udf(cfg, "test", test_clouds, np.array(test_labels))
    return (_udf_training_data(train.queries, train.udf, train.labels),
            _udf_training_data(test.queries, test.udf, test.labels))
