"""Command-line entry point: train, infer, diagnose, classify, pca, interp.

Human-readable progress goes to stderr; machine artifacts only to files.
Exit codes: 0 success, 1 numeric/training failure, 2 config/IO failure.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np
import torch

from .bundle import ModelBundle, atomic_write_bytes, load_bundle, save_bundle
from .config import load_experiment_config, resolve_datasets
from .data import write_pgm
from .diagnostics import conditioning_tables, reports_to_csv
from .downstream import (
    accuracy,
    decode_weights,
    interpolate_latents,
    pca_fit,
    pca_transform,
    train_classifier,
)
from .errors import ConfigError, FormatError, NumericError, TrainingError
from .training import infer_latents, train_joint


def _log(msg: str) -> None:
    print(msg, file=sys.stderr, flush=True)


def parse_seed_spec(spec: str) -> list[int]:
    """'7' -> [7]; '1..5' -> [1,2,3,4,5]; '1,4,9' -> [1,4,9]."""
    spec = spec.strip()
    if ".." in spec:
        lo, hi = spec.split("..", 1)
        return list(range(int(lo), int(hi) + 1))
    if "," in spec:
        return [int(s) for s in spec.split(",") if s.strip()]
    return [int(spec)]


def _progress_printer(label: str, total: int):
    stride = max(1, total // 20)

    def cb(epoch, mse):
        if epoch % stride == 0 or epoch == total - 1:
            _log(f"{label}: epoch {epoch + 1}/{total} mse={mse:.4e}")

    return cb


def _require_fingerprint(bundle: ModelBundle, cfg, force: bool, what: str) -> None:
    if bundle.fingerprint != cfg.fingerprint:
        if force:
            _log(f"warning: {what} fingerprint differs from config (forced)")
            return
        raise FormatError(
            f"{what} was produced by a different configuration "
            f"(fingerprint mismatch); pass --force to override"
        )


def _emit_warnings(cfg) -> None:
    for w in cfg.validation_warnings():
        _log(f"warning: {w}")


def _out_dir(args, cfg) -> Path:
    out = Path(args.out) if args.out else Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_train(args) -> int:
    cfg = load_experiment_config(args.config)
    _emit_warnings(cfg)
    train_data, _ = resolve_datasets(cfg)
    out = _out_dir(args, cfg)
    seeds = parse_seed_spec(args.seed) if args.seed else [cfg.train_seed]
    for seed in seeds:
        _log(f"training seed {seed}: {train_data.n_samples} samples, "
             f"{cfg.epochs} epochs ({cfg.precision})")
        result = train_joint(cfg.hyper_arch, train_data, cfg.train_settings(), seed,
                             progress=_progress_printer(f"train[{seed}]", cfg.epochs))
        bundle = ModelBundle(
            params=result.params,
            latents=result.latents,
            sample_ids=np.arange(train_data.n_samples),
            labels=train_data.labels,
            fingerprint=cfg.fingerprint,
            seed=seed,
            split="train",
            meta={"precision": cfg.precision, "epochs": cfg.epochs,
                  "dataset": cfg.dataset_kind},
        )
        bundle_path = out / f"bundle_seed{seed}.hinr"
        save_bundle(bundle, bundle_path)
        atomic_write_bytes(out / f"trainlog_seed{seed}.csv", result.log.to_csv().encode())
        _log(f"wrote {bundle_path} (final mse {result.log.mean_mse[-1]:.4e})")
    return 0


def cmd_infer(args) -> int:
    cfg = load_experiment_config(args.config)
    _emit_warnings(cfg)
    bundle = load_bundle(args.bundle)
    _require_fingerprint(bundle, cfg, args.force, "bundle")
    _, test_data = resolve_datasets(cfg)
    out = _out_dir(args, cfg)
    seeds = parse_seed_spec(args.seed) if args.seed else [cfg.train_seed]
    settings = cfg.infer_settings()
    for seed in seeds:
        _log(f"inferring latents for {test_data.n_samples} samples, "
             f"{settings.epochs} epochs (seed {seed})")
        result = infer_latents(bundle.params, test_data, settings, seed,
                               progress=_progress_printer(f"infer[{seed}]", settings.epochs))
        test_bundle = ModelBundle(
            params=bundle.params,
            latents=result.latents,
            sample_ids=np.arange(test_data.n_samples),
            labels=test_data.labels,
            fingerprint=cfg.fingerprint,
            seed=seed,
            split="test",
            meta={"precision": cfg.precision, "epochs": settings.epochs,
                  "dataset": cfg.dataset_kind, "source_bundle_seed": bundle.seed},
        )
        path = out / f"test_latents_seed{seed}.hinr"
        save_bundle(test_bundle, path)
        atomic_write_bytes(out / f"inferlog_seed{seed}.csv", result.log.to_csv().encode())
        _log(f"wrote {path} (final mse {result.log.mean_mse[-1]:.4e})")
    return 0


def cmd_diagnose(args) -> int:
    cfg = load_experiment_config(args.config)
    bundle = load_bundle(args.bundle)
    _require_fingerprint(bundle, cfg, args.force, "bundle")
    split = args.split or bundle.split
    train_data, test_data = resolve_datasets(cfg)
    data = train_data if split == "train" else test_data
    if data.n_samples != bundle.n_samples:
        raise FormatError(
            f"bundle has {bundle.n_samples} latents but the {split} split has "
            f"{data.n_samples} samples"
        )
    out = _out_dir(args, cfg)
    _log(f"diagnosing {bundle.n_samples} samples on split '{split}'")
    reports, table = conditioning_tables(
        bundle.params, bundle.latents,
        grid=data.shared_grid, targets=data.targets, coords=data.coords,
        split=split, sample_ids=bundle.sample_ids,
    )
    csv_path = out / f"diagnostics_{split}.csv"
    atomic_write_bytes(csv_path, reports_to_csv(reports).encode())
    json_path = out / f"diagnostics_{split}.json"
    atomic_write_bytes(
        json_path, (json.dumps(table.to_dict(), sort_keys=True, indent=2) + "\n").encode()
    )
    _log(f"wrote {csv_path} and {json_path} "
         f"(max kappa {table.max_kappa:.3e}, min sigma {table.min_sigma:.3e})")
    return 0


def _features(bundle: ModelBundle, representation: str) -> np.ndarray:
    if representation == "z":
        return bundle.latents
    return decode_weights(bundle.params, bundle.latents)


def cmd_classify(args) -> int:
    cfg = load_experiment_config(args.config)
    train_bundle = load_bundle(args.train_bundle)
    test_bundle = load_bundle(args.test_bundle)
    _require_fingerprint(train_bundle, cfg, args.force, "train bundle")
    _require_fingerprint(test_bundle, cfg, args.force, "test bundle")
    if not np.array_equal(train_bundle.params.v, test_bundle.params.v):
        raise FormatError("train and test bundles carry different generator parameters")
    if train_bundle.labels is None or test_bundle.labels is None:
        raise ConfigError("classification needs labeled bundles")
    out = _out_dir(args, cfg)
    rep = args.representation
    _log(f"extracting '{rep}' features")
    train_feats = _features(train_bundle, rep)
    test_feats = _features(test_bundle, rep)
    seeds = parse_seed_spec(args.seeds)
    accs = []
    for seed in seeds:
        model, _ = train_classifier(
            train_feats, train_bundle.labels, seed=seed,
            hidden=cfg.classifier_hidden, epochs=cfg.classifier_epochs,
            batch_size=cfg.classifier_batch, lr=cfg.classifier_lr,
        )
        acc = accuracy(model, test_feats, test_bundle.labels)
        accs.append(acc)
        _log(f"seed {seed}: test accuracy {acc * 100:.2f}%")
    mean = float(np.mean(accs))
    stderr = float(np.std(accs, ddof=1) / np.sqrt(len(accs))) if len(accs) > 1 else 0.0
    payload = {
        "dataset": cfg.dataset_kind,
        "representation": rep,
        "seeds": seeds,
        "accuracies": accs,
        "mean": mean,
        "stderr": stderr,
    }
    path = Path(args.report) if args.report else out / f"accuracy_{rep}.json"
    atomic_write_bytes(path, (json.dumps(payload, sort_keys=True, indent=2) + "\n").encode())
    _log(f"wrote {path} (mean {mean * 100:.2f}% +- {stderr * 100:.2f}%)")
    return 0


def cmd_pca(args) -> int:
    cfg = load_experiment_config(args.config)
    bundle = load_bundle(args.bundle)
    _require_fingerprint(bundle, cfg, args.force, "bundle")
    out = _out_dir(args, cfg)
    rep = args.representation
    feats = _features(bundle, rep)
    proj = pca_fit(feats, k=args.k)
    coords = pca_transform(proj, feats)
    lines = ["sample_id,label," + ",".join(f"pc{i + 1}" for i in range(args.k))]
    labels = bundle.labels if bundle.labels is not None else np.full(bundle.n_samples, -1)
    for sid, lab, row in zip(bundle.sample_ids, labels, coords):
        lines.append(f"{sid},{lab}," + ",".join(f"{x:.17g}" for x in row))
    path = Path(args.report) if args.report else out / f"pca_{rep}_k{args.k}.csv"
    atomic_write_bytes(path, ("\n".join(lines) + "\n").encode())
    ratios = ", ".join(f"{r:.4f}" for r in proj.explained_variance_ratio)
    _log(f"wrote {path} (explained variance ratios: {ratios})")
    return 0


def cmd_interp(args) -> int:
    cfg = load_experiment_config(args.config)
    bundle = load_bundle(args.bundle)
    _require_fingerprint(bundle, cfg, args.force, "bundle")
    out = _out_dir(args, cfg) / f"interp_{args.id_a}_{args.id_b}"
    out.mkdir(parents=True, exist_ok=True)
    is_image = cfg.dataset_kind in ("mnist", "fashion-mnist", "synthetic-blobs",
                                    "synthetic-rings")
    if is_image:
        from .data import make_grid

        grid = make_grid(cfg.image_size, cfg.image_size)
    else:
        # axis-aligned slice through the volume at z = 0
        s = np.linspace(-1, 1, 64)
        xx, yy = np.meshgrid(s, s, indexing="ij")
        grid = np.stack([xx.reshape(-1), yy.reshape(-1), np.zeros(64 * 64)], axis=1)
    recs = interpolate_latents(bundle, args.id_a, args.id_b, args.steps, grid)
    files = []
    for i, (alpha, rec) in enumerate(recs):
        if is_image:
            name = f"step{i:02d}_alpha{alpha:.4f}.pgm"
            write_pgm(out / name, rec.reshape(cfg.image_size, cfg.image_size))
        else:
            name = f"step{i:02d}_alpha{alpha:.4f}.csv"
            rows = ["x,y,z,udf"]
            for p, v in zip(grid, rec[:, 0]):
                rows.append(f"{p[0]:.17g},{p[1]:.17g},{p[2]:.17g},{v:.17g}")
            atomic_write_bytes(out / name, ("\n".join(rows) + "\n").encode())
        files.append({"file": name, "alpha": alpha})
    index = {"id_a": args.id_a, "id_b": args.id_b, "steps": args.steps, "files": files}
    atomic_write_bytes(out / "index.json",
                       (json.dumps(index, sort_keys=True, indent=2) + "\n").encode())
    _log(f"wrote {len(recs)} reconstructions under {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="hyperinr",
        description="Latent-conditioned implicit network training and diagnostics",
    )
    p.add_argument("--threads", type=int, default=1,
                   help="compute threads for the tensor core (default 1, reproducible)")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, bundle=False):
        sp.add_argument("--config", required=True, help="experiment config file")
        sp.add_argument("--out", default=None, help="output directory override")
        sp.add_argument("--force", action="store_true",
                        help="proceed on config fingerprint mismatch")
        if bundle:
            sp.add_argument("--bundle", required=True, help="trained bundle file")

    sp = sub.add_parser("train", help="jointly train the generator and latents")
    common(sp)
    sp.add_argument("--seed", default=None,
                    help="seed, list '1,2,3', or range '1..5' (default from config)")
    sp.set_defaults(fn=cmd_train)

    sp = sub.add_parser("infer", help="optimize latents for the test split, generator frozen")
    common(sp, bundle=True)
    sp.add_argument("--seed", default=None, help="seed, list, or range")
    sp.set_defaults(fn=cmd_infer)

    sp = sub.add_parser("diagnose", help="latent-gradient and Hessian conditioning reports")
    common(sp, bundle=True)
    sp.add_argument("--split", choices=("train", "test"), default=None,
                    help="dataset split (default: the bundle's own split)")
    sp.set_defaults(fn=cmd_diagnose)

    sp = sub.add_parser("classify", help="MLP classification over latents or weights")
    common(sp)
    sp.add_argument("--train-bundle", required=True)
    sp.add_argument("--test-bundle", required=True)
    sp.add_argument("--repr", dest="representation", choices=("z", "w"), default="z")
    sp.add_argument("--seeds", default="0", help="classifier seeds: '5', '1,2,3', or '1..5'")
    sp.add_argument("--report", default=None, help="output JSON path")
    sp.set_defaults(fn=cmd_classify)

    sp = sub.add_parser("pca", help="principal-component export for cluster plots")
    common(sp, bundle=True)
    sp.add_argument("--repr", dest="representation", choices=("z", "w"), default="z")
    sp.add_argument("--k", type=int, choices=(2, 3), default=2)
    sp.add_argument("--report", default=None, help="output CSV path")
    sp.set_defaults(fn=cmd_pca)

    sp = sub.add_parser("interp", help="decode along a latent-space segment")
    common(sp, bundle=True)
    sp.add_argument("--id-a", type=int, required=True)
    sp.add_argument("--id-b", type=int, required=True)
    sp.add_argument("--steps", type=int, default=5)
    sp.set_defaults(fn=cmd_interp)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    torch.set_num_threads(max(1, args.threads))
    try:
        return args.fn(args)
    except (ConfigError, FormatError, OSError) as exc:
        _log(f"error: {exc}")
        return 2
    except (NumericError, TrainingError) as exc:
        _log(f"error: {exc}")
        return 1


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
