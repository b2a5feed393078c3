"""Command-line surface: dataset generation, curriculum training, evaluation,
run comparison, and architecture/activation
ablation grids.

Exit codes are a stable scripting contract: 0 success, 2 usage error,
3 validation/contract error, 4 file-format or I/O error.

Option values resolve as: command-line flags > config file (--config, JSON
mirroring the RunConfig field names) > environment variables (FEATCL_<FIELD>)
> built-in defaults. Every run echoes its fully resolved configuration into
the output directory.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import sys
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from .data import (
    FeatureDataset,
    SequenceManifest,
    SyntheticSpec,
    generate_synthetic,
    load_manifest,
    make_manifest,
    read_csv_feature_file,
    read_feature_file,
    save_manifest,
    split_by_instance,
    write_feature_file,
)
from .errors import ContractError, FormatError, ShapeError, ValidationError
from .losses import LossMode
from .metrics import MetricsReport, evaluate, read_report, report_to_dict, write_report
from .model import load_model
from .nnmath import ActivationSpec
from .training import TrainConfig, run_curriculum

ENV_PREFIX = "FEATCL_"

MODE_NAMES = ("recall", "recall-var", "recall-reg", "recall-var-reg", "naive")
ARCH_NAMES = ("per-seq-head", "expand-last")
ACTIVATION_NAMES = ("relu", "siren")


@dataclass
class RunConfig:
    """Everything a training run needs; mirrored by config-file keys."""

    manifest: str = ""
    out: str = ""
    mode: str = "recall"
    seed: int = 0
    repeats: int = 1
    deterministic: bool = True
    epochs_per_sequence: int = 50
    batch_size: int = 64
    optimizer: str = "adam"
    learning_rate: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps_adam: float = 1e-8
    arch_mode: str = "per-seq-head"
    activation: str = "relu"
    omega_first: float = 30.0
    omega_hidden: float = 30.0
    hidden_width: int = 1024
    hidden_layer_count: int = 1
    variance_floor: float = 1e-6

    def validate(self) -> None:
        if self.mode not in MODE_NAMES:
            raise ValidationError(f"mode must be one of {MODE_NAMES}, got {self.mode!r}")
        if self.arch_mode not in ARCH_NAMES:
            raise ValidationError(f"arch must be one of {ARCH_NAMES}, got {self.arch_mode!r}")
        if self.activation not in ACTIVATION_NAMES:
            raise ValidationError(
                f"activation must be one of {ACTIVATION_NAMES}, got {self.activation!r}"
            )
        if self.repeats < 1:
            raise ValidationError("repeats must be >= 1")

    def train_config(self, seed: int | None = None) -> TrainConfig:
        return TrainConfig(
            mode=LossMode(self.mode),
            epochs_per_sequence=self.epochs_per_sequence,
            batch_size=self.batch_size,
            optimizer=self.optimizer,
            learning_rate=self.learning_rate,
            beta1=self.beta1,
            beta2=self.beta2,
            eps_adam=self.eps_adam,
            seed=self.seed if seed is None else seed,
            arch_mode=self.arch_mode,
            activation=ActivationSpec(self.activation, self.omega_first, self.omega_hidden),
            hidden_width=self.hidden_width,
            hidden_layer_count=self.hidden_layer_count,
            variance_floor=self.variance_floor,
        )


_FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _coerce(name: str, raw, where: str):
    kind = _FIELD_TYPES.get(name)
    if kind is None:
        raise ValidationError(f"unknown config field {name!r} in {where}")
    try:
        if kind == "bool":
            if isinstance(raw, bool):
                return raw
            if str(raw).lower() in ("1", "true", "yes", "on"):
                return True
            if str(raw).lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        return str(raw)
    except (TypeError, ValueError):
        raise ValidationError(f"bad value {raw!r} for {name} in {where}") from None


def resolve_run_config(args: argparse.Namespace) -> RunConfig:
    """flags > config file > FEATCL_* environment > defaults."""
    values: dict = {}
    for name in _FIELD_TYPES:
        env = os.environ.get(ENV_PREFIX + name.upper())
        if env is not None:
            values[name] = _coerce(name, env, f"${ENV_PREFIX}{name.upper()}")
    config_path = getattr(args, "config", None)
    if config_path:
        try:
            payload = json.loads(Path(config_path).read_text())
        except json.JSONDecodeError as exc:
            raise FormatError(f"{config_path}: invalid config JSON ({exc})") from None
        if not isinstance(payload, dict):
            raise FormatError(f"{config_path}: config must be a JSON object")
        for name, raw in payload.items():
            values[name] = _coerce(name, raw, str(config_path))
    for name in _FIELD_TYPES:
        flag = getattr(args, name, None)
        if flag is not None:
            values[name] = _coerce(name, flag, "command line")
    config = RunConfig(**values)
    config.validate()
    return config


def _manifest_sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _load_features(path) -> FeatureDataset:
    if str(path).endswith(".csv"):
        return read_csv_feature_file(path)
    return read_feature_file(path)


def _load_benchmark(manifest_path) -> tuple[SequenceManifest, FeatureDataset, FeatureDataset]:
    manifest = load_manifest(manifest_path)
    base = Path(manifest_path).parent
    train = _load_features(base / manifest.train_path)
    val = _load_features(base / manifest.val_path)
    return manifest, train, val


def cmd_gen(args: argparse.Namespace) -> int:
    spec = SyntheticSpec(
        categories=args.categories,
        instances_per_category=args.instances,
        samples_per_instance=args.samples,
        feature_dim=args.dim,
        category_spread=args.category_spread,
        instance_spread=args.instance_spread,
        noise_spread=args.noise_spread,
        seed=args.seed,
    )
    dataset = generate_synthetic(spec)
    train, val = split_by_instance(dataset, args.val_fraction, args.seed)
    manifest = make_manifest(dataset, args.layout, args.seed, "train.fcl", "val.fcl")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_feature_file(train, out / "train.fcl")
    write_feature_file(val, out / "val.fcl")
    save_manifest(manifest, out / "manifest.json")
    sizes = [len(c) for c in manifest.sequences]
    print(f"wrote {out / 'manifest.json'}: {len(manifest.sequences)} sequences, sizes {sizes}")
    print(f"train: {len(train)} examples, val: {len(val)} examples, dim {dataset.feature_dim}")
    return 0


def _single_run(config: RunConfig, seed: int, run_dir: Path,
                manifest: SequenceManifest, train: FeatureDataset, val: FeatureDataset,
                manifest_hash: str) -> MetricsReport:
    run_dir.mkdir(parents=True, exist_ok=True)
    ckpt_dir = run_dir / "checkpoints"
    ckpt_dir.mkdir(exist_ok=True)
    _, report = run_curriculum(manifest, train, val, config.train_config(seed), checkpoint_dir=ckpt_dir)
    report.manifest_sha256 = manifest_hash
    write_report(report, run_dir)
    echo = dict(report.config_echo)
    echo.update({"manifest": config.manifest, "out": config.out, "repeats": config.repeats,
                 "deterministic": config.deterministic, "manifest_sha256": manifest_hash})
    (run_dir / "resolved_config.json").write_text(json.dumps(echo, indent=2) + "\n")
    return report


def cmd_train(args: argparse.Namespace) -> int:
    config = resolve_run_config(args)
    if not config.manifest or not config.out:
        raise ValidationError("train requires --manifest and --out")
    manifest, train, val = _load_benchmark(config.manifest)
    manifest_hash = _manifest_sha256(config.manifest)
    out = Path(config.out)
    for i in range(config.repeats):
        seed = config.seed + i
        run_dir = out if config.repeats == 1 else out / f"seed_{seed}"
        report = _single_run(config, seed, run_dir, manifest, train, val, manifest_hash)
        final = report.final_accuracy()
        print(f"seed {seed}: final overall accuracy {final:.4f} "
              f"({config.mode}, {len(manifest.sequences)} sequences)")
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    model = load_model(args.model)
    dataset = _load_features(args.data)
    known = set(model.category_ids)
    sequences = [sorted(known)]
    if args.manifest:
        manifest = load_manifest(args.manifest)
        sequences = [cats for cats in manifest.sequences if set(cats) <= known]
        if set(c for cats in sequences for c in cats) != known:
            raise ValidationError("manifest sequences do not cover the model's categories")
    features = dataset.features.astype(np.float64)
    labels = dataset.category_ids.astype(np.int64)
    overall, per_origin = evaluate(model, features, labels, sequences)
    result = {"overall_accuracy": overall, "per_sequence_accuracy": per_origin}
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "eval.json").write_text(json.dumps(result, indent=2) + "\n")
    print(f"overall accuracy {overall:.4f} on {len(dataset)} examples")
    for k, acc in enumerate(per_origin):
        print(f"  sequence {k}: {acc:.4f}")
    return 0


def _collect_runs(run_dir: Path) -> list[MetricsReport]:
    if (run_dir / "report.json").exists():
        return [read_report(run_dir)]
    seed_dirs = sorted(run_dir.glob("seed_*"))
    reports = [read_report(d) for d in seed_dirs if (d / "report.json").exists()]
    if not reports:
        raise ValidationError(f"{run_dir}: no report.json or seed_*/report.json found")
    return reports


def cmd_compare(args: argparse.Namespace) -> int:
    runs = [(Path(d).name or str(d), _collect_runs(Path(d))) for d in args.runs]
    hashes = {r.manifest_sha256 for _, reports in runs for r in reports}
    if len(hashes) > 1:
        raise ValidationError("runs were produced from different manifests; refusing to compare")
    n_seq = {r.num_sequences() for _, reports in runs for r in reports}
    if len(n_seq) != 1:
        raise ValidationError("runs disagree on sequence count")
    n = n_seq.pop()

    header = ["sequence"]
    for name, _ in runs:
        header += [f"{name}_mean", f"{name}_std"]
    rows = []
    for s in range(n):
        row: list = [s]
        for _, reports in runs:
            acc = np.array([r.overall_accuracy[s] for r in reports])
            row += [repr(float(acc.mean())), repr(float(acc.std()))]  # population std
        rows.append(row)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "comparison.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)

    print("  ".join(f"{h:>24}" for h in header))
    for s in range(n):
        cells = [f"{s:>24}"]
        for _, reports in runs:
            acc = np.array([r.overall_accuracy[s] for r in reports])
            cells.append(f"{acc.mean():>15.4f} ±{acc.std():.4f}")
        print("  ".join(cells))
    return 0


def cmd_ablate(args: argparse.Namespace) -> int:
    config = resolve_run_config(args)
    if not config.manifest or not config.out:
        raise ValidationError("ablate requires --manifest and --out")
    modes = [m.strip() for m in args.modes.split(",")] if args.modes else [config.mode]
    for m in modes:
        if m not in MODE_NAMES:
            raise ValidationError(f"unknown mode {m!r} in --modes")
    manifest, train, val = _load_benchmark(config.manifest)
    seeds = [config.seed + i for i in range(config.repeats)]

    out = Path(config.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for arch in ARCH_NAMES:
        for activation in ACTIVATION_NAMES:
            for mode in modes:
                finals = []
                for seed in seeds:
                    cell = RunConfig(**{**_as_dict(config), "arch_mode": arch,
                                        "activation": activation, "mode": mode})
                    _, report = run_curriculum(manifest, train, val, cell.train_config(seed))
                    finals.append(report.final_accuracy())
                arr = np.array(finals)
                rows.append([arch, activation, mode, ";".join(str(s) for s in seeds),
                             repr(float(arr.mean())), repr(float(arr.std()))])
                print(f"{arch:>14} {activation:>6} {mode:>14}: "
                      f"{arr.mean():.4f} ±{arr.std():.4f} over seeds {seeds}")
    with open(out / "ablation.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["strategy", "activation", "mode", "seeds",
                         "final_accuracy_mean", "final_accuracy_std"])
        writer.writerows(rows)
    return 0


def _as_dict(config: RunConfig) -> dict:
    return {f.name: getattr(config, f.name) for f in fields(RunConfig)}


def _add_run_options(p: argparse.ArgumentParser) -> None:
    p.add_argument("--manifest", help="path to manifest.json")
    p.add_argument("--out", help="output directory (all writes stay inside)")
    p.add_argument("--config", help="JSON config file mirroring RunConfig fields")
    p.add_argument("--mode", help="recall | recall-var | recall-reg | recall-var-reg | naive")
    p.add_argument("--seed", type=int, help="master seed (init + shuffling)")
    p.add_argument("--repeats", type=int, help="number of consecutive seeds to run")
    p.add_argument("--epochs", dest="epochs_per_sequence", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--optimizer", help="adam | sgd")
    p.add_argument("--lr", dest="learning_rate", type=float)
    p.add_argument("--beta1", type=float)
    p.add_argument("--beta2", type=float)
    p.add_argument("--eps-adam", dest="eps_adam", type=float)
    p.add_argument("--arch", dest="arch_mode", help="per-seq-head | expand-last")
    p.add_argument("--activation", help="relu | siren")
    p.add_argument("--omega-first", dest="omega_first", type=float)
    p.add_argument("--omega-hidden", dest="omega_hidden", type=float)
    p.add_argument("--hidden-width", dest="hidden_width", type=int)
    p.add_argument("--hidden-layers", dest="hidden_layer_count", type=int)
    p.add_argument("--variance-floor", dest="variance_floor", type=float)
    p.add_argument("--deterministic", action=argparse.BooleanOptionalAction, default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="featcl",
        description="Rehearsal-free class-incremental training on feature vectors",
        epilog="Options resolve as flags > --config file > FEATCL_<FIELD> env vars > defaults. "
               "Exit codes: 0 ok, 2 usage, 3 validation, 4 format/I/O.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a synthetic benchmark")
    p.add_argument("--categories", type=int, required=True)
    p.add_argument("--dim", type=int, required=True)
    p.add_argument("--instances", type=int, required=True, help="instances per category")
    p.add_argument("--samples", type=int, required=True, help="samples per instance")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--layout", default="equal:2", help="equal:K | hows-standard | hows-long")
    p.add_argument("--category-spread", type=float, default=10.0)
    p.add_argument("--instance-spread", type=float, default=3.0)
    p.add_argument("--noise-spread", type=float, default=1.0)
    p.add_argument("--val-fraction", type=float, default=0.1)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("train", help="train a full curriculum")
    _add_run_options(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a feature file")
    p.add_argument("--model", required=True, help="checkpoint path")
    p.add_argument("--data", required=True, help="feature file (.fcl or .csv)")
    p.add_argument("--manifest", help="optional manifest for per-sequence rows")
    p.add_argument("--out", help="directory for eval.json")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("compare", help="tabulate runs side by side")
    p.add_argument("runs", nargs="+", help="run directories (single or multi-seed)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("ablate", help="architecture x activation x mode grid")
    _add_run_options(p)
    p.add_argument("--modes", help="comma-separated modes (default: the single --mode)")
    p.set_defaults(func=cmd_ablate)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValidationError, ContractError, ShapeError) as exc:
        print(f"featcl: {exc}", file=sys.stderr)
        return 3
    except (FormatError, OSError) as exc:
        print(f"featcl: {exc}", file=sys.stderr)
        return 4


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
