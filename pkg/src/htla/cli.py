"""Command-line interface: gen-data, train, eval, compare.

Configuration precedence is flags > HTLA_SEED (seed only) > config file >
preset > defaults. Config files are flat key=value text with '#' comments;
every key matches the same-named flag with dashes replaced by underscores.

Exit codes: 0 success, 1 runtime failure, 2 configuration error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import __version__
from .data import (
    SyntheticSpec,
    generate_synthetic,
    label_frequency,
    load_jsonl,
    save_jsonl,
    spec_manifest,
)
from .evaluation import (
    f1_scores,
    level_breakdown,
    paired_one_sided_ttest,
    path_breakdown,
    prevalence_buckets,
)
from .hierarchy import load_taxonomy
from .model import HTLAModel, TrainConfig, encode_samples, fit
from .numerics import load_checkpoint, restore_parameters, save_checkpoint
from .text_encoder import build_vocab, load_vocab, save_vocab


class ConfigError(ValueError):
    """Invalid or missing configuration; maps to exit code 2."""


PRESETS = {
    "desk": {},
    "paper": {
        "d_h": 768,
        "n_text_heads": 12,
        "n_graph_heads": 12,
        "lr": 1e-5,
        "batch_size": 10,
    },
}

_BOOL_KEYS = {"tla_enabled", "use_name_embedding", "use_node_embedding", "use_enhancer"}


def _parse_config_file(path: Path) -> dict[str, str]:
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    out: dict[str, str] = {}
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}: line {lineno}: expected key=value")
        key, value = (part.strip() for part in line.split("=", 1))
        out[key] = value
    return out


def _coerce(key: str, value: str):
    if key in _BOOL_KEYS:
        if value.lower() in ("1", "true", "yes", "on"):
            return True
        if value.lower() in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"field {key!r}: expected a boolean, got {value!r}")
    for f in fields(TrainConfig):
        if f.name == key:
            try:
                return type(f.default)(value)
            except ValueError as e:
                raise ConfigError(f"field {key!r}: {e}") from e
    return value


def build_train_config(args: argparse.Namespace) -> tuple[TrainConfig, str]:
    """Merge defaults, preset, config file, HTLA_SEED, and flags."""
    values: dict = {}
    preset = getattr(args, "preset", None) or "desk"
    if preset not in PRESETS:
        raise ConfigError(f"field 'preset': unknown preset {preset!r}")
    values.update(PRESETS[preset])
    if getattr(args, "config", None):
        file_values = _parse_config_file(Path(args.config))
        if "preset" in file_values:
            preset = file_values.pop("preset")
            if preset not in PRESETS:
                raise ConfigError(f"field 'preset': unknown preset {preset!r}")
            merged = dict(PRESETS[preset])
            merged.update(values)
            values = merged
        cfg_fields = {f.name for f in fields(TrainConfig)}
        for key, raw in file_values.items():
            if key in cfg_fields:
                values[key] = _coerce(key, raw)
            else:
                setattr(args, key, getattr(args, key, None) or raw)
    env_seed = os.environ.get("HTLA_SEED")
    if env_seed is not None:
        try:
            values["seed"] = int(env_seed)
        except ValueError as e:
            raise ConfigError(f"field 'seed': HTLA_SEED must be an integer") from e
    for f in fields(TrainConfig):
        flag_value = getattr(args, f.name, None)
        if flag_value is not None:
            values[f.name] = flag_value
    try:
        return TrainConfig(**values), preset
    except (ValueError, TypeError) as e:
        raise ConfigError(str(e)) from e


def _require_path(args: argparse.Namespace, name: str) -> Path:
    value = getattr(args, name, None)
    if not value:
        raise ConfigError(f"field {name!r}: required path is missing")
    path = Path(value)
    if not path.exists():
        raise ConfigError(f"field {name!r}: path does not exist: {path}")
    return path


def cmd_gen_data(args: argparse.Namespace) -> int:
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    try:
        spec = SyntheticSpec(
            depth=args.depth,
            branching=args.branch,
            keywords_per_label=args.keywords,
            noise_rate=args.noise,
            samples_per_leaf=args.samples_per_leaf,
            multipath_prob=args.multipath,
            tokens_per_sample=args.tokens,
            seed=args.seed,
        )
    except ValueError as e:
        raise ConfigError(str(e)) from e
    tax_text, train, val, test = generate_synthetic(spec)
    (out_dir / "taxonomy.txt").write_text(tax_text, encoding="utf-8")
    save_jsonl(out_dir / "train.jsonl", train)
    save_jsonl(out_dir / "val.jsonl", val)
    save_jsonl(out_dir / "test.jsonl", test)
    manifest = spec_manifest(spec)
    manifest["generated_at"] = time.strftime("%Y-%m-%dT%H:%M:%S")
    manifest["counts"] = {"train": len(train), "val": len(val), "test": len(test)}
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    print(f"wrote taxonomy + 3 splits to {out_dir}")
    return 0


def cmd_train(args: argparse.Namespace) -> int:
    cfg, preset = build_train_config(args)
    tax_path = _require_path(args, "taxonomy")
    train_path = _require_path(args, "train_data")
    val_path = _require_path(args, "val_data")
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    t0 = time.monotonic()
    tax = load_taxonomy(tax_path)
    train_samples = load_jsonl(train_path, tax)
    val_samples = load_jsonl(val_path, tax)
    vocab = build_vocab(
        (s.text for s in train_samples), min_freq=cfg.min_freq, max_vocab=cfg.max_vocab
    )
    model = HTLAModel(cfg, vocab, tax)
    train_data = encode_samples(vocab, train_samples, cfg.max_len, tax.num_labels)
    val_data = encode_samples(vocab, val_samples, cfg.max_len, tax.num_labels)
    result = fit(model, train_data, val_data, cfg)

    save_checkpoint(out_dir / "checkpoint.bin", model.parameters())
    save_vocab(out_dir / "vocab.txt", vocab)
    (out_dir / "config.json").write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")
    with open(out_dir / "history.jsonl", "w", encoding="utf-8") as f:
        for rec in result.history:
            # wall time stays out of the history file so identical seeds
            # produce identical bytes; elapsed time lives in the manifest
            row = {k: v for k, v in rec.items() if k != "seconds"}
            f.write(json.dumps(row, sort_keys=True) + "\n")
    summary = {
        "preset": preset,
        "seed": cfg.seed,
        "tla_enabled": cfg.tla_enabled,
        "use_name_embedding": cfg.use_name_embedding,
        "use_node_embedding": cfg.use_node_embedding,
        "use_enhancer": cfg.use_enhancer,
        "best_epoch": result.best_epoch,
        "epochs_run": len(result.history),
        "stopped_early": result.stopped_early,
        "val_micro_f1": result.history[result.best_epoch - 1]["val_micro_f1"],
        "val_macro_f1": result.best_macro_f1,
    }
    (out_dir / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    (out_dir / "manifest.json").write_text(
        json.dumps(
            {
                "finished_at": time.strftime("%Y-%m-%dT%H:%M:%S"),
                "elapsed_seconds": time.monotonic() - t0,
            },
            indent=2,
            sort_keys=True,
        )
        + "\n"
    )
    print(
        f"trained {len(result.history)} epochs; best epoch {result.best_epoch} "
        f"val MaF1 {result.best_macro_f1:.4f} -> {out_dir}"
    )
    return 0


def _load_run(run_dir: Path, tax):
    cfg_path = run_dir / "config.json"
    if not cfg_path.exists():
        raise ConfigError(f"field 'run': no config.json in {run_dir}")
    cfg = TrainConfig(**json.loads(cfg_path.read_text()))
    vocab = load_vocab(run_dir / "vocab.txt")
    model = HTLAModel(cfg, vocab, tax)
    restore_parameters(model.parameters(), load_checkpoint(run_dir / "checkpoint.bin"))
    return model, cfg, vocab


def _write_csv(path: Path, header: list[str], rows: list[list]) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write(",".join(header) + "\n")
        for row in rows:
            f.write(",".join(str(v) for v in row) + "\n")


def cmd_eval(args: argparse.Namespace) -> int:
    run_dir = _require_path(args, "run")
    tax = load_taxonomy(_require_path(args, "taxonomy"))
    data_path = _require_path(args, "data")
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    model, cfg, vocab = _load_run(run_dir, tax)
    samples = load_jsonl(data_path, tax)
    ids, mask, Y = encode_samples(vocab, samples, cfg.max_len, tax.num_labels)
    out = model.predict(ids, mask)
    Ynp = Y.numpy()
    report = f1_scores(Ynp, out.binary)

    if getattr(args, "train_data", None):
        freq_samples = load_jsonl(Path(args.train_data), tax)
    else:
        freq_samples = samples
    freq = label_frequency(freq_samples, tax)
    report.prevalence = prevalence_buckets(freq, Ynp, out.binary)
    report.levels = level_breakdown(tax, Ynp, out.binary)
    report.paths = path_breakdown(tax, Ynp, out.binary)

    payload = report.to_dict()
    payload["seed"] = cfg.seed
    payload["num_samples"] = len(samples)
    (out_dir / "report.json").write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")

    lines = [
        f"samples        {len(samples)}",
        f"micro_f1       {report.micro_f1:.4f}",
        f"macro_f1       {report.macro_f1:.4f}",
        "",
        "prevalence     " + "  ".join(f"{k}={v:.4f}" for k, v in report.prevalence.items()),
        "levels         " + "  ".join(f"L{k}={v['macro_f1']:.4f}" for k, v in report.levels.items()),
        "paths          " + "  ".join(f"{k}={v:.4f}" for k, v in report.paths.items()),
    ]
    (out_dir / "report.txt").write_text("\n".join(lines) + "\n")

    _write_csv(out_dir / "prevalence.csv", ["group", "macro_f1"],
               [[k, f"{v:.6f}"] for k, v in report.prevalence.items()])
    _write_csv(out_dir / "level.csv", ["level", "micro_f1", "macro_f1"],
               [[k, f"{v['micro_f1']:.6f}", f"{v['macro_f1']:.6f}"] for k, v in report.levels.items()])
    _write_csv(out_dir / "path.csv", ["path_count", "macro_f1"],
               [[k, f"{v:.6f}"] for k, v in report.paths.items()])
    print(f"MiF1 {report.micro_f1:.4f}  MaF1 {report.macro_f1:.4f} -> {out_dir}")
    return 0


def _load_scores(paths: list[str]) -> dict[int, tuple[float, float]]:
    """Map seed -> (micro, macro) from eval reports or train summaries."""
    out = {}
    for p in paths:
        obj = json.loads(Path(p).read_text())
        if "micro_f1" in obj:
            mi, ma = obj["micro_f1"], obj["macro_f1"]
        elif "val_micro_f1" in obj:
            mi, ma = obj["val_micro_f1"], obj["val_macro_f1"]
        else:
            raise ConfigError(f"field 'scores': no F1 fields in {p}")
        if "seed" not in obj:
            raise ConfigError(f"field 'scores': no seed recorded in {p}")
        out[int(obj["seed"])] = (float(mi), float(ma))
    return out


def cmd_compare(args: argparse.Namespace) -> int:
    a = _load_scores(args.a)
    b = _load_scores(args.b)
    if sorted(a) != sorted(b):
        raise ConfigError(
            f"field 'scores': unpaired seeds (a: {sorted(a)}, b: {sorted(b)})"
        )
    seeds = sorted(a)
    if len(seeds) < 2:
        raise ConfigError("field 'scores': need at least 2 paired runs")
    mi_a = [a[s][0] for s in seeds]
    mi_b = [b[s][0] for s in seeds]
    ma_a = [a[s][1] for s in seeds]
    ma_b = [b[s][1] for s in seeds]
    result = {
        "n": len(seeds),
        "seeds": seeds,
        "micro_f1": {
            "mean_a": float(np.mean(mi_a)),
            "mean_b": float(np.mean(mi_b)),
            "p_value": paired_one_sided_ttest(mi_a, mi_b),
        },
        "macro_f1": {
            "mean_a": float(np.mean(ma_a)),
            "mean_b": float(np.mean(ma_b)),
            "p_value": paired_one_sided_ttest(ma_a, ma_b),
        },
    }
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "comparison.json").write_text(json.dumps(result, indent=2, sort_keys=True) + "\n")
    table = [
        f"{'metric':<10} {'mean_a':>8} {'mean_b':>8} {'p_value':>10}",
        f"{'micro_f1':<10} {result['micro_f1']['mean_a']:>8.4f} "
        f"{result['micro_f1']['mean_b']:>8.4f} {result['micro_f1']['p_value']:>10.3g}",
        f"{'macro_f1':<10} {result['macro_f1']['mean_a']:>8.4f} "
        f"{result['macro_f1']['mean_b']:>8.4f} {result['macro_f1']['p_value']:>10.3g}",
    ]
    (out_dir / "comparison.txt").write_text("\n".join(table) + "\n")
    print("\n".join(table))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="htla", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="generate a seeded synthetic dataset")
    g.add_argument("--out", required=True)
    g.add_argument("--depth", type=int, default=3)
    g.add_argument("--branch", type=int, default=3)
    g.add_argument("--keywords", type=int, default=4)
    g.add_argument("--noise", type=float, default=0.2)
    g.add_argument("--samples-per-leaf", type=int, default=40)
    g.add_argument("--multipath", type=float, default=0.3)
    g.add_argument("--tokens", type=int, default=32)
    g.add_argument("--seed", type=int, default=0)
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="train a model and save the best checkpoint")
    t.add_argument("--config")
    t.add_argument("--preset", choices=sorted(PRESETS))
    t.add_argument("--taxonomy")
    t.add_argument("--train", dest="train_data")
    t.add_argument("--val", dest="val_data")
    t.add_argument("--out", required=True)
    for f in fields(TrainConfig):
        if f.name in _BOOL_KEYS:
            continue
        flag = "--" + f.name.replace("_", "-")
        t.add_argument(flag, type=type(f.default), default=None)
    t.add_argument("--no-tla", dest="tla_enabled", action="store_const", const=False, default=None)
    t.add_argument("--no-embed-name", dest="use_name_embedding",
                   action="store_const", const=False, default=None)
    t.add_argument("--no-embed-node", dest="use_node_embedding",
                   action="store_const", const=False, default=None)
    t.add_argument("--no-label-enhancer", dest="use_enhancer",
                   action="store_const", const=False, default=None)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint on a split")
    e.add_argument("--run", required=True, help="training output directory")
    e.add_argument("--taxonomy", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--train", dest="train_data", help="split used for prevalence frequencies")
    e.add_argument("--out", required=True)
    e.set_defaults(func=cmd_eval)

    c = sub.add_parser("compare", help="paired one-sided t-test between two variants")
    c.add_argument("--a", nargs="+", required=True, help="variant A report/summary JSON files")
    c.add_argument("--b", nargs="+", required=True, help="variant B report/summary JSON files")
    c.add_argument("--out", required=True)
    c.set_defaults(func=cmd_compare)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"configuration error: {e}", file=sys.stderr)
        return 2
    except Exception as e:  # noqa: BLE001 - single CLI failure boundary
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
