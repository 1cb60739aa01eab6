"""Command-line entry point: data synthesis, training, evaluation, serving.

One binary, four subcommands. Every option can come from a key=value config
file (``--config``), with command-line flags winning over file values and
file values winning over defaults. Runs that produce outputs write their
fully resolved configuration next to those outputs as ``resolved.cfg``, and
any run is reproducible from that file alone via ``--config``.

Exit codes: 0 success, 1 user error (bad flags, bad paths, bad config),
2 internal error (unexpected failure, training divergence).
"""

from __future__ import annotations

import argparse
import sys
import traceback
from pathlib import Path

__all__ = ["main", "entrypoint", "UserError", "parse_config_file"]


class UserError(Exception):
    """Operator mistake: wrong flags, missing files, malformed config."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # exit 1 instead of argparse's 2
        raise UserError(message)


def _parse_bool(text: str) -> bool:
    lowered = text.strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def parse_config_file(path) -> dict[str, str]:
    """Read a key = value file; '#' starts a comment, blank lines ignored."""
    path = Path(path)
    if not path.is_file():
        raise UserError(f"config file not found: {path}")
    values: dict[str, str] = {}
    for lineno, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UserError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
        key, value = line.split("=", 1)
        values[key.strip()] = value.strip()
    return values


def _write_resolved(out_dir: Path, resolved: dict) -> Path:
    lines = []
    for key in sorted(resolved):
        value = resolved[key]
        if isinstance(value, bool):
            value = "true" if value else "false"
        lines.append(f"{key} = {value}")
    path = out_dir / "resolved.cfg"
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def _resolve(schema: dict, args: argparse.Namespace, config_path: str | None) -> dict:
    """defaults < config file < explicit flags; unknown file keys rejected."""
    resolved = {key: default for key, (_, default) in schema.items()}
    if config_path:
        file_values = parse_config_file(config_path)
        unknown = set(file_values) - set(schema)
        if unknown:
            raise UserError(
                f"unknown config keys: {', '.join(sorted(unknown))} "
                f"(valid: {', '.join(sorted(schema))})"
            )
        for key, text in file_values.items():
            parser_fn, _ = schema[key]
            try:
                resolved[key] = parser_fn(text)
            except ValueError as e:
                raise UserError(f"config key {key!r}: {e}") from e
    for key in schema:
        flag_value = getattr(args, key, None)
        if flag_value is not None:
            resolved[key] = flag_value
    missing = [k for k, v in resolved.items() if v is None]
    if missing:
        raise UserError(f"missing required options: {', '.join(sorted(missing))}")
    return resolved


def _str(text: str) -> str:
    return text


# (parser, default); None default means required
_SYNTH_SCHEMA = {
    "k": (int, 4),
    "items_train": (int, 10),
    "items_val": (int, 2),
    "items_test": (int, 2),
    "duration_s": (float, 4.0),
    "sample_rate": (int, 8000),
    "bit_depth": (int, 32),
    "seed": (int, 0),
    "out": (_str, None),
    "force": (_parse_bool, False),
}

_TRAIN_SCHEMA = {
    "variant": (_str, "model1"),
    "psi": (float, 1.0),
    "lam": (float, 1.0),
    "lr": (float, 1e-3),
    "batch_size": (int, 8),
    "segment_s": (float, 1.0),
    "max_epochs": (int, 200),
    "patience": (int, 10),
    "gain_low_db": (float, -12.0),
    "gain_high_db": (float, 12.0),
    "seed": (int, 0),
    "data": (_str, None),
    "out": (_str, None),
    # architecture
    "n_filters": (int, 64),
    "kernel_len": (int, 16),
    "stride": (int, 8),
    "bottleneck": (int, 32),
    "conv_channels": (int, 64),
    "conv_kernel": (int, 3),
    "blocks": (int, 4),
    "repeats": (int, 2),
}

_EVAL_SCHEMA = {
    "checkpoint": (_str, None),
    "data": (_str, None),
    "split": (_str, "test"),
    "segment_s": (float, 1.0),
    "figures": (_parse_bool, True),
    "out": (_str, None),
}

_SERVE_SCHEMA = {
    "checkpoint": (_str, None),
    "host": (_str, "127.0.0.1"),
    "port": (int, 8080),
    "max_upload_s": (float, 60.0),
}


def _add_schema_flags(parser: _Parser, schema: dict, flag_names: dict | None = None):
    flag_names = flag_names or {}
    for key, (parser_fn, default) in schema.items():
        flag = flag_names.get(key, "--" + key.replace("_", "-"))
        if parser_fn is _parse_bool:
            parser.add_argument(
                flag, dest=key, action="store_const", const=True, default=None,
                help=f"(default: {default})",
            )
        else:
            parser.add_argument(
                flag, dest=key, type=parser_fn, default=None,
                help=f"(default: {'required' if default is None else default})",
            )


def _build_parser() -> _Parser:
    parser = _Parser(prog="remixer", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_synth = sub.add_parser("synth-data", help="generate a synthetic stem dataset")
    p_synth.add_argument("--config", default=None)
    _add_schema_flags(p_synth, _SYNTH_SCHEMA)

    p_train = sub.add_parser("train", help="train a separation/remix model")
    p_train.add_argument("--config", default=None)
    _add_schema_flags(p_train, _TRAIN_SCHEMA, flag_names={"lam": "--lambda"})

    p_eval = sub.add_parser("eval", help="run the gain-sweep evaluation protocol")
    p_eval.add_argument("--config", default=None)
    _add_schema_flags(p_eval, _EVAL_SCHEMA)

    p_serve = sub.add_parser("serve", help="run the HTTP inference service")
    p_serve.add_argument("--config", default=None)
    _add_schema_flags(p_serve, _SERVE_SCHEMA)

    return parser


def _prepare_out_dir(out: str, force: bool) -> Path:
    out_dir = Path(out)
    if out_dir.exists() and any(out_dir.iterdir()) and not force:
        raise UserError(f"output directory {out_dir} is not empty (use --force)")
    out_dir.mkdir(parents=True, exist_ok=True)
    return out_dir


def _cmd_synth_data(args) -> int:
    from .datagen import build_dataset

    resolved = _resolve(_SYNTH_SCHEMA, args, args.config)
    out_dir = _prepare_out_dir(resolved["out"], resolved["force"])
    manifest = build_dataset(
        k=resolved["k"],
        n_items={
            "train": resolved["items_train"],
            "val": resolved["items_val"],
            "test": resolved["items_test"],
        },
        duration_s=resolved["duration_s"],
        seed=resolved["seed"],
        out_dir=out_dir,
        sample_rate=resolved["sample_rate"],
        bit_depth=resolved["bit_depth"],
    )
    _write_resolved(out_dir, resolved)
    print(f"wrote {len(manifest.items)} tracks and manifest to {out_dir}")
    return 0


def _load_split_segments(manifest, split: str, segment_s: float, active_only: bool):
    from .audio import is_active_segment
    from .datagen import load_sources, segment_sources

    segments = []
    for item in manifest.split_items(split):
        sources = load_sources(manifest, item)
        for seg in segment_sources(sources, segment_s, segment_s):
            if not active_only or is_active_segment(seg):
                segments.append(seg)
    return segments


def _cmd_train(args) -> int:
    from .datagen import load_manifest
    from .model import Checkpoint, ModelConfig, save_checkpoint
    from .training import LossWeights, TrainConfig, train, write_history_csv

    resolved = _resolve(_TRAIN_SCHEMA, args, args.config)
    if resolved["variant"] == "baseline" and getattr(args, "psi", None) is not None:
        print("warning: --psi has no effect on the baseline variant", file=sys.stderr)

    manifest_path = Path(resolved["data"])
    if not manifest_path.exists():
        raise UserError(f"manifest not found: {manifest_path}")
    manifest = load_manifest(manifest_path)

    out_dir = Path(resolved["out"])
    out_dir.mkdir(parents=True, exist_ok=True)

    model_cfg = ModelConfig(
        k=manifest.k,
        n_filters=resolved["n_filters"],
        kernel_len=resolved["kernel_len"],
        stride=resolved["stride"],
        bottleneck=resolved["bottleneck"],
        conv_channels=resolved["conv_channels"],
        conv_kernel=resolved["conv_kernel"],
        blocks=resolved["blocks"],
        repeats=resolved["repeats"],
        sample_rate=manifest.sample_rate,
    )
    train_cfg = TrainConfig(
        variant=resolved["variant"],
        weights=LossWeights(psi=resolved["psi"], lam=resolved["lam"]),
        learning_rate=resolved["lr"],
        batch_size=resolved["batch_size"],
        segment_s=resolved["segment_s"],
        max_epochs=resolved["max_epochs"],
        patience=resolved["patience"],
        gain_low_db=resolved["gain_low_db"],
        gain_high_db=resolved["gain_high_db"],
        seed=resolved["seed"],
    )

    train_set = _load_split_segments(manifest, "train", resolved["segment_s"], True)
    val_set = _load_split_segments(manifest, "val", resolved["segment_s"], True)
    if not train_set:
        raise UserError("no active training segments in the manifest's train split")
    if not val_set:
        raise UserError("no active validation segments in the manifest's val split")

    result = train(train_cfg, model_cfg, train_set, val_set)

    checkpoint_path = out_dir / "model.ckpt.json"
    save_checkpoint(
        checkpoint_path,
        Checkpoint(
            params=result.params,
            variant=result.variant,
            metadata={
                "seed": resolved["seed"],
                "psi": resolved["psi"],
                "lambda": resolved["lam"],
                "best_epoch": result.best_epoch,
                "best_val_loss": result.best_val_loss,
                "loss_curve": [
                    [h.epoch, h.train_loss, h.val_loss] for h in result.history
                ],
                "labels": list(manifest.labels),
                "diverged": result.diverged,
            },
        ),
    )
    write_history_csv(out_dir / "history.csv", result.history)
    _write_resolved(out_dir, resolved)
    if result.diverged:
        print(
            f"training diverged; last good checkpoint written to {checkpoint_path}",
            file=sys.stderr,
        )
        return 2
    print(
        f"trained {result.variant} for {len(result.history)} epochs "
        f"(best epoch {result.best_epoch}, val loss {result.best_val_loss:.3f}); "
        f"checkpoint at {checkpoint_path}"
    )
    return 0


def _cmd_eval(args) -> int:
    import json

    from .datagen import load_manifest
    from .evaluation import evaluate, quartile_summary, report, separation_scores
    from .model import load_checkpoint

    resolved = _resolve(_EVAL_SCHEMA, args, args.config)
    checkpoint_path = Path(resolved["checkpoint"])
    if not checkpoint_path.is_file():
        raise UserError(f"checkpoint not found: {checkpoint_path}")
    manifest_path = Path(resolved["data"])
    if not manifest_path.exists():
        raise UserError(f"manifest not found: {manifest_path}")
    if resolved["split"] not in ("train", "val", "test"):
        raise UserError(f"split must be train/val/test, got {resolved['split']!r}")

    checkpoint = load_checkpoint(checkpoint_path)
    manifest = load_manifest(manifest_path)
    records = evaluate(
        checkpoint, manifest, resolved["split"], segment_s=resolved["segment_s"]
    )
    if not records:
        raise UserError("evaluation produced no records (empty split?)")
    out_dir = Path(resolved["out"])
    out_dir.mkdir(parents=True, exist_ok=True)
    report(records, out_dir, labels=manifest.labels, render_figures=resolved["figures"])

    scores = separation_scores(
        checkpoint, manifest, resolved["split"], segment_s=resolved["segment_s"]
    )
    separation = {
        label: {metric: quartile_summary(values) for metric, values in by_metric.items()}
        for label, by_metric in scores.items()
    }
    with open(out_dir / "separation.json", "w", encoding="utf-8") as f:
        json.dump(separation, f, indent=2, sort_keys=True)
        f.write("\n")

    _write_resolved(out_dir, resolved)
    print(f"wrote {len(records)} records, summary, curves to {out_dir}")
    return 0


def _cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app

    resolved = _resolve(_SERVE_SCHEMA, args, args.config)
    checkpoint_path = Path(resolved["checkpoint"])
    if not checkpoint_path.is_file():
        raise UserError(f"checkpoint not found: {checkpoint_path}")
    app = create_app(checkpoint_path, max_upload_s=resolved["max_upload_s"])
    uvicorn.run(app, host=resolved["host"], port=resolved["port"], log_level="info")
    return 0


_COMMANDS = {
    "synth-data": _cmd_synth_data,
    "train": _cmd_train,
    "eval": _cmd_eval,
    "serve": _cmd_serve,
}


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        return _COMMANDS[args.command](args)
    except UserError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except KeyboardInterrupt:
        print("interrupted", file=sys.stderr)
        return 130
    except Exception:
        traceback.print_exc()
        return 2


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
