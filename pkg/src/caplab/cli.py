"""Command-line entry point wiring the whole pipeline together.

Subcommands: synth, analyze-loss, pretrain, finetune, eval, infer,
ablate, report. Every hyperparameter has a documented flag; the same
keys can come from a plain ``key = value`` config file given with
``--config``, with precedence CLI flag > config file > default. Each
run writes an ``effective-config.txt`` beside its outputs. Exit codes:
0 success, 1 runtime failure (one ``error:<category>: ...`` line on
stderr), 2 usage.
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import imaging
from .errors import CaplabError, IngestionError, InvalidConfigError
from .jpeg import (
    DarkenParams,
    binned_loss_stats,
    generate_procedural_images,
    jpeg_roundtrip,
    load_manifest,
    loss_map,
    synthesize_dataset,
)
from .model import ModelConfig
from .training import (
    TrainConfig,
    evaluate,
    finetune,
    load_checkpoint,
    pretrain,
    run_model_on_image,
    save_checkpoint,
    write_history_csv,
)

ENV_DATA_DIR = "CAPLAB_DATA_DIR"

IMAGE_EXTS = {".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff"}

## Option schemas: name -> (type, default). These drive config-file
## parsing, CLI merge order, and the effective-config echo.
MODEL_SCHEMA = {
    "base_channels": (int, 16),
    "num_downsamples": (int, 3),
    "num_bgvit_blocks": (int, 4),
    "num_heads": (int, 4),
    "mlp_ratio": (float, 2.0),
    "mask_sigma": (float, -1e9),
    "mask_tau": (float, 1e-3),
    "use_pos_embed": (bool, False),
}
TRAIN_SCHEMA = {
    "epochs": (int, 2),
    "batch": (int, 8),
    "patch": (int, 64),
    "lr": (float, 2e-4),
    "lr_schedule": (str, "cosine"),
    "seed": (int, 0),
    "eps_charbonnier": (float, 1e-3),
    "use_bgsa": (bool, True),
    "use_pretrain": (bool, True),
}
SYNTH_SCHEMA = {
    "qf": (int, 80),
    "split": (float, 0.8),
    "seed": (int, 0),
    "gamma": (float, 2.2),
    "gain": (float, 0.2),
    "noise_sigma": (float, 0.01),
    "subsampling": (str, "4:4:4"),
    "procedural": (int, 0),
    "height": (int, 128),
    "width": (int, 128),
    "detail": (float, 1.0),
    "shadow_grain": (float, 0.0),
}
ANALYZE_SCHEMA = {
    "qf": (int, 80),
    "bins": (int, 10),
    "subsampling": (str, "4:4:4"),
    "lossmap": (bool, True),
}
EVAL_SCHEMA = {
    "split": (str, "val"),
    "target": (str, "auto"),
    "eps_charbonnier": (float, 1e-3),
}
ABLATE_SCHEMA = {
    "preset": (str, "table2"),
    "pretrain_epochs": (int, 0),
}


def _flag(name: str) -> str:
    return "--" + name.replace("_", "-")


def _add_schema_flags(parser: argparse.ArgumentParser, schema: dict) -> None:
    for name, (typ, default) in schema.items():
        if typ is bool:
            parser.add_argument(
                _flag(name),
                dest=name,
                action=argparse.BooleanOptionalAction,
                default=None,
                help=f"(default {default})",
            )
        else:
            parser.add_argument(
                _flag(name),
                dest=name,
                type=typ,
                default=None,
                metavar=typ.__name__.upper(),
                help=f"(default {default})",
            )


def _parse_config_file(path: Path, schema: dict) -> dict:
    if not path.is_file():
        raise IngestionError(f"config file {path} does not exist")
    out = {}
    for lineno, raw in enumerate(path.read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise InvalidConfigError(f"{path}:{lineno}: expected key = value, got {raw!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if key not in schema:
            raise InvalidConfigError(f"{path}:{lineno}: unknown key {key!r}")
        typ, _default = schema[key]
        try:
            if typ is bool:
                low = value.lower()
                if low in ("1", "true", "yes", "on"):
                    out[key] = True
                elif low in ("0", "false", "no", "off"):
                    out[key] = False
                else:
                    raise ValueError(f"not a boolean: {value!r}")
            else:
                out[key] = typ(value)
        except ValueError as exc:
            raise InvalidConfigError(f"{path}:{lineno}: {exc}") from exc
    return out


def _resolve(args: argparse.Namespace, schema: dict) -> dict:
    """Merge defaults, config file, and explicit CLI flags (in that order)."""
    options = {name: default for name, (_t, default) in schema.items()}
    config_path = getattr(args, "config", None)
    if config_path:
        options.update(_parse_config_file(Path(config_path), schema))
    for name in schema:
        value = getattr(args, name, None)
        if value is not None:
            options[name] = value
    return options


def _write_effective_config(out_dir: Path, subcommand: str, options: dict,
                            extra: dict | None = None) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    lines = [f"subcommand = {subcommand}"]
    merged = dict(options)
    if extra:
        merged.update(extra)
    for key in sorted(merged):
        lines.append(f"{key} = {merged[key]}")
    (out_dir / "effective-config.txt").write_text("\n".join(lines) + "\n")


def _default_data_dir() -> Path | None:
    value = os.environ.get(ENV_DATA_DIR, "").strip()
    return Path(value) if value else None


def _require_dataset_root(args: argparse.Namespace) -> Path:
    if getattr(args, "in_path", None):
        return Path(args.in_path)
    env = _default_data_dir()
    if env is not None:
        return env
    raise InvalidConfigError(
        f"no dataset root: pass --in or set {ENV_DATA_DIR}"
    )


def _model_config(options: dict, use_bgsa: bool) -> ModelConfig:
    return ModelConfig(
        base_channels=options["base_channels"],
        num_downsamples=options["num_downsamples"],
        num_bgvit_blocks=options["num_bgvit_blocks"],
        num_heads=options["num_heads"],
        mlp_ratio=options["mlp_ratio"],
        mask_sigma=options["mask_sigma"],
        mask_tau=options["mask_tau"],
        use_bgsa=use_bgsa,
        use_pos_embed=options["use_pos_embed"],
    )


def _train_config(options: dict, stage: str) -> TrainConfig:
    return TrainConfig(
        stage=stage,
        epochs=options["epochs"],
        batch_size=options["batch"],
        patch_size=options["patch"],
        learning_rate=options["lr"],
        lr_schedule=options["lr_schedule"],
        seed=options["seed"],
        eps_charbonnier=options["eps_charbonnier"],
        use_pretrain=options["use_pretrain"],
        use_bgsa=options["use_bgsa"],
    )


def _list_images(path: Path) -> list[Path]:
    if path.is_file():
        return [path]
    if path.is_dir():
        files = sorted(p for p in path.iterdir() if p.suffix.lower() in IMAGE_EXTS)
        if not files:
            raise IngestionError(f"no images found in {path}")
        return files
    raise IngestionError(f"input path {path} does not exist")


def cmd_synth(args: argparse.Namespace) -> None:
    options = _resolve(args, SYNTH_SCHEMA)
    out_root = Path(args.out) if args.out else _default_data_dir()
    if out_root is None:
        raise InvalidConfigError(f"no output directory: pass --out or set {ENV_DATA_DIR}")
    if options["procedural"] > 0:
        if args.in_path:
            raise InvalidConfigError("--procedural and --in are mutually exclusive")
        source_dir = out_root / "sources"
        generate_procedural_images(
            source_dir,
            options["procedural"],
            seed=options["seed"],
            height=options["height"],
            width=options["width"],
            detail=options["detail"],
            shadow_grain=options["shadow_grain"],
        )
    elif args.in_path:
        source_dir = Path(args.in_path)
    else:
        raise InvalidConfigError("need a source: pass --in DIR or --procedural N")
    params = DarkenParams(
        gamma=options["gamma"], gain=options["gain"], noise_sigma=options["noise_sigma"]
    )
    manifest = synthesize_dataset(
        source_dir,
        out_root,
        qf=options["qf"],
        darken_params=params,
        split=options["split"],
        seed=options["seed"],
        subsampling=options["subsampling"],
    )
    _write_effective_config(out_root, "synth",
                            options, {"in": source_dir, "out": out_root})
    print(f"wrote {len(manifest.entries)} triplets to {out_root}")


def cmd_analyze_loss(args: argparse.Namespace) -> None:
    options = _resolve(args, ANALYZE_SCHEMA)
    if not args.in_path:
        raise InvalidConfigError("analyze-loss needs --in FILE_OR_DIR")
    out_dir = Path(args.out) if args.out else Path.cwd()
    out_dir.mkdir(parents=True, exist_ok=True)
    for src in _list_images(Path(args.in_path)):
        img = imaging.load_image(src)
        if img.ndim == 2:
            img = np.repeat(img[:, :, None], 3, axis=2)
        recon = jpeg_roundtrip(img, qf=options["qf"], subsampling=options["subsampling"])
        lmap = loss_map(img, recon)
        report = binned_loss_stats(img, lmap, options["bins"], qf=options["qf"])
        report.write_csv(out_dir / f"{src.stem}_loss.csv")
        if options["lossmap"]:
            peak = float(lmap.max())
            vis = lmap / peak if peak > 0 else lmap
            imaging.save_image(out_dir / f"{src.stem}_lossmap.png", vis)
    _write_effective_config(out_dir, "analyze-loss",
                            options, {"in": args.in_path, "out": out_dir})


def _run_training_stage(args: argparse.Namespace, stage: str) -> None:
    schema = {**TRAIN_SCHEMA, **MODEL_SCHEMA}
    options = _resolve(args, schema)
    dataset = _require_dataset_root(args)
    if not args.out:
        raise InvalidConfigError(f"{stage} needs --out RUN_DIR")
    out_dir = Path(args.out)
    manifest = load_manifest(dataset)
    train_cfg = _train_config(options, stage)
    model_cfg = _model_config(options, use_bgsa=options["use_bgsa"])
    if stage == "pretrain":
        ckpt = pretrain(manifest, model_cfg, train_cfg)
    else:
        init = None
        if args.checkpoint:
            init = load_checkpoint(args.checkpoint)
        ckpt = finetune(manifest, init, model_cfg, train_cfg)
    out_dir.mkdir(parents=True, exist_ok=True)
    save_checkpoint(ckpt, out_dir / "checkpoint.pt")
    write_history_csv(ckpt.history, out_dir / "history.csv")
    _write_effective_config(
        out_dir, stage, options,
        {"in": dataset, "out": out_dir, "init_checkpoint": args.checkpoint or "",
         "stage_tag": ckpt.stage, "param_count": ckpt.param_count},
    )
    final = ckpt.history[-1] if ckpt.history else {}
    print(
        f"{ckpt.stage} done: {len(ckpt.history)} epochs, "
        f"final train loss {final.get('train_loss', float('nan')):.6f}, "
        f"checkpoint at {out_dir / 'checkpoint.pt'}"
    )


def cmd_pretrain(args: argparse.Namespace) -> None:
    _run_training_stage(args, "pretrain")


def cmd_finetune(args: argparse.Namespace) -> None:
    _run_training_stage(args, "finetune")


def cmd_eval(args: argparse.Namespace) -> None:
    options = _resolve(args, EVAL_SCHEMA)
    dataset = _require_dataset_root(args)
    if not args.checkpoint:
        raise InvalidConfigError("eval needs --checkpoint FILE")
    out_dir = Path(args.out) if args.out else Path.cwd()
    manifest = load_manifest(dataset)
    ckpt = load_checkpoint(args.checkpoint)
    report = evaluate(manifest, options["split"], ckpt, target=options["target"],
                      eps=options["eps_charbonnier"])
    out_dir.mkdir(parents=True, exist_ok=True)
    report.write_csv(out_dir / "eval.csv")
    _write_effective_config(
        out_dir, "eval", options,
        {"in": dataset, "out": out_dir, "checkpoint": args.checkpoint,
         "resolved_target": report.target},
    )
    print(
        f"eval[{options['split']}] vs {report.target}: "
        f"PSNR {report.mean_psnr:.4f} dB, SSIM {report.mean_ssim:.4f}, "
        f"Charbonnier {report.mean_charbonnier:.6f}"
    )


def cmd_infer(args: argparse.Namespace) -> None:
    if not args.in_path:
        raise InvalidConfigError("infer needs --in FILE_OR_DIR")
    if not args.checkpoint:
        raise InvalidConfigError("infer needs --checkpoint FILE")
    if not args.out:
        raise InvalidConfigError("infer needs --out FILE_OR_DIR")
    ckpt = load_checkpoint(args.checkpoint)
    if ckpt.stage == "pretrain":
        print(
            "warning: pretrain-stage checkpoint; outputs are compression "
            "restorations, not brightness enhancements",
            file=sys.stderr,
        )
    model = ckpt.build_model()
    sources = _list_images(Path(args.in_path))
    out = Path(args.out)
    single_file = len(sources) == 1 and (out.suffix.lower() in IMAGE_EXTS)
    if not single_file:
        out.mkdir(parents=True, exist_ok=True)
    for src in sources:
        img = imaging.load_image(src)
        if img.ndim == 2:
            img = np.repeat(img[:, :, None], 3, axis=2)
        enhanced = np.clip(run_model_on_image(model, img), 0.0, 1.0)
        dest = out if single_file else out / f"{src.stem}.png"
        imaging.save_image(dest, enhanced)
    cfg_dir = out.parent if single_file else out
    _write_effective_config(
        cfg_dir, "infer", {},
        {"in": args.in_path, "out": args.out, "checkpoint": args.checkpoint,
         "stage": ckpt.stage},
    )


ABLATE_ARMS = (
    ("baseline", False, False),
    ("pretrain_only", True, False),
    ("bgsa_only", False, True),
    ("pretrain_bgsa", True, True),
)


def cmd_ablate(args: argparse.Namespace) -> None:
    schema = {**TRAIN_SCHEMA, **MODEL_SCHEMA, **ABLATE_SCHEMA}
    options = _resolve(args, schema)
    if options["preset"] != "table2":
        raise InvalidConfigError(f"unknown preset {options['preset']!r}")
    dataset = _require_dataset_root(args)
    if not args.out:
        raise InvalidConfigError("ablate needs --out RUN_DIR")
    out_dir = Path(args.out)
    total_epochs = options["epochs"]
    pre_epochs = options["pretrain_epochs"] or max(1, total_epochs // 2)
    fine_epochs = total_epochs - pre_epochs
    if fine_epochs < 1:
        raise InvalidConfigError(
            f"epochs ({total_epochs}) must exceed pretrain_epochs ({pre_epochs})"
        )
    manifest = load_manifest(dataset)
    rows = []
    for name, use_pre, use_bgsa in ABLATE_ARMS:
        arm_dir = out_dir / name
        arm_dir.mkdir(parents=True, exist_ok=True)
        model_cfg = _model_config(options, use_bgsa=use_bgsa)
        init = None
        if use_pre:
            pre_cfg = replace(
                _train_config(options, "pretrain"),
                epochs=pre_epochs, use_bgsa=use_bgsa,
            )
            init = pretrain(manifest, model_cfg, pre_cfg)
            save_checkpoint(init, arm_dir / "pretrain.pt")
        fine_cfg = replace(
            _train_config(options, "finetune"),
            epochs=fine_epochs if use_pre else total_epochs,
            use_pretrain=use_pre,
            use_bgsa=use_bgsa,
        )
        ckpt = finetune(manifest, init, model_cfg, fine_cfg)
        save_checkpoint(ckpt, arm_dir / "checkpoint.pt")
        write_history_csv(ckpt.history, arm_dir / "history.csv")
        report = evaluate(manifest, "val", ckpt, target="bright",
                          eps=options["eps_charbonnier"])
        report.write_csv(arm_dir / "eval.csv")
        rows.append((name, use_pre, use_bgsa, report.mean_psnr, report.mean_ssim))
        print(
            f"{name}: PSNR {report.mean_psnr:.4f} dB, SSIM {report.mean_ssim:.4f}"
        )
    with open(out_dir / "ablation.csv", "w", newline="") as fh:
        fh.write("arm,use_pretrain,use_bgsa,psnr,ssim\n")
        for name, use_pre, use_bgsa, mean_psnr, mean_ssim in rows:
            fh.write(
                f"{name},{int(use_pre)},{int(use_bgsa)},"
                f"{mean_psnr:.12g},{mean_ssim:.12g}\n"
            )
    _write_effective_config(
        out_dir, "ablate", options,
        {"in": dataset, "out": out_dir, "pretrain_epochs_resolved": pre_epochs},
    )


def _read_csv_columns(path: Path) -> tuple[list[str], list[dict]]:
    import csv as _csv

    with open(path, newline="") as fh:
        reader = _csv.DictReader(fh)
        return list(reader.fieldnames or []), list(reader)


def cmd_report(args: argparse.Namespace) -> None:
    if not args.in_path:
        raise InvalidConfigError("report needs --in RUN_DIR_OR_CSV")
    src = Path(args.in_path)
    out_dir = Path(args.out) if args.out else (src if src.is_dir() else src.parent)
    out_dir.mkdir(parents=True, exist_ok=True)

    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    targets = []
    if src.is_dir():
        targets = sorted(src.glob("*.csv")) + sorted(src.glob("*/history.csv"))
        if not targets:
            raise IngestionError(f"no CSV files found under {src}")
    else:
        targets = [src]

    written = []
    for csv_path in targets:
        cols, rows = _read_csv_columns(csv_path)
        if not rows:
            continue
        stem = csv_path.stem if csv_path.parent == src or not src.is_dir() \
            else f"{csv_path.parent.name}_{csv_path.stem}"
        if "train_loss" in cols:
            fig, ax1 = plt.subplots(figsize=(6, 4))
            epochs = [int(r["epoch"]) for r in rows]
            ax1.plot(epochs, [float(r["train_loss"]) for r in rows],
                     color="tab:blue", label="train loss")
            ax1.set_xlabel("epoch")
            ax1.set_ylabel("train loss")
            if any(r.get("val_psnr") for r in rows):
                ax2 = ax1.twinx()
                ax2.plot(epochs, [float(r["val_psnr"]) for r in rows if r["val_psnr"]],
                         color="tab:orange", label="val PSNR")
                ax2.set_ylabel("val PSNR (dB)")
            fig.tight_layout()
            dest = out_dir / f"{stem}_curves.png"
        elif "bin_low" in cols:
            fig, ax = plt.subplots(figsize=(6, 4))
            centers = [(float(r["bin_low"]) + float(r["bin_high"])) / 2 for r in rows]
            width = float(rows[0]["bin_high"]) - float(rows[0]["bin_low"])
            ax.bar(centers, [float(r["mean_abs_loss"]) for r in rows],
                   width=width * 0.9, color="tab:red")
            ax.set_xlabel("luminance bin")
            ax.set_ylabel("mean absolute loss")
            fig.tight_layout()
            dest = out_dir / f"{stem}_bins.png"
        elif "psnr" in cols and "id" in cols:
            body = [r for r in rows if r["id"] != "mean"]
            fig, ax = plt.subplots(figsize=(6, 4))
            ax.bar(range(len(body)), [float(r["psnr"]) for r in body], color="tab:green")
            ax.set_xticks(range(len(body)))
            ax.set_xticklabels([r["id"] for r in body], rotation=60, fontsize=7)
            ax.set_ylabel("PSNR (dB)")
            fig.tight_layout()
            dest = out_dir / f"{stem}_psnr.png"
        else:
            continue
        fig.savefig(dest, dpi=120)
        plt.close(fig)
        written.append(dest)
    if not written:
        raise IngestionError(f"no plottable CSVs found at {src}")
    _write_effective_config(out_dir, "report", {},
                            {"in": args.in_path, "out": out_dir})
    for dest in written:
        print(f"wrote {dest}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="caplab",
        description="Low-light JPEG enhancement lab: synthesis, analysis, "
                    "training, evaluation.",
    )
    sub = parser.add_subparsers(dest="subcommand", required=True)

    def add(name, func, schemas, needs_config=True, help_text=""):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--in", dest="in_path", default=None, metavar="PATH",
                       help="input path (dataset root, image, or run dir)")
        p.add_argument("--out", dest="out", default=None, metavar="PATH",
                       help="output path")
        p.add_argument("--checkpoint", dest="checkpoint", default=None,
                       metavar="FILE", help="checkpoint file")
        if needs_config:
            p.add_argument("--config", dest="config", default=None, metavar="FILE",
                           help="key = value config file; flags override it")
        for schema in schemas:
            _add_schema_flags(p, schema)
        p.set_defaults(func=func)
        return p

    add("synth", cmd_synth, [SYNTH_SCHEMA],
        help_text="synthesize a bright/low/compressed dataset")
    add("analyze-loss", cmd_analyze_loss, [ANALYZE_SCHEMA],
        help_text="bin compression loss by luminance, emit CSV and loss maps")
    add("pretrain", cmd_pretrain, [TRAIN_SCHEMA, MODEL_SCHEMA],
        help_text="stage one: restore compressed low-light images")
    add("finetune", cmd_finetune, [TRAIN_SCHEMA, MODEL_SCHEMA],
        help_text="stage two: enhance toward bright references")
    add("eval", cmd_eval, [EVAL_SCHEMA],
        help_text="score a checkpoint on a dataset split")
    add("infer", cmd_infer, [], needs_config=False,
        help_text="run a checkpoint on images")
    add("ablate", cmd_ablate, [TRAIN_SCHEMA, MODEL_SCHEMA, ABLATE_SCHEMA],
        help_text="run the four-arm toggle comparison")
    add("report", cmd_report, [], needs_config=False,
        help_text="render CSV outputs as plots")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        args.func(args)
    except CaplabError as exc:
        message = " ".join(str(exc).split())
        print(f"error:{exc.category}: {message}", file=sys.stderr)
        return 1
    except Exception as exc:  # pragma: no cover - safety net
        message = " ".join(str(exc).split())
        print(f"error:internal: {type(exc).__name__}: {message}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
