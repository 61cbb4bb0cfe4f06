"""Command-line surface tying all stages together.

Subcommands mirror the pipeline stages plus run-all. A single JSON config
document governs everything; --seed and --out-dir override it. Every run
appends to a manifest (config snapshot, stage status, artifact list) so a
completed run can be reconstructed from its manifest alone.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

from . import __version__
from .config import ConfigError, PipelineConfig, parse_config, serialize_config
from .diffusion import config_digest
from .pipeline import (
    ARTIFACTS,
    PIPELINE_STAGES,
    PrerequisiteError,
    run_pipeline,
    stage_evaluate,
)

ENV_OUT_DIR = "LATENTDIFF_OUT_DIR"

_STAGE_FNS = dict(PIPELINE_STAGES)


def _load_config(args: argparse.Namespace) -> PipelineConfig:
    if args.config is not None:
        cfg = parse_config(args.config, strict=not args.permissive)
    else:
        cfg = parse_config({}, strict=True)
    if args.seed is not None:
        cfg.seed = args.seed
    if args.out_dir is not None:
        cfg.out_dir = args.out_dir
    else:
        import os

        env_dir = os.environ.get(ENV_OUT_DIR)
        if env_dir and args.config is None:
            cfg.out_dir = env_dir
    return cfg


def _manifest_path(out_dir: Path) -> Path:
    return out_dir / "manifest.json"


def _load_manifest(out_dir: Path, cfg: PipelineConfig) -> dict:
    path = _manifest_path(out_dir)
    if path.exists():
        manifest = json.loads(path.read_text(encoding="utf-8"))
    else:
        manifest = {"tool_version": __version__, "stages": {}, "artifacts": []}
    manifest["config"] = serialize_config(cfg)
    manifest["config_hash"] = config_digest(serialize_config(cfg))
    manifest["master_seed"] = cfg.seed
    return manifest


def _record_stage(manifest: dict, out_dir: Path, stage: str, status: dict,
                  elapsed: float) -> None:
    manifest["stages"][stage] = {"status": status.get("status", "ok"),
                                 "detail": status, "seconds": round(elapsed, 3)}
    present = sorted(str(out_dir / fname) for fname in ARTIFACTS.values()
                     if (out_dir / fname).exists())
    manifest["artifacts"] = present
    _manifest_path(out_dir).write_text(
        json.dumps(manifest, sort_keys=True, indent=2) + "\n", encoding="utf-8")


def _run_stage(stage: str, cfg: PipelineConfig, report_only: bool = False) -> dict:
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = _load_manifest(out_dir, cfg)
    start = time.perf_counter()
    if stage == "evaluate":
        status = stage_evaluate(cfg, out_dir, report_only=report_only)
    else:
        status = _STAGE_FNS[stage](cfg, out_dir)
    _record_stage(manifest, out_dir, stage, status, time.perf_counter() - start)
    return status


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="latentdiff",
        description="Feature-space diffusion augmentation for imbalanced regression")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    commands = [
        ("gen-data", "generate the built-in long-tailed benchmark CSVs"),
        ("train-vanilla", "train the baseline encoder + head"),
        ("extract", "dump encoder features for the training set"),
        ("train-diffusion", "fit the conditional denoiser on extracted features"),
        ("generate", "allocate the synthetic budget and sample gated features"),
        ("augment", "retrain the head on real + synthetic feature batches"),
        ("evaluate", "score vanilla (and augmented, if present) on the test set"),
        ("run-all", "run every stage in order"),
    ]
    for name, help_text in commands:
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", type=str, default=None, help="JSON config path")
        p.add_argument("--seed", type=int, default=None, help="override master seed")
        p.add_argument("--out-dir", type=str, default=None, help="override output directory")
        p.add_argument("--permissive", action="store_true",
                       help="ignore unknown config keys instead of failing")
        if name == "evaluate":
            p.add_argument("--report-only", action="store_true",
                           help="print reports without writing files")
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = _load_config(args)
    except (ConfigError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    try:
        if args.command == "run-all":
            out_dir = Path(cfg.out_dir)
            out_dir.mkdir(parents=True, exist_ok=True)
            manifest = _load_manifest(out_dir, cfg)
            for name, fn in PIPELINE_STAGES:
                start = time.perf_counter()
                status = fn(cfg, out_dir)
                _record_stage(manifest, out_dir, name, status, time.perf_counter() - start)
                print(f"[{name}] {status.get('status', 'ok')}")
            print(f"artifacts written to {out_dir}")
        elif args.command == "evaluate":
            status = _run_stage("evaluate", cfg, report_only=args.report_only)
            print(json.dumps(status, sort_keys=True, indent=2))
        else:
            status = _run_stage(args.command, cfg)
            print(json.dumps(status, sort_keys=True, indent=2))
    except PrerequisiteError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except (ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except RuntimeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
