"""Command-line entry point: ``transfer-mia run`` and ``transfer-mia report``.

Exit codes: 0 success, 1 runtime failure, 2 invalid config or result
document, 3 missing data.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from pathlib import Path

import torch

from .attack import save_attack_model
from .config import ConfigError, ExperimentConfig
from .data import load_dataset
from .eval import ExperimentError, ExperimentResult, run_q1, run_q2, run_q3_transfer_attack
from .eval.report import render_text, tables, to_csv, write_tables
from .models import TransferMode, save_checkpoint
from .shadow import save_attack_dataset

log = logging.getLogger("transfer_mia")

EXIT_OK, EXIT_RUNTIME, EXIT_CONFIG, EXIT_MISSING = 0, 1, 2, 3
RESULT_NAME = "result.json"


def _load_corpora(cfg: ExperimentConfig):
    c = cfg.corpora
    teacher = load_dataset(cfg.locate(c["teacher"]), limit=c["limit"], resolution=c["resolution"])
    students = [load_dataset(cfg.locate(s), limit=c["limit"], resolution=c["resolution"]) for s in c["students"]]
    names = [teacher.name, *(s.name for s in students)]
    if len(set(names)) != len(names):
        raise ConfigError("corpora", f"corpus names must be distinct, got {names}")
    for s in students:
        if s.sample_shape != teacher.sample_shape:
            raise ConfigError("corpora.resolution", f"{s.name} images {s.sample_shape} differ from {teacher.sample_shape}")
    return teacher, students


def execute(cfg: ExperimentConfig) -> ExperimentResult:
    teacher, students = _load_corpora(cfg)
    plan = cfg.shadow_plan(teacher.num_classes, teacher.sample_shape)
    target_spec, shadow_spec = plan.target, plan.shadow_spec
    attack = cfg.resolved["attack"]
    common = dict(
        data_seed=cfg.seeds["data"], workers=cfg.workers, hidden_width=attack["hidden_width"],
        threshold=attack["threshold"], config=cfg.resolved,
    )
    exp = cfg.experiment
    if exp == "q1":
        return run_q1(teacher, students, plan, cfg.attack_config(), transfer_mode=TransferMode("fine_tune"), **common)
    if exp in ("attack1", "attack2", "attack3"):
        return run_q1(teacher, students, plan, cfg.attack_config(), attacks=(exp,),
                      transfer_mode=cfg.transfer_mode(), **common)
    if exp == "q2":
        wanted = cfg.corpora["sweep_corpus"]
        pick = next((s for s in students if s.name == wanted), None) if wanted else students[0]
        if pick is None:
            raise ConfigError("corpora.sweep_corpus", f"no student corpus named {wanted!r}")
        return run_q2(teacher, pick, plan, cfg.attack_config(), **common)
    return run_q3_transfer_attack(shadow_spec, target_spec, teacher, students, plan, cfg.attack_config(), **common)


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def persist(result: ExperimentResult, cfg: ExperimentConfig) -> list[Path]:
    out = cfg.output_dir
    out.mkdir(parents=True, exist_ok=True)
    written = write_tables(result, out)

    for key, model in sorted(result.models.items()):
        path = out / "models" / f"{key}.safetensors"
        path.parent.mkdir(parents=True, exist_ok=True)
        save_checkpoint(model, path)
        written.append(path)
    for key, attack_model in sorted(result.attack_models.items()):
        path = out / "attack_models" / f"{key}.safetensors"
        path.parent.mkdir(parents=True, exist_ok=True)
        save_attack_model(attack_model, path)
        written.append(path)
    for key, prep in sorted(result.preparations.items()):
        base = out / "attack_data" / key
        base.mkdir(parents=True, exist_ok=True)
        for part, data in (("train", prep.train), ("evaluation", prep.evaluation)):
            save_attack_dataset(data, base / f"{part}.csv")
            written.append(base / f"{part}.csv")

    config_path = out / "config.resolved.json"
    config_path.write_text(json.dumps(cfg.resolved, indent=2, sort_keys=True) + "\n")
    written.append(config_path)

    doc = result.to_dict()
    doc["provenance"] = {**doc["provenance"], "workers": cfg.workers, "output_dir": str(out)}
    result_path = out / RESULT_NAME
    result_path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    written.append(result_path)

    manifest = {
        "files": [
            {"path": p.relative_to(out).as_posix(), "sha256": _sha256(p), "bytes": p.stat().st_size}
            for p in sorted(written)
        ]
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    return written


def cmd_run(args) -> int:
    try:
        cfg = ExperimentConfig.load(args.config, output_dir=args.out, workers=args.workers,
                                    seed_override=args.seed_override)
    except FileNotFoundError as exc:
        print(f"error: config not found: {exc.filename or args.config}", file=sys.stderr)
        return EXIT_MISSING
    except ConfigError as exc:
        print(f"error: invalid config: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    torch.set_num_threads(1)  # per-model determinism contract
    try:
        result = execute(cfg)
    except FileNotFoundError as exc:
        print(f"error: missing data: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except ConfigError as exc:
        print(f"error: invalid config: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        log.exception("run failed")
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME

    persist(result, cfg)
    print(render_text(result))
    print(f"\nresults written to {cfg.output_dir}")
    return EXIT_OK


def load_result(path: str | Path) -> ExperimentResult:
    path = Path(path)
    if path.is_dir():
        path = path / RESULT_NAME
    text = path.read_text()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError:
        raise ExperimentError(f"corrupt result: {path} is not JSON") from None
    if not isinstance(doc, dict) or not doc:
        raise ExperimentError(f"corrupt result: {path} is empty")
    return ExperimentResult.from_dict(doc)


def cmd_report(args) -> int:
    try:
        result = load_result(args.result)
    except FileNotFoundError as exc:
        print(f"error: result not found: {exc.filename}", file=sys.stderr)
        return EXIT_MISSING
    except ExperimentError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    result_path = Path(args.result)
    out = Path(args.out) if args.out else (result_path if result_path.is_dir() else result_path.parent)
    written = write_tables(result, out)
    if args.format == "csv":
        for name, (header, rows) in tables(result).items():
            print(f"# {name}")
            print(to_csv(header, rows), end="")
    else:
        print(render_text(result))
    for path in written:
        log.info("wrote %s", path)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="transfer-mia", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run the experiment a config selects")
    run.add_argument("config")
    run.add_argument("--out", help="output directory (overrides output_dir)")
    run.add_argument("--workers", type=int, help="max concurrent model trainings")
    run.add_argument("--seed-override", type=int, help="replace every seed (shadow gets S+1)")
    run.set_defaults(func=cmd_run)

    report = sub.add_parser("report", help="render tables and plot data from a result document")
    report.add_argument("result", help="result.json or the run directory holding it")
    report.add_argument("--format", choices=("text", "csv"), default="text")
    report.add_argument("--out", help="where to write the CSV tables (default: next to the result)")
    report.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
