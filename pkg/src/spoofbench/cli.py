"""Command-line entry point: prepare, train, evaluate, zeroshot, compare."""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
import time
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field
from pathlib import Path

from . import corpus as cp
from . import evalkit as ek
from .frontend import FrontendConfig

log = logging.getLogger("spoofbench")

E_USAGE = 2
E_CORPUS = 3
E_DEGENERATE = 4
E_OFFLINE = 5
E_DIVERGED = 6
E_LOCKED = 7

EXIT_HELP = """exit codes:
  0  success
  2  usage error (bad flags, unknown architecture or backend)
  3  E_CORPUS      corpus, metadata or split manifest unreadable or invalid
  4  E_DEGENERATE  scores cover a single class; ROC/EER undefined
  5  E_OFFLINE     pretrained weights not found under $SPOOFBENCH_WEIGHTS
  6  E_DIVERGED    non-finite training loss
  7  E_LOCKED      output directory is in use by another invocation

errors are printed to stderr as one line: "<CODE>: <message>"
"""

CLIPS_FILE = "clips.tsv"
SPLITS_FILE = "splits.tsv"


class CliError(Exception):
    def __init__(self, code: int, name: str, message: str):
        super().__init__(message)
        self.code = code
        self.name = name


@dataclass
class RunManifest:
    command: str
    config: dict
    fingerprint: dict
    outputs: list[str]
    duration_s: float = 0.0
    extra: dict = field(default_factory=dict)

    def write(self, out_dir: Path) -> Path:
        path = out_dir / "manifest.json"
        path.write_text(json.dumps(asdict(self), indent=2, sort_keys=True) + "\n", encoding="utf-8")
        return path


def fingerprint(splits_file: Path) -> dict:
    data = splits_file.read_bytes()
    count = sum(1 for line in data.decode("utf-8").splitlines() if line.strip())
    return {"count": count, "sha256": hashlib.sha256(data).hexdigest()}


@contextmanager
def run_lock(out_dir: Path):
    out_dir.mkdir(parents=True, exist_ok=True)
    lock = out_dir / ".lock"
    try:
        fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise CliError(E_LOCKED, "E_LOCKED", f"{out_dir} is locked by another run (remove {lock} if stale)")
    os.write(fd, str(os.getpid()).encode())
    os.close(fd)
    try:
        yield
    finally:
        lock.unlink(missing_ok=True)


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


# ---------------------------------------------------------------------------
# corpus files


def write_clip_table(path: Path, records) -> None:
    lines = [
        f"{r.clip_id}\t{r.label.name.lower()}\t{Path(r.audio_path).resolve()}\t{r.speaker_id or ''}\n"
        for r in sorted(records, key=lambda r: r.clip_id)
    ]
    path.write_text("".join(lines), encoding="utf-8")


def load_prepared(splits_file: str | Path) -> tuple[list[cp.ClipRecord], cp.SplitAssignment]:
    """Records and split assignment from a prepared directory's split manifest
    and the clip table next to it."""
    splits_file = Path(splits_file)
    clips_file = splits_file.with_name(CLIPS_FILE)
    try:
        labels, splits = cp.read_split_manifest(splits_file)
        rows = [l.split("\t") for l in clips_file.read_text(encoding="utf-8").splitlines() if l.strip()]
    except (OSError, ValueError, cp.CorpusError) as exc:
        raise CliError(E_CORPUS, "E_CORPUS", str(exc))
    records = []
    for row in rows:
        if len(row) != 4 or row[0] not in labels:
            raise CliError(E_CORPUS, "E_CORPUS", f"{clips_file}: clip table does not match {splits_file.name}")
        records.append(cp.ClipRecord(row[0], Path(row[2]), labels[row[0]], row[3] or None))
    missing = [r.clip_id for r in records if not r.audio_path.is_file()]
    if missing or len(records) != len(labels):
        raise CliError(E_CORPUS, "E_CORPUS", f"missing audio for {len(missing)} clips, e.g. {missing[:3]}")
    return records, cp.SplitAssignment(splits, seed=-1, ratios=())


# ---------------------------------------------------------------------------
# commands


def cmd_prepare(args) -> int:
    out = Path(args.out)
    try:
        ratios = tuple(float(x) for x in args.ratios.split(","))
    except ValueError:
        raise CliError(E_USAGE, "E_USAGE", f"--ratios must be three comma-separated numbers, got {args.ratios!r}")
    rule = cp.LabelColumn(args.label_column) if args.label_column is not None else cp.DIRECTORY
    # everything is validated before the first byte is written
    try:
        records = cp.parse_metadata(args.metadata, args.corpus, rule, args.speaker_column)
        splits = cp.make_splits(records, ratios, args.seed, speaker_disjoint=args.speaker_disjoint)
        stats = cp.corpus_stats(records)
    except (cp.CorpusError, OSError) as exc:
        raise CliError(E_CORPUS, "E_CORPUS", str(exc))
    except ValueError as exc:
        raise CliError(E_CORPUS, "E_CORPUS", str(exc))
    t0 = time.perf_counter()
    with run_lock(out):
        cp.write_split_manifest(out / SPLITS_FILE, records, splits)
        write_clip_table(out / CLIPS_FILE, records)
        stats["per_split"] = {s.value: len(splits.ids(s)) for s in cp.SPLIT_ORDER}
        _write_json(out / "stats.json", stats)
        config = {"corpus": str(Path(args.corpus).resolve()), "metadata": str(Path(args.metadata).resolve()),
                  "seed": args.seed, "ratios": list(ratios), "label_rule": str(args.label_column or cp.DIRECTORY),
                  "speaker_disjoint": args.speaker_disjoint}
        RunManifest("prepare", config, fingerprint(out / SPLITS_FILE),
                    [SPLITS_FILE, CLIPS_FILE, "stats.json"], time.perf_counter() - t0).write(out)
    print(f"{len(records)} clips -> {out / SPLITS_FILE}")
    return 0


def _resolve_train_config(args):
    from .models import ModelSpec
    from .trainer import TrainConfig, default_config, load_config

    file_cfg = load_config(args.config) if args.config else {}
    model_kw = dict(file_cfg.pop("model", {}))
    train_kw = dict(file_cfg.pop("train", file_cfg))
    if args.no_pretrained:
        model_kw["pretrained_backbone"] = False
    pretrained = model_kw.pop("pretrained_backbone", None)
    for k in ("architecture", "input_kind", "head", "frozen_backbone"):
        model_kw.pop(k, None)
    spec = ModelSpec.for_architecture(args.arch, pretrained=pretrained, **model_kw)
    if args.max_epochs is not None:
        train_kw["max_epochs"] = args.max_epochs
    if args.seed is not None:
        train_kw["seed"] = args.seed
    train_kw.pop("monitor", None)
    cfg = default_config(spec.architecture, **train_kw)
    assert isinstance(cfg, TrainConfig)
    return spec, cfg


def cmd_train(args) -> int:
    from .features import FeatureStore
    from .models import Architecture, PretrainedWeightsUnavailable, build_model
    from .trainer import TrainingDiverged, save_config, train

    try:
        Architecture.parse(args.arch)
    except ValueError:
        raise CliError(E_USAGE, "E_USAGE", f"unknown architecture {args.arch!r}; "
                       f"choose from {', '.join(a.value for a in Architecture)}")
    try:
        spec, cfg = _resolve_train_config(args)
    except (OSError, json.JSONDecodeError, TypeError, ValueError) as exc:
        raise CliError(E_USAGE, "E_USAGE", f"bad training config: {exc}")
    records, splits = load_prepared(args.splits)
    out = Path(args.out)
    t0 = time.perf_counter()
    with run_lock(out):
        (out / "FAILED").unlink(missing_ok=True)
        resolved = {"architecture": spec.architecture.value, "model": spec.to_dict(), "train": cfg.to_dict(),
                    "frontend": asdict(FrontendConfig()), "splits": str(Path(args.splits).resolve())}
        save_config(out / "config.resolved", resolved)
        try:
            model = build_model(spec, seed=cfg.seed)
            store = FeatureStore(FrontendConfig())
            model, history = train(model, records, splits, cfg, store, out)
            test = splits.select(records, cp.Split.TEST)
            if test:
                ek.write_score_file(out / "test_scores.tsv", ek.score_model(model, test, store))
        except PretrainedWeightsUnavailable as exc:
            _mark_failed(out, "E_OFFLINE", exc)
            raise CliError(E_OFFLINE, "E_OFFLINE", str(exc))
        except TrainingDiverged as exc:
            _mark_failed(out, "E_DIVERGED", exc)
            raise CliError(E_DIVERGED, "E_DIVERGED", str(exc))
        outputs = ["config.resolved", "history.csv", "best.ckpt"] + (["test_scores.tsv"] if test else [])
        RunManifest("train", resolved, fingerprint(Path(args.splits)), outputs, time.perf_counter() - t0,
                    {"best_epoch": history.best_epoch, "stopped_early": history.stopped_early}).write(out)
    best = history[history.best_epoch]
    print(f"best epoch {history.best_epoch}: val_acc {best.val_acc:.4f} -> {out / 'best.ckpt'}")
    return 0


def _mark_failed(out: Path, code: str, exc: Exception) -> None:
    (out / "FAILED").write_text(f"{code}: {exc}\n", encoding="utf-8")


def _emit_report(out: Path, report: ek.MetricsReport, name: str) -> None:
    ek.write_report(out, report)
    print(ek.format_table([(name, report)]))


def cmd_evaluate(args) -> int:
    out = Path(args.out)
    policy = ek.ThresholdPolicy(args.threshold_policy)
    if args.scores:
        try:
            ss = ek.read_score_file(args.scores)
        except (OSError, ValueError) as exc:
            raise CliError(E_CORPUS, "E_CORPUS", str(exc))
        source, meta, name = ss, {"scores": str(Path(args.scores).resolve())}, Path(args.scores).stem
        fp = {"count": ss.n, "sha256": hashlib.sha256(Path(args.scores).read_bytes()).hexdigest()}
    else:
        from .models import CheckpointError, load_checkpoint
        from .trainer import load_config

        run = Path(args.run)
        try:
            resolved = load_config(run / "config.resolved")
            model = load_checkpoint(run / "best.ckpt")
        except (OSError, json.JSONDecodeError, CheckpointError) as exc:
            raise CliError(E_CORPUS, "E_CORPUS", f"cannot load run {run}: {exc}")
        records, splits = load_prepared(resolved["splits"])
        split = cp.Split(args.split)
        chosen = splits.select(records, split)
        if not chosen:
            raise CliError(E_CORPUS, "E_CORPUS", f"{split.value} split is empty")
        ss = ek.score_model(model, chosen)
        source, name = ss, run.name
        meta = {"run": str(run.resolve()), "split": split.value, "architecture": resolved["architecture"]}
        fp = fingerprint(Path(resolved["splits"]))
    try:
        report = ek.evaluate(source, policy=policy, metadata=meta)
    except ek.DegenerateScoresError as exc:
        raise CliError(E_DEGENERATE, "E_DEGENERATE", str(exc))
    t0 = time.perf_counter()
    with run_lock(out):
        if not args.scores:
            ek.write_score_file(out / "scores.tsv", ss)
        _emit_report(out, report, name)
        RunManifest("evaluate", {"policy": policy.value, **meta}, fp,
                    ["report.json", "roc.csv", "det.csv", "confusion.csv"], time.perf_counter() - t0).write(out)
    return 0


def cmd_zeroshot(args) -> int:
    from . import zeroshot as zs

    records, splits = load_prepared(args.splits)
    # load before touching --out so an offline run leaves nothing behind
    try:
        backend = zs.load_backend(args.backend, random_init=args.random_init)
    except zs.BackendUnavailable as exc:
        raise CliError(E_OFFLINE, "E_OFFLINE", str(exc))
    t0 = time.perf_counter()
    try:
        report, ss = zs.evaluate_zero_shot(backend, records, splits)
    except ek.DegenerateScoresError as exc:
        raise CliError(E_DEGENERATE, "E_DEGENERATE", str(exc))
    out = Path(args.out)
    with run_lock(out):
        ek.write_score_file(out / "test_scores.tsv", ss)
        _emit_report(out, report, backend.name)
        RunManifest("zeroshot", report.metadata, fingerprint(Path(args.splits)),
                    ["test_scores.tsv", "report.json", "roc.csv", "det.csv", "confusion.csv"],
                    time.perf_counter() - t0).write(out)
    return 0


def cmd_compare(args) -> int:
    rows = []
    for d in args.runs:
        path = Path(d) / "report.json"
        try:
            rows.append((Path(d).name, json.loads(path.read_text(encoding="utf-8"))))
        except (OSError, json.JSONDecodeError) as exc:
            raise CliError(E_CORPUS, "E_CORPUS", f"cannot read {path}: {exc}")
    table = ek.format_table(rows)
    print(table)
    if args.out:
        out = Path(args.out)
        with run_lock(out):
            (out / "comparison.txt").write_text(table + "\n", encoding="utf-8")
    return 0


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    from .zeroshot import BackendId

    p = argparse.ArgumentParser(prog="spoofbench", description="Audio deepfake detection benchmark runner.",
                                epilog=EXIT_HELP, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("prepare", help="parse a corpus and write seeded stratified splits", epilog=EXIT_HELP,
                       formatter_class=argparse.RawDescriptionHelpFormatter)
    s.add_argument("--corpus", required=True, help="audio root (real/ and fake/ subdirectories)")
    s.add_argument("--metadata", required=True, help="pipe-separated metadata file")
    s.add_argument("--seed", type=int, default=42)
    s.add_argument("--ratios", default="0.7,0.15,0.15")
    s.add_argument("--label-column", type=int, default=None, help="take labels from this metadata field")
    s.add_argument("--speaker-column", type=int, default=None)
    s.add_argument("--speaker-disjoint", action="store_true")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_prepare)

    s = sub.add_parser("train", help="fine-tune one architecture", epilog=EXIT_HELP,
                       formatter_class=argparse.RawDescriptionHelpFormatter)
    s.add_argument("--arch", required=True)
    s.add_argument("--splits", required=True, help="splits.tsv written by prepare")
    s.add_argument("--config", help="JSON file with 'train' and/or 'model' overrides")
    s.add_argument("--max-epochs", type=int)
    s.add_argument("--seed", type=int)
    s.add_argument("--no-pretrained", action="store_true", help="random-init backbones (no weight lookup)")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("evaluate", help="metrics, curves and table for a score file or a run", epilog=EXIT_HELP,
                       formatter_class=argparse.RawDescriptionHelpFormatter)
    g = s.add_mutually_exclusive_group(required=True)
    g.add_argument("--scores")
    g.add_argument("--run")
    s.add_argument("--split", default="test", choices=[x.value for x in cp.Split])
    s.add_argument("--threshold-policy", default="fixed", choices=["fixed", "eer"])
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("zeroshot", help="score the TEST split with a pretrained backbone", epilog=EXIT_HELP,
                       formatter_class=argparse.RawDescriptionHelpFormatter)
    s.add_argument("--backend", required=True, choices=[b.value for b in BackendId])
    s.add_argument("--splits", required=True)
    s.add_argument("--random-init", action="store_true",
                   help="random weights; exercises the pipeline only, results are meaningless")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_zeroshot)

    s = sub.add_parser("compare", help="percent table over several report directories")
    s.add_argument("runs", nargs="+")
    s.add_argument("--out")
    s.set_defaults(func=cmd_compare)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except CliError as exc:
        print(f"{exc.name}: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
