"""Batch command-line surface.

Commands: synth, train, evaluate, verify, embed, params. Exit codes are 0
for success (and "genuine" verify decisions), 1 for a "forged" verify
decision, and 2 or higher for errors. Artifact-producing commands echo the
fully resolved config into the output directory before doing any work,
and remove whatever they created if they fail partway.

Heavy imports happen inside functions: the entry point first resolves the
thread count and pins BLAS/OpenMP environment variables, which must occur
before numpy loads for --threads 1 to guarantee determinism.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import shutil
import sys
import os
from pathlib import Path

__all__ = ["main", "build_parser", "dispatch"]

_THREAD_ENV_VARS = ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS")


def _peek_threads(argv: list[str]) -> int:
    """Resolve the thread count from argv/config without package imports."""
    threads = 1
    config_path = None
    for i, arg in enumerate(argv):
        if arg == "--config" and i + 1 < len(argv):
            config_path = argv[i + 1]
        elif arg.startswith("--config="):
            config_path = arg.split("=", 1)[1]
    if config_path:
        parser = configparser.ConfigParser(interpolation=None)
        try:
            parser.read(config_path)
            threads = parser.getint("run", "threads", fallback=threads)
        except (configparser.Error, ValueError):
            pass  # the real parser will report this properly
    for i, arg in enumerate(argv):
        if arg == "--set" and i + 1 < len(argv) and argv[i + 1].startswith("run.threads="):
            try:
                threads = int(argv[i + 1].split("=", 1)[1])
            except ValueError:
                pass
        elif arg == "--threads" and i + 1 < len(argv):
            try:
                threads = int(argv[i + 1])
            except ValueError:
                pass
        elif arg.startswith("--threads="):
            try:
                threads = int(arg.split("=", 1)[1])
            except ValueError:
                pass
    return max(threads, 1)


def _pin_thread_env(threads: int) -> None:
    for var in _THREAD_ENV_VARS:
        os.environ[var] = str(threads)


class _Outputs:
    """Tracks artifacts created by one command for failure cleanup."""

    def __init__(self):
        self.files: list[Path] = []
        self.dirs: list[Path] = []

    def track_file(self, path: Path) -> Path:
        self.files.append(Path(path))
        return Path(path)

    def track_dir(self, path: Path) -> Path:
        path = Path(path)
        if not path.exists():
            self.dirs.append(path)
        return path

    def cleanup(self) -> None:
        for path in reversed(self.files):
            try:
                path.unlink(missing_ok=True)
            except OSError:
                pass
        for path in reversed(self.dirs):
            shutil.rmtree(path, ignore_errors=True)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="wavesig",
        description="Offline signature verification: train, evaluate, and apply "
        "a scattering + embedding model.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", help="INI config file")
        p.add_argument(
            "--set",
            action="append",
            default=[],
            metavar="SECTION.KEY=VALUE",
            help="override any config key (repeatable)",
        )
        p.add_argument("--seed", type=int, help="master random seed")
        p.add_argument("--threads", type=int, help="worker threads; 1 is fully deterministic")
        p.add_argument("-o", "--output-dir", help="directory for artifacts")

    p = sub.add_parser("synth", help="generate a synthetic signature dataset tree")
    common(p)
    p.add_argument("--writers", type=int, help="total writers")
    p.add_argument("--train-writers", type=int, help="writers assigned to the train split")
    p.add_argument("--genuine", type=int, help="genuine signatures per writer")
    p.add_argument("--forged", type=int, help="forgeries per writer")

    p = sub.add_parser("train", help="train the embedding model on a dataset tree")
    common(p)
    p.add_argument("--data-root", help="dataset root directory")
    p.add_argument("--layout", choices=["cedar", "sigcomp-dutch"], help="dataset layout")
    p.add_argument("--epochs", type=int)
    p.add_argument("--learning-rate", type=float)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--margin", type=float)
    p.add_argument("--triplets-per-epoch", type=int)
    p.add_argument("--train-writers", type=int, help="train writers for cedar-style splits")

    p = sub.add_parser("evaluate", help="score test pairs and emit curve reports")
    common(p)
    p.add_argument("--data-root", help="dataset root directory")
    p.add_argument("--layout", choices=["cedar", "sigcomp-dutch"], help="dataset layout")
    p.add_argument("--weights", help="weights file (default: <output-dir>/weights.ssnw)")
    p.add_argument("--eval-cap", type=int, help="max pairs per writer per type")
    p.add_argument("--bins", type=int, help="histogram bins")
    p.add_argument("--train-writers", type=int)

    p = sub.add_parser("verify", help="compare two signature images")
    common(p)
    p.add_argument("first", help="reference signature image")
    p.add_argument("second", help="questioned signature image")
    p.add_argument("--weights", help="weights file")
    p.add_argument("--threshold", type=float, help="accept threshold on the distance score")
    p.add_argument(
        "--summary",
        help="evaluation summary.json supplying eer_threshold when --threshold is absent",
    )

    p = sub.add_parser("embed", help="write embeddings of images as CSV")
    common(p)
    p.add_argument("images", nargs="+", help="image files to embed")
    p.add_argument("--weights", help="weights file")
    p.add_argument("--output", help="CSV destination (default: stdout)")

    p = sub.add_parser("params", help="per-layer and total parameter counts")
    common(p)

    return parser


_FLAG_ADDRESSES = {
    "seed": "run.seed",
    "threads": "run.threads",
    "output_dir": "run.output_dir",
    "data_root": "run.data_root",
    "layout": "run.layout",
    "epochs": "training.epochs",
    "learning_rate": "training.learning_rate",
    "batch_size": "training.batch_size",
    "margin": "training.margin",
    "triplets_per_epoch": "training.triplets_per_epoch",
    "weights": "run.weights",
    "threshold": "run.threshold",
    "eval_cap": "run.eval_cap",
    "bins": "run.bins",
    "genuine": "synth.genuine",
    "forged": "synth.forged",
}


def _collect_overrides(args: argparse.Namespace) -> dict[str, str]:
    overrides: dict[str, str] = {}
    for item in args.set:
        if "=" not in item:
            raise SystemExit(f"wavesig: --set expects SECTION.KEY=VALUE, got {item!r}")
        address, raw = item.split("=", 1)
        overrides[address.strip()] = raw.strip()
    for attr, address in _FLAG_ADDRESSES.items():
        value = getattr(args, attr, None)
        if value is not None:
            overrides[address] = str(value)
    # train-writers routes to the synth section for the synth command only
    tw = getattr(args, "train_writers", None)
    if tw is not None:
        address = "synth.train_writers" if args.command == "synth" else "run.train_writers"
        overrides[address] = str(tw)
    if args.command == "synth" and getattr(args, "writers", None) is not None:
        overrides["synth.writers"] = str(args.writers)
    return overrides


def _echo_config(cfg, outdir: Path, outputs: _Outputs) -> None:
    from .config import render_config

    outputs.track_dir(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    path = outputs.track_file(outdir / "config.resolved.ini")
    path.write_text(render_config(cfg), encoding="utf-8")


def _load_catalog(cfg):
    from .dataset import index_dataset, writer_disjoint_split

    if not cfg.data_root:
        raise FileNotFoundError("no data_root configured; pass --data-root or set run.data_root")
    catalog = index_dataset(cfg.data_root, cfg.layout)
    for line in catalog.warnings:
        print(f"warning: {line}", file=sys.stderr)
    if catalog.skipped:
        print(f"warning: skipped {len(catalog.skipped)} unparseable files", file=sys.stderr)
        for path in catalog.skipped[:10]:
            print(f"  skipped: {path}", file=sys.stderr)
    if cfg.layout == "cedar":
        catalog = writer_disjoint_split(catalog, cfg.train_writers, cfg.seed)
    return catalog


def _resolve_weights_path(cfg) -> Path:
    if cfg.weights:
        return Path(cfg.weights)
    default = Path(cfg.output_dir) / "weights.ssnw"
    if default.exists():
        return default
    raise FileNotFoundError(
        "no weights file: pass --weights or train into the output directory first"
    )


def _cmd_synth(cfg, args, outputs: _Outputs) -> int:
    from .dataset import synthesize_dataset, write_dataset_tree, writer_disjoint_split

    outdir = Path(cfg.output_dir)
    _echo_config(cfg, outdir, outputs)
    catalog = synthesize_dataset(
        cfg.synth_writers, cfg.synth_genuine, cfg.synth_forged, cfg.seed
    )
    catalog = writer_disjoint_split(catalog, cfg.synth_train_writers, cfg.seed)
    outputs.track_dir(outdir / "train")
    outputs.track_dir(outdir / "test")
    outputs.track_file(outdir / "manifest.txt")
    write_dataset_tree(catalog, outdir)
    counts = catalog.counts()
    print(
        f"synthesized {counts['writers']} writers "
        f"({len(catalog.writer_ids('train'))} train / {len(catalog.writer_ids('test'))} test), "
        f"{counts['genuine']} genuine + {counts['forged']} forged images -> {outdir}"
    )
    return 0


def _cmd_train(cfg, args, outputs: _Outputs) -> int:
    from .training import train

    outdir = Path(cfg.output_dir)
    _echo_config(cfg, outdir, outputs)
    catalog = _load_catalog(cfg)
    weights_path = outputs.track_file(outdir / "weights.ssnw")
    log_path = outputs.track_file(outdir / "train_log.txt")
    with open(log_path, "w", encoding="utf-8") as log_fh:

        def log(line: str) -> None:
            print(line)
            log_fh.write(line + "\n")

        weights, report = train(
            catalog,
            cfg.model_config(),
            cfg.train_config(),
            checkpoint_path=weights_path,
            log=log,
        )
    print(f"trained {len(report.epochs)} epochs in {report.wall_time:.1f}s -> {weights_path}")
    return 0


def _cmd_evaluate(cfg, args, outputs: _Outputs) -> int:
    from .dataset import generate_eval_pairs
    from .evaluation import evaluate, score_pairs, write_report_files
    from .model import load_weights
    from .scattering import build_filter_bank

    weights = load_weights(_resolve_weights_path(cfg))
    outdir = Path(cfg.output_dir)
    _echo_config(cfg, outdir, outputs)
    catalog = _load_catalog(cfg)
    pairs = generate_eval_pairs(catalog, per_writer_cap=cfg.eval_cap, seed=cfg.seed)
    bank = build_filter_bank(weights.config.scattering)
    scored = score_pairs(pairs, weights, bank)
    report = evaluate(scored, bins=cfg.bins)
    for path in write_report_files(report, outdir):
        outputs.track_file(path)
    print(
        f"evaluated {report.n_genuine_pairs} genuine + {report.n_forgery_pairs} forgery pairs: "
        f"auc={report.auc:.4f} aupr={report.aupr:.4f} "
        f"eer={report.eer:.4f} eer_threshold={report.eer_threshold:.4f}"
    )
    return 0


def _cmd_verify(cfg, args, outputs: _Outputs) -> int:
    import json

    from .evaluation import verify
    from .model import load_weights
    from .scattering import build_filter_bank

    threshold = cfg.threshold
    if threshold is None:
        summary_path = Path(args.summary) if args.summary else Path(cfg.output_dir) / "summary.json"
        if not summary_path.exists():
            raise FileNotFoundError(
                "no threshold: pass --threshold, or point --summary at an "
                "evaluation summary.json with an eer_threshold"
            )
        threshold = float(json.loads(summary_path.read_text())["eer_threshold"])
    weights = load_weights(_resolve_weights_path(cfg))
    bank = build_filter_bank(weights.config.scattering)
    decision, score = verify(args.first, args.second, weights, bank, threshold)
    print(f"{decision} {score:.6f}")
    return 0 if decision == "genuine" else 1


def _cmd_embed(cfg, args, outputs: _Outputs) -> int:
    from .dataset import load_image
    from .model import embed, load_weights
    from .scattering import build_filter_bank

    weights = load_weights(_resolve_weights_path(cfg))
    bank = build_filter_bank(weights.config.scattering)
    rows = []
    for image_path in args.images:
        e = embed(load_image(image_path), weights, bank, source_id=str(image_path))
        rows.append([image_path] + [f"{v:.8g}" for v in e.values])
    if args.output:
        out_path = outputs.track_file(Path(args.output))
        with open(out_path, "w", newline="", encoding="utf-8") as fh:
            csv.writer(fh).writerows(rows)
        print(f"wrote {len(rows)} embeddings -> {out_path}")
    else:
        csv.writer(sys.stdout).writerows(rows)
    return 0


def _cmd_params(cfg, args, outputs: _Outputs) -> int:
    from .model import count_parameters, init_model, parameter_table

    weights = init_model(cfg.model_config(), cfg.seed)
    print(f"{'layer':<16} {'shape':<20} {'params':>10}")
    for name, shape, count in parameter_table(weights):
        print(f"{name:<16} {str(shape):<20} {count:>10}")
    print(f"{'total':<16} {'':<20} {count_parameters(weights):>10}")
    return 0


_COMMANDS = {
    "synth": _cmd_synth,
    "train": _cmd_train,
    "evaluate": _cmd_evaluate,
    "verify": _cmd_verify,
    "embed": _cmd_embed,
    "params": _cmd_params,
}


def dispatch(command: str, cfg, args) -> int:
    outputs = _Outputs()
    try:
        return _COMMANDS[command](cfg, args, outputs)
    except Exception:
        outputs.cleanup()
        raise


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:]) if argv is None else list(argv)
    _pin_thread_env(_peek_threads(argv))
    parser = build_parser()
    args = parser.parse_args(argv)

    from .config import ConfigError, parse_config

    try:
        overrides = _collect_overrides(args)
        cfg = parse_config(args.config, overrides)
    except ConfigError as exc:
        print(f"wavesig: {exc}", file=sys.stderr)
        return 2
    try:
        return dispatch(args.command, cfg, args)
    except Exception as exc:
        print(f"wavesig: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
