"""Command-line entry point: ``hwgail <subcommand> [flags]``.

Exit status: 0 success, 1 usage error, 2 data or format error, 3 training
failure.  Settings resolve as command-line flags over config-file values
over built-in defaults, and every command writes ``manifest.json`` with the
resolved settings into its output directory.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from dataclasses import asdict, fields
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np
import yaml

from hwgail import __version__
from hwgail.data import Dataset, FormatError, build_dataset, load_canonical, load_dataset, parse_unipen_subset, write_canonical
from hwgail.evaluation import generate_batch, qmap, render, render_trajectory_grid, write_qmap
from hwgail.experiment import (
    EvalConfig,
    SmokeConfig,
    compare_curvature,
    run_smoke,
    set_threads,
    smoke_config_dict,
)
from hwgail.gail import TrainingConfig, TrainingError, train_gail
from hwgail.baseline import train_predictor
from hwgail.networks import load_params
from hwgail.trajectory import Trajectory, make_state

logger = logging.getLogger("hwgail")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_TRAINING = 0, 1, 2, 3


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: error: {message}\n{self.format_usage()}")


# ---------------------------------------------------------------------------
# helpers


def file_fingerprint(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()[:16]


def read_config(path) -> dict:
    if path is None:
        return {}
    try:
        with open(path) as f:
            d = yaml.safe_load(f) or {}
    except OSError as e:
        raise DataError(f"cannot read config {path}: {e}") from e
    except yaml.YAMLError as e:
        raise DataError(f"malformed config {path}: {e}") from e
    if not isinstance(d, dict):
        raise DataError(f"config {path} must be a mapping")
    return d


def parse_assignments(items: Optional[Sequence[str]]) -> dict:
    """``key=value`` flags; values are parsed as YAML scalars."""
    out = {}
    for item in items or []:
        if "=" not in item:
            raise UsageError(f"expected key=value, got {item!r}")
        k, v = item.split("=", 1)
        out[k.strip()] = yaml.safe_load(v)
    return out


def resolve_training(file_cfg: dict, sets: dict, seed: Optional[int], steps: Optional[int],
                     horizon: int) -> TrainingConfig:
    merged = dict(file_cfg.get("training", {}) or {})
    merged.update(sets)
    if seed is not None:
        merged["seed"] = seed
    if steps is not None:
        merged["total_steps"] = steps
    merged.setdefault("horizon", horizon)
    try:
        return TrainingConfig.from_dict(merged)
    except (TypeError, ValueError) as e:
        raise UsageError(f"invalid training config: {e}") from e


def resolve_eval(file_cfg: dict, args) -> EvalConfig:
    d = dict(file_cfg.get("evaluation", {}) or {})
    for name in ("t0", "delta_max", "bins", "kappa_max", "grid"):
        v = getattr(args, name, None)
        if v is not None:
            d[name] = v
    if getattr(args, "t_range", None) is not None:
        d["t_range"] = args.t_range
    known = {f.name for f in fields(EvalConfig)}
    if set(d) - known:
        raise UsageError(f"unknown evaluation keys: {sorted(set(d) - known)}")
    return EvalConfig(**d)


def write_manifest(out_dir: Path, command: str, argv: Sequence[str], config: dict, seeds: dict,
                   inputs: Dict[str, str]) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = {
        "tool": "hwgail",
        "version": __version__,
        "command": command,
        "argv": list(argv),
        "config": config,
        "seeds": seeds,
        "inputs": inputs,
    }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True, default=str) + "\n")


def load_data(path) -> Dataset:
    try:
        return load_dataset(path)
    except FileNotFoundError as e:
        raise DataError(f"no such dataset file: {path}") from e
    except (FormatError, ValueError, OSError) as e:
        raise DataError(str(e)) from e


def latest_checkpoint(run_dir: Path, step: Optional[int] = None) -> Path:
    ck = run_dir / "checkpoints"
    if step is not None:
        path = ck / f"step_{step:08d}"
    else:
        try:
            path = ck / (ck / "latest").read_text().strip()
        except OSError as e:
            raise DataError(f"{run_dir} has no checkpoints") from e
    if not path.is_dir():
        raise DataError(f"checkpoint directory {path} missing")
    return path


def load_network(ckdir: Path, name: str):
    path = ckdir / f"{name}.npz"
    try:
        return load_params(path)
    except FileNotFoundError as e:
        raise DataError(f"missing checkpoint file {path}") from e
    except (ValueError, KeyError, OSError) as e:
        raise DataError(f"unreadable checkpoint {path}: {e}") from e


# ---------------------------------------------------------------------------
# subcommands


def cmd_ingest(args, file_cfg, argv) -> int:
    d = dict(file_cfg.get("ingest", {}) or {})
    for name in ("horizon", "split", "seed", "workers", "levels"):
        v = getattr(args, name)
        if v is not None:
            d[name] = v
    horizon, split = int(d.get("horizon", 50)), float(d.get("split", 0.8))
    seed, workers = int(d.get("seed", 0)), int(d.get("workers", 1))
    levels = d.get("levels")
    src = Path(args.input)
    try:
        if args.format == "unipen":
            raw = parse_unipen_subset(src.read_text(errors="replace"), levels=levels)
        else:
            raw = load_canonical(src)
    except FileNotFoundError as e:
        raise DataError(f"no such input file: {src}") from e
    except (FormatError, OSError) as e:
        raise DataError(str(e)) from e
    if not raw:
        raise DataError(f"{src} contains no samples")
    try:
        train, test = build_dataset(raw, horizon, split, seed, workers)
    except ValueError as e:
        raise UsageError(str(e)) from e
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_canonical(train, out / "train.jsonl")
    write_canonical(test, out / "test.jsonl")
    write_manifest(out, "ingest", argv,
                   {"format": args.format, "horizon": horizon, "split": split, "seed": seed,
                    "workers": workers, "levels": levels},
                   {"split": seed}, {str(src): file_fingerprint(src)})
    print(f"train {len(train)}  test {len(test)}  dropped {train.dropped}")
    return EXIT_OK


def _train(args, file_cfg, argv, kind: str) -> int:
    data = load_data(args.data)
    cfg = resolve_training(file_cfg, parse_assignments(args.set), args.seed, args.steps, data.horizon)
    out = Path(args.out)
    write_manifest(out, f"train-{kind}", argv, asdict(cfg), {"training": cfg.seed},
                   {str(args.data): data.fingerprint()})
    try:
        if kind == "gail":
            res = train_gail(cfg, data, out)
            last = res.metrics[-1] if res.metrics else {}
        else:
            _, curve = train_predictor(cfg, data, out)
            last = {"prediction_loss": curve[-1]} if curve else {}
    except ValueError as e:
        raise DataError(str(e)) from e
    print(json.dumps(last))
    return EXIT_OK


def cmd_train_gail(args, file_cfg, argv) -> int:
    return _train(args, file_cfg, argv, "gail")


def cmd_train_baseline(args, file_cfg, argv) -> int:
    return _train(args, file_cfg, argv, "baseline")


def _run_manifest(run_dir: Path) -> dict:
    try:
        return json.loads((run_dir / "run_manifest.json").read_text())
    except (OSError, ValueError) as e:
        raise DataError(f"{run_dir} is not a training run directory") from e


def cmd_generate(args, file_cfg, argv) -> int:
    ev = resolve_eval(file_cfg, args)
    run = Path(args.run)
    kind = _run_manifest(run)["model_kind"]
    ckdir = latest_checkpoint(run, args.step)
    actor, meta = load_network(ckdir, "actor" if kind == "gail" else "predictor")
    data = load_data(args.data)
    if data.horizon != actor.spec.sequence_length:
        raise DataError(f"dataset horizon {data.horizon} != model horizon {actor.spec.sequence_length}")
    if not 1 <= ev.t0 < data.horizon:
        raise UsageError(f"t0 must lie in [1, {data.horizon - 1}]")
    pts = generate_batch(actor, data.points, ev.t0)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    gen = Dataset(data.horizon, [Trajectory(p, s.label, s.id) for p, s in zip(pts, data.samples)],
                  split=f"generated-{kind}", seed=data.seed)
    write_canonical(gen, out / "generated.jsonl")
    if not args.no_images:
        render_trajectory_grid(list(pts[:15]), out / "generated.png", prefix_len=ev.t0)
    write_manifest(out, "generate", argv, {"evaluation": asdict(ev), "checkpoint": str(ckdir), "model_kind": kind},
                   {"training": meta.get("seed")},
                   {str(args.data): data.fingerprint(), str(ckdir): file_fingerprint(ckdir / f"{'actor' if kind == 'gail' else 'predictor'}.npz")})
    print(f"generated {len(gen)} trajectories from t0={ev.t0}")
    return EXIT_OK


def _named_paths(items: Sequence[str]) -> Dict[str, Path]:
    out = {}
    for item in items:
        if "=" not in item:
            raise UsageError(f"expected NAME=PATH, got {item!r}")
        name, path = item.split("=", 1)
        if not name or name in out:
            raise UsageError(f"bad or duplicate set name {name!r}")
        out[name] = Path(path)
    return out


def cmd_eval_curvature(args, file_cfg, argv) -> int:
    ev = resolve_eval(file_cfg, args)
    ref_name = args.reference_name
    paths = {ref_name: Path(args.reference)}
    for name, p in _named_paths(args.candidate or []).items():
        if name == ref_name:
            raise UsageError(f"candidate name {name!r} clashes with the reference")
        paths[name] = p
    datasets = {name: load_data(p) for name, p in paths.items()}
    horizons = {d.horizon for d in datasets.values()}
    if len(horizons) != 1:
        raise DataError(f"trajectory sets have different horizons: {sorted(horizons)}")
    if ev.t_range[1] > horizons.pop():
        raise UsageError(f"t_range {ev.t_range} exceeds the trajectory length")
    for name, d in datasets.items():
        if len(d) == 0:
            raise DataError(f"set {name!r} is empty")
    out = Path(args.out)
    report = compare_curvature({n: d.points for n, d in datasets.items()}, ref_name, out, ev,
                               render_images=not args.no_images)
    write_manifest(out, "eval-curvature", argv, {"evaluation": asdict(ev), "reference": ref_name},
                   {}, {str(p): datasets[n].fingerprint() for n, p in paths.items()})
    for name, dist in report["distance"].items():
        print(f"{name}\tdistance {dist:.6f}\tmode(delta={report['report_delta']}) {report['mode_bin'][name]}")
    return EXIT_OK


def cmd_qmap(args, file_cfg, argv) -> int:
    ev = resolve_eval(file_cfg, args)
    run = Path(args.run)
    manifest = _run_manifest(run)
    if manifest.get("model_kind") != "gail":
        raise DataError("Q-maps need a GAIL run (critic and discriminator)")
    ckdir = latest_checkpoint(run, args.step)
    critic, _ = load_network(ckdir, "critic")
    disc, _ = load_network(ckdir, "discriminator")
    gamma = args.gamma if args.gamma is not None else float(manifest["config"]["gamma"])
    data = load_data(args.data)
    length = args.length if args.length is not None else ev.t0
    if not 1 <= length < data.horizon:
        raise UsageError(f"prefix length must lie in [1, {data.horizon - 1}]")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    indices = args.index or [0]
    for i in indices:
        if not 0 <= i < len(data):
            raise UsageError(f"sample index {i} out of range 0..{len(data) - 1}")
        state = make_state(data.samples[i].points[:length], data.horizon)
        q = qmap(critic, disc, state, ev.grid, gamma)
        write_qmap(q, out / f"qmap_{i}.csv")
        if not args.no_images:
            render(q, out / f"qmap_{i}.png")
    write_manifest(out, "qmap", argv,
                   {"evaluation": asdict(ev), "gamma": gamma, "length": length, "indices": indices,
                    "checkpoint": str(ckdir)},
                   {"training": manifest.get("seed")},
                   {str(args.data): data.fingerprint(), str(ckdir / "critic.npz"): file_fingerprint(ckdir / "critic.npz"),
                    str(ckdir / "discriminator.npz"): file_fingerprint(ckdir / "discriminator.npz")})
    print(f"wrote {len(indices)} Q-map(s) at grid {ev.grid}")
    return EXIT_OK


def cmd_smoke_test(args, file_cfg, argv) -> int:
    d = dict(file_cfg.get("smoke", {}) or {})
    if "training" in file_cfg:
        d["training"] = {**d.get("training", {}), **file_cfg["training"]}
    if "evaluation" in file_cfg:
        d["evaluation"] = {**d.get("evaluation", {}), **file_cfg["evaluation"]}
    training = dict(d.get("training", {}))
    training.update(parse_assignments(args.set))
    if args.seed is not None:
        training["seed"] = args.seed
    if args.steps is not None:
        training["total_steps"] = args.steps
    d["training"] = training
    if args.baseline_steps is not None:
        d["baseline"] = {**(d.get("baseline") or {}), "total_steps": args.baseline_steps}
    if args.n_train is not None:
        d["n_train"] = args.n_train
    try:
        cfg = SmokeConfig.from_dict(d)
    except (TypeError, ValueError) as e:
        raise UsageError(f"invalid smoke config: {e}") from e
    out = Path(args.out)
    write_manifest(out, "smoke-test", argv, smoke_config_dict(cfg),
                   {"training": cfg.training.seed, "data": cfg.data_seed}, {})
    rep = run_smoke(cfg, out, render_images=not args.no_images)
    print(f"untrained distance {rep.distance_untrained:.4f}  trained {rep.distance_trained:.4f}  "
          f"reduction {rep.reduction:.1%}  mode bin {rep.mode_bin_trained}  "
          f"{'PASS' if rep.passed else 'FAIL'}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser


def _common(p: argparse.ArgumentParser, out_required: bool = True) -> None:
    p.add_argument("--config", help="YAML (or JSON) config file")
    p.add_argument("--out", required=out_required, help="output directory")
    p.add_argument("--seed", type=int)
    p.add_argument("--workers", type=int, help="worker processes; 1 is serial and bit-reproducible")
    p.add_argument("-v", "--verbose", action="store_true")


def _eval_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--t0", type=int, help="expert prefix length")
    p.add_argument("--t-range", type=int, nargs=2, metavar=("LO", "HI"), dest="t_range")
    p.add_argument("--delta-max", type=int, dest="delta_max")
    p.add_argument("--bins", type=int)
    p.add_argument("--kappa-max", type=float, dest="kappa_max")
    p.add_argument("--grid", type=int)
    p.add_argument("--no-images", action="store_true", dest="no_images")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="hwgail", description="Model-based GAIL for online handwriting trajectories.")
    parser.add_argument("--version", action="version", version=f"hwgail {__version__}")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("ingest", help="UNIPEN or canonical samples to train/test dataset files")
    _common(p)
    p.add_argument("--format", choices=("unipen", "canonical"), required=True)
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--horizon", type=int)
    p.add_argument("--split", type=float, help="train fraction")
    p.add_argument("--levels", nargs="+", help="UNIPEN segment levels to keep")
    p.set_defaults(func=cmd_ingest)

    for name, func in (("train-gail", cmd_train_gail), ("train-baseline", cmd_train_baseline)):
        p = sub.add_parser(name, help=f"train the {'GAIL networks' if name == 'train-gail' else 'next-point predictor'}")
        _common(p)
        p.add_argument("--data", required=True, help="dataset file")
        p.add_argument("--steps", type=int)
        p.add_argument("--set", nargs="+", metavar="KEY=VALUE", help="training config overrides")
        p.set_defaults(func=func)

    p = sub.add_parser("generate", help="complete expert prefixes with a trained model")
    _common(p)
    _eval_flags(p)
    p.add_argument("--run", required=True, help="training output directory")
    p.add_argument("--step", type=int, help="checkpoint step (default latest)")
    p.add_argument("--data", required=True)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("eval-curvature", help="curvature histograms and distances between trajectory sets")
    _common(p)
    _eval_flags(p)
    p.add_argument("--reference", required=True, help="reference dataset file")
    p.add_argument("--reference-name", default="expert", dest="reference_name")
    p.add_argument("--candidate", nargs="+", metavar="NAME=PATH")
    p.set_defaults(func=cmd_eval_curvature)

    p = sub.add_parser("qmap", help="Q-value maps over all next positions")
    _common(p)
    _eval_flags(p)
    p.add_argument("--run", required=True)
    p.add_argument("--step", type=int)
    p.add_argument("--data", required=True)
    p.add_argument("--index", type=int, nargs="+", help="sample indices")
    p.add_argument("--length", type=int, help="prefix length (default t0)")
    p.add_argument("--gamma", type=float)
    p.set_defaults(func=cmd_qmap)

    p = sub.add_parser("smoke-test", help="synthetic-expert acceptance run")
    _common(p)
    p.add_argument("--steps", type=int)
    p.add_argument("--baseline-steps", type=int, dest="baseline_steps")
    p.add_argument("--n-train", type=int, dest="n_train")
    p.add_argument("--set", nargs="+", metavar="KEY=VALUE", help="training config overrides")
    p.add_argument("--no-images", action="store_true", dest="no_images")
    p.set_defaults(func=cmd_smoke_test)
    return parser


def run_cli(argv: Optional[Sequence[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        try:
            args = parser.parse_args(argv)
        except SystemExit as e:  # --help / --version
            return EXIT_OK if not e.code else EXIT_USAGE
        if args.command is None:
            raise UsageError(parser.format_usage().rstrip() + "\nhwgail: error: a subcommand is required")
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(asctime)s %(name)s %(levelname)s %(message)s")
        file_cfg = read_config(args.config)
        workers = args.workers if args.workers is not None else int(file_cfg.get("workers", 1))
        if workers < 1:
            raise UsageError("--workers must be at least 1")
        args.workers = workers
        set_threads(workers)
        return args.func(args, file_cfg, argv)
    except UsageError as e:
        print(str(e).rstrip(), file=sys.stderr)
        return EXIT_USAGE
    except DataError as e:
        print(f"hwgail: data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except TrainingError as e:
        print(f"hwgail: training failed: {e}", file=sys.stderr)
        return EXIT_TRAINING


def main() -> None:
    sys.exit(run_cli())


if __name__ == "__main__":
    main()
