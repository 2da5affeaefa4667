"""Command-line front end.

Every subcommand resolves a ``RunConfig`` from defaults, an optional JSON
file (``--config``) and flag overrides, in that order, and writes the
resolved JSON to ``<out>/config.json`` next to its outputs. Re-running with
``--config <out>/config.json`` reproduces the outputs byte for byte.

Exit codes: 0 success, 1 usage or configuration error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import os
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

from .anticipate import (DEFAULT_FRACTIONS, AnticipationModels, anticipate, evaluate_curve,
                         k_sweep, write_curve_csv, write_sweep_csv)
from .data import (CLASSES, SynthConfig, build_gen_samples, export_dynamic_image, load_dataset,
                   load_frames, make_dataset, observed_length, save_dataset)
from .errors import InvalidConfigError, MotionRankError
from .formats import load_params, save_params, write_dimg
from .gradsuite import run_suite
from .models import ClassifierConfig, GeneratorConfig
from .rankpool import dynamic_image_sequence
from .training import TrainConfig, train_generator, train_teacher, write_loss_csv

logger = logging.getLogger("motionrank")

SEED_ENV = "MOTIONRANK_SEED"
COMMANDS = ("synth-data", "dynimg", "train-teacher", "train-generator", "anticipate",
            "evaluate", "k-sweep", "gradcheck")


class UsageError(Exception):
    pass


@dataclass
class EvalConfig:
    window: int = 10
    stride: int = 1
    k: int = 0
    k_max: int = 10
    fraction: float = 0.2
    # prefix seen by the single-video ``anticipate`` command
    observe_fraction: float = 1.0
    fractions: Tuple[float, ...] = DEFAULT_FRACTIONS
    static_every: int = 1
    split: str = "test"
    jobs: int = 1


@dataclass
class ModelConfig:
    generator_maps: Tuple[int, ...] = (16, 32)
    classifier_channels: Tuple[int, ...] = (8, 16)


@dataclass
class RunConfig:
    """Everything a run depends on. Section seeds follow the master ``seed``."""
    command: str = ""
    seed: int = 0
    n_per_class: int = 10
    teacher_kind: str = "dynamic"
    synth: SynthConfig = field(default_factory=SynthConfig)
    teacher: TrainConfig = field(default_factory=lambda: TrainConfig(lr=1e-2))
    generator: TrainConfig = field(default_factory=lambda: TrainConfig(lr=3e-3))
    eval: EvalConfig = field(default_factory=EvalConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    paths: Dict[str, Optional[str]] = field(default_factory=lambda: {
        "out": None, "data": None, "frames": None, "video": None, "teacher": None,
        "static": None, "dynamic": None, "generator": None})

    def to_dict(self) -> dict:
        d = asdict(self)
        for section in ("synth", "teacher", "generator"):
            d[section].pop("seed")
        return d

    def synth_config(self) -> SynthConfig:
        return dataclasses.replace(self.synth, seed=self.seed)

    def teacher_config(self) -> TrainConfig:
        return dataclasses.replace(self.teacher, seed=self.seed)

    def generator_config(self) -> TrainConfig:
        return dataclasses.replace(self.generator, seed=self.seed)


def _tupleize(value):
    if isinstance(value, list):
        return tuple(_tupleize(v) for v in value)
    return value


def _coerce(current, value, key: str):
    """Give ``value`` the type of the field's current value."""
    if isinstance(current, bool):
        if isinstance(value, str):
            if value.lower() in ("1", "true", "yes"):
                return True
            if value.lower() in ("0", "false", "no"):
                return False
        if isinstance(value, bool):
            return value
    elif isinstance(current, int):
        if isinstance(value, int) and not isinstance(value, bool):
            return value
        if isinstance(value, str) and value.lstrip("-").isdigit():
            return int(value)
    elif isinstance(current, float):
        if isinstance(value, (int, float)) and not isinstance(value, bool):
            return float(value)
        if isinstance(value, str):
            try:
                return float(value)
            except ValueError:
                pass
    elif isinstance(current, tuple):
        if isinstance(value, str):
            value = [_parse_scalar(v) for v in value.split(",") if v.strip()]
        if isinstance(value, (list, tuple)):
            template = current[0] if current else None
            return tuple(_coerce(template, v, key) if template is not None else v for v in value)
    elif isinstance(current, str):
        if isinstance(value, str):
            return value
    elif current is None:
        return _tupleize(value)
    raise InvalidConfigError(f"{key}: cannot use {value!r} for a field of type "
                             f"{type(current).__name__}")


def _parse_scalar(text: str):
    text = text.strip()
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _set_key(cfg: RunConfig, key: str, value) -> RunConfig:
    parts = key.split(".")
    if len(parts) == 1:
        name = parts[0]
        if name not in {f.name for f in dataclasses.fields(RunConfig)} or name == "paths":
            raise InvalidConfigError(f"unknown config key {key!r}")
        if not dataclasses.is_dataclass(getattr(cfg, name)):
            return dataclasses.replace(cfg, **{name: _coerce(getattr(cfg, name), value, key)})
        if not isinstance(value, dict):
            raise InvalidConfigError(f"{key}: expected an object")
        for sub, v in value.items():
            cfg = _set_key(cfg, f"{name}.{sub}", v)
        return cfg
    if len(parts) != 2:
        raise InvalidConfigError(f"unknown config key {key!r}")
    section, name = parts
    if section == "paths":
        if name not in cfg.paths:
            raise InvalidConfigError(f"unknown path key {key!r}")
        return dataclasses.replace(cfg, paths={**cfg.paths, name: None if value is None else str(value)})
    obj = getattr(cfg, section, None)
    if not dataclasses.is_dataclass(obj) or section == "command":
        raise InvalidConfigError(f"unknown config section {section!r}")
    names = {f.name for f in dataclasses.fields(obj)}
    if name not in names:
        raise InvalidConfigError(f"unknown config key {key!r}")
    if name == "seed":
        raise InvalidConfigError(f"{key}: section seeds follow the top-level 'seed'")
    new = dataclasses.replace(obj, **{name: _coerce(getattr(obj, name), value, key)})
    return dataclasses.replace(cfg, **{section: new})


def load_config_file(path) -> dict:
    try:
        data = json.loads(Path(path).read_text())
    except OSError as exc:
        raise InvalidConfigError(f"{path}: cannot read config ({exc})") from exc
    except json.JSONDecodeError as exc:
        raise InvalidConfigError(f"{path}: invalid JSON ({exc})") from exc
    if not isinstance(data, dict):
        raise InvalidConfigError(f"{path}: config must be a JSON object")
    return data


def resolve_config(command: str, file_values: Optional[dict],
                   overrides: Sequence[Tuple[str, object]]) -> RunConfig:
    """Defaults, then environment seed, then file values, then flags."""
    cfg = RunConfig()
    env_seed = os.environ.get(SEED_ENV)
    if env_seed is not None:
        try:
            cfg = dataclasses.replace(cfg, seed=int(env_seed))
        except ValueError as exc:
            raise InvalidConfigError(f"{SEED_ENV}={env_seed!r} is not an integer") from exc
    for key, value in (file_values or {}).items():
        if key == "command":
            continue
        if key == "paths":
            if not isinstance(value, dict):
                raise InvalidConfigError("paths: expected an object")
            for name, p in value.items():
                cfg = _set_key(cfg, f"paths.{name}", p)
            continue
        cfg = _set_key(cfg, key, value)
    for key, value in overrides:
        cfg = _set_key(cfg, key, value)
    cfg = dataclasses.replace(cfg, command=command)
    _validate(cfg)
    return cfg


def _validate(cfg: RunConfig) -> None:
    cfg.synth_config().validate(cfg.eval.window if cfg.command == "synth-data" else 1)
    cfg.teacher_config().validate(generator=False)
    cfg.generator_config().validate(generator=True)
    ev = cfg.eval
    if ev.window < 1 or ev.stride < 1 or ev.k < 0 or ev.k_max < 0 or ev.static_every < 1:
        raise InvalidConfigError(f"bad evaluation settings {ev}")
    if ev.jobs < 1:
        raise InvalidConfigError("jobs must be >= 1")
    for name in ("fraction", "observe_fraction"):
        if not 0 < getattr(ev, name) <= 1:
            raise InvalidConfigError(f"{name} must be in (0, 1], got {getattr(ev, name)}")
    if ev.split not in ("train", "val", "test"):
        raise InvalidConfigError(f"unknown split {ev.split!r}")
    if cfg.teacher_kind not in ("static", "dynamic"):
        raise InvalidConfigError(f"teacher_kind must be static or dynamic, got {cfg.teacher_kind!r}")
    if cfg.n_per_class < 3:
        raise InvalidConfigError("n_per_class must be >= 3")


def parse_fractions(text: str) -> Tuple[float, ...]:
    """``"0.1..1.0"`` (step 0.1, or ``"a..b:step"``) or a comma list."""
    try:
        if ".." in text:
            span, _, step_txt = text.partition(":")
            lo, hi = (float(x) for x in span.split(".."))
            step = float(step_txt) if step_txt else 0.1
            if step <= 0 or hi < lo:
                raise ValueError
            n = int(round((hi - lo) / step)) + 1
            return tuple(round(lo + i * step, 10) for i in range(n))
        return tuple(float(x) for x in text.split(",") if x.strip())
    except ValueError as exc:
        raise UsageError(f"cannot parse fractions {text!r}") from exc


# --------------------------------------------------------------------------
# argument parsing


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.format_help()}\n{self.prog}: error: {message}")


# flag dest -> config key; values left as None are not overrides
FLAG_KEYS = {
    "seed": "seed", "jobs": "eval.jobs", "window": "eval.window", "stride": "eval.stride",
    "k": "eval.k", "k_max": "eval.k_max", "fraction": "eval.fraction",
    "fractions": "eval.fractions", "split": "eval.split", "static_every": "eval.static_every",
    "n_per_class": "n_per_class", "frames_per_video": "synth.frames_per_video",
    "noise": "synth.noise", "kind": "teacher_kind", "losses": "generator.losses_enabled",
    "out": "paths.out", "data": "paths.data", "frames": "paths.frames", "video": "paths.video",
    "teacher": "paths.teacher", "static": "paths.static", "dynamic": "paths.dynamic",
    "generator": "paths.generator",
}
# flags whose target section depends on the subcommand
TRAIN_FLAGS = ("epochs", "lr", "batch_size")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="motionrank", description="Dynamic-image action anticipation toolkit.")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)

    def common(p):
        p.add_argument("--config", help="JSON run config; flags override its values")
        p.add_argument("--out", help="output directory (required except for gradcheck)")
        p.add_argument("--seed", type=int, help=f"master seed (default ${SEED_ENV} or 0)")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override any config field, e.g. synth.noise=0.1")
        p.add_argument("-v", "--verbose", action="store_true")

    def windows(p):
        p.add_argument("--window", type=int, help="frames per dynamic image (T)")
        p.add_argument("--stride", type=int)

    def training(p):
        p.add_argument("--epochs", type=int)
        p.add_argument("--lr", type=float)
        p.add_argument("--batch-size", type=int)

    def models(p):
        p.add_argument("--static", help="static-stream classifier checkpoint")
        p.add_argument("--dynamic", help="dynamic-stream classifier checkpoint")
        p.add_argument("--generator", help="generator checkpoint")

    p = sub.add_parser("synth-data", help="build and save a synthetic dataset")
    common(p)
    p.add_argument("--n-per-class", type=int)
    p.add_argument("--frames-per-video", type=int)
    p.add_argument("--noise", type=float)

    p = sub.add_parser("dynimg", help="dynamic images of a frame directory")
    common(p)
    p.add_argument("--frames", help="directory of frame_NNNNNN.png images")
    windows(p)
    p.add_argument("--png", action="store_true", help="also write normalised PNG previews")

    p = sub.add_parser("train-teacher", help="train a static or dynamic classifier")
    common(p)
    p.add_argument("--data", help="dataset directory written by synth-data")
    p.add_argument("--kind", choices=("static", "dynamic"))
    windows(p)
    training(p)

    p = sub.add_parser("train-generator", help="train the next-dynamic-image generator")
    common(p)
    p.add_argument("--data")
    p.add_argument("--teacher", help="frozen dynamic classifier for the classification loss")
    p.add_argument("--losses", help="comma list from dl,sl,cl")
    windows(p)
    training(p)

    p = sub.add_parser("anticipate", help="classify one partially observed video")
    common(p)
    p.add_argument("--video", help="frame directory")
    p.add_argument("--k", type=int, help="generated dynamic images")
    p.add_argument("--fraction", type=float, help="observe only this fraction of the video")
    windows(p)
    models(p)

    p = sub.add_parser("evaluate", help="accuracy versus observed fraction")
    common(p)
    p.add_argument("--data")
    p.add_argument("--k", type=int)
    p.add_argument("--fractions", type=parse_fractions, help="e.g. 0.1..1.0 or 0.2,0.5")
    p.add_argument("--split", choices=("train", "val", "test"))
    p.add_argument("--jobs", type=int)
    windows(p)
    models(p)

    p = sub.add_parser("k-sweep", help="accuracy versus number of generated images")
    common(p)
    p.add_argument("--data")
    p.add_argument("--k-max", type=int)
    p.add_argument("--fraction", type=float)
    p.add_argument("--split", choices=("train", "val", "test"))
    p.add_argument("--jobs", type=int)
    windows(p)
    models(p)

    p = sub.add_parser("gradcheck", help="finite-difference gradient suite")
    common(p)
    p.add_argument("--eps", type=float, default=1e-3)
    return parser


def _overrides(args: argparse.Namespace) -> List[Tuple[str, object]]:
    out = []
    for dest, key in FLAG_KEYS.items():
        if args.command == "anticipate" and dest == "fraction":
            key = "eval.observe_fraction"
        value = getattr(args, dest, None)
        if value is not None:
            if dest in ("out", "data", "frames", "video", "teacher", "static", "dynamic", "generator"):
                value = str(value)
            out.append((key, value))
    section = "generator" if args.command == "train-generator" else "teacher"
    for dest in TRAIN_FLAGS:
        value = getattr(args, dest, None)
        if value is not None:
            out.append((f"{section}.{dest}", value))
    for item in args.set:
        key, sep, value = item.partition("=")
        if not sep:
            raise UsageError(f"--set expects KEY=VALUE, got {item!r}")
        out.append((key.strip(), _parse_scalar(value)))
    return out


# --------------------------------------------------------------------------
# subcommands


def _require(cfg: RunConfig, name: str) -> Path:
    value = cfg.paths.get(name)
    if not value:
        raise UsageError(f"{cfg.command}: --{name} is required")
    return Path(value)


def _write_config(cfg: RunConfig, out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")


def _load_model(cfg: RunConfig, name: str):
    path = cfg.paths.get(name)
    return load_params(path) if path else None


def cmd_synth_data(cfg: RunConfig, out: Path) -> None:
    dataset = make_dataset(cfg.synth_config(), cfg.n_per_class)
    save_dataset(dataset, out)
    logger.info("wrote %d/%d/%d videos to %s", len(dataset.train), len(dataset.val),
                len(dataset.test), out)


def cmd_dynimg(cfg: RunConfig, out: Path, png: bool) -> None:
    video = load_frames(_require(cfg, "frames"))
    images = dynamic_image_sequence(video, cfg.eval.window, cfg.eval.stride)
    for i, D in enumerate(images):
        write_dimg(D, out / f"di_{i:04d}.dimg")
        if png:
            export_dynamic_image(D, out / f"di_{i:04d}.png", mode="png")
    print(f"wrote {len(images)} dynamic images to {out}")


def _dataset(cfg: RunConfig):
    return load_dataset(_require(cfg, "data"))


def cmd_train_teacher(cfg: RunConfig, out: Path) -> None:
    ds = _dataset(cfg)
    probe = ds.train[0].frames.shape[1:]
    classifier = ClassifierConfig(input_shape=probe, conv_channels=cfg.model.classifier_channels,
                                  n_classes=len(CLASSES), standardize=cfg.teacher_kind == "dynamic")
    params, log = train_teacher(ds.train, cfg.teacher_kind, cfg.teacher_config(), ds.val,
                                cfg.eval.window, cfg.eval.stride, classifier)
    save_params(params, out / f"{cfg.teacher_kind}.mrnk")
    with open(out / "teacher_log.csv", "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["epoch", "loss", "train_acc", "val_acc"])
        for r in log:
            writer.writerow([r["epoch"], f"{r['loss']:.6f}", f"{r['train_acc']:.6f}",
                             "" if r["val_acc"] is None else f"{r['val_acc']:.6f}"])
    if log:
        print(f"{cfg.teacher_kind} teacher: train_acc {log[-1]['train_acc']:.4f} "
              f"val_acc {log[-1]['val_acc']}")


def cmd_train_generator(cfg: RunConfig, out: Path) -> None:
    ds = _dataset(cfg)
    tc = cfg.generator_config()
    teacher = _load_model(cfg, "teacher")
    if "cl" in tc.losses_enabled and teacher is None:
        raise UsageError("train-generator: the cl loss needs --teacher")
    samples = build_gen_samples(ds.train, cfg.eval.window, cfg.eval.stride)
    gen_cfg = GeneratorConfig(input_shape=ds.train[0].frames.shape[1:],
                              stage_feature_maps=cfg.model.generator_maps)
    params, log = train_generator(samples, teacher, tc, cfg.eval.window, gen_cfg)
    save_params(params, out / "generator.mrnk")
    write_loss_csv(out / "loss.csv", log)
    print(f"generator trained on {len(samples)} pairs with losses {','.join(tc.losses_enabled)}")


def _anticipation_models(cfg: RunConfig) -> AnticipationModels:
    models = AnticipationModels(_load_model(cfg, "static"), _load_model(cfg, "dynamic"),
                                _load_model(cfg, "generator"))
    if models.static is None and models.dynamic is None:
        raise UsageError(f"{cfg.command}: give at least one of --static / --dynamic")
    return models


def cmd_anticipate(cfg: RunConfig, out: Path) -> None:
    video = load_frames(_require(cfg, "video"))
    models = _anticipation_models(cfg)
    fraction = cfg.eval.observe_fraction
    n = observed_length(len(video), fraction)
    result = anticipate(video.truncate(n), models.static, models.dynamic, models.generator,
                        T=cfg.eval.window, K=cfg.eval.k, stride=cfg.eval.stride,
                        static_every=cfg.eval.static_every, fraction=fraction)
    report = {"predicted": result.predicted, "class": CLASSES[result.predicted]
              if result.predicted < len(CLASSES) else None,
              "observed_frames": n, "k": result.K,
              "fused": [float(x) for x in result.fused]}
    (out / "prediction.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    print(json.dumps(report, sort_keys=True))


def cmd_evaluate(cfg: RunConfig, out: Path) -> None:
    videos = _dataset(cfg).splits()[cfg.eval.split]
    models = _anticipation_models(cfg)
    curve = evaluate_curve(videos, models, cfg.eval.window, cfg.eval.k, cfg.eval.fractions,
                           cfg.eval.stride, cfg.eval.static_every, cfg.eval.jobs)
    write_curve_csv(out / "curve.csv", curve, cfg.eval.k, cfg.seed)
    for p, acc in curve.points:
        print(f"{p:g}\t{acc:.4f}")


def cmd_k_sweep(cfg: RunConfig, out: Path) -> None:
    videos = _dataset(cfg).splits()[cfg.eval.split]
    models = _anticipation_models(cfg)
    sweep = k_sweep(videos, models, cfg.eval.window, cfg.eval.k_max, cfg.eval.fraction,
                    cfg.eval.stride, cfg.eval.jobs)
    write_sweep_csv(out / "sweep.csv", sweep, cfg.eval.fraction, cfg.seed)
    for k, acc in sweep:
        print(f"{k}\t{acc:.4f}")


def cmd_gradcheck(out: Optional[Path], eps: float) -> bool:
    results = run_suite(eps)
    for r in results:
        print(f"{'PASS' if r.passed else 'FAIL'}  {r.name:<36} {r.max_rel_error:.3e}")
    if out is not None:
        with open(out / "gradcheck.csv", "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["check", "max_rel_error", "passed"])
            for r in results:
                writer.writerow([r.name, f"{r.max_rel_error:.6e}", int(r.passed)])
    return all(r.passed for r in results)


def main(argv: Optional[Sequence[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError(parser.format_help() + "motionrank: error: a subcommand is required")
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        file_values = load_config_file(args.config) if args.config else None
        cfg = resolve_config(args.command, file_values, _overrides(args))
        out = Path(cfg.paths["out"]) if cfg.paths.get("out") else None
        if out is None and args.command != "gradcheck":
            raise UsageError(f"{args.command}: --out is required")
    except (UsageError, InvalidConfigError) as exc:
        print(str(exc), file=sys.stderr)
        return 1

    try:
        if out is not None:
            _write_config(cfg, out)
        if args.command == "gradcheck":
            return 0 if cmd_gradcheck(out, args.eps) else 2
        handler = {
            "synth-data": cmd_synth_data, "train-teacher": cmd_train_teacher,
            "train-generator": cmd_train_generator, "anticipate": cmd_anticipate,
            "evaluate": cmd_evaluate, "k-sweep": cmd_k_sweep,
        }.get(args.command)
        if handler is not None:
            handler(cfg, out)
        else:
            cmd_dynimg(cfg, out, args.png)
    except UsageError as exc:
        print(str(exc), file=sys.stderr)
        return 1
    except (MotionRankError, OSError, ValueError) as exc:
        print(f"motionrank {args.command}: {exc}", file=sys.stderr)
        return 2
    return 0
