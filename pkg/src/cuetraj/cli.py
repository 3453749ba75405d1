"""Command-line entry point: ``cuetraj <command> [flags]``.

Options come from three layers, later ones winning: dataclass defaults, a
flat ``key = value`` file (``--config`` or ``$CUETRAJ_CONFIG``) and flags.
Every artifact directory receives a ``resolved.cfg`` with the final values.

Exit codes: 0 success, 1 invalid input (bad flags, missing files,
validation errors), 2 runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import kvconfig
from .attention import average_maps, spatial_map, temporal_map, write_maps
from .datagen import ScenarioSpec, generate
from .errors import ConfigError, CuetrajError, EmptyMapError, ValidationError
from .layouts import keypoint_layout
from .masking import EvalPattern, parse_keep_fraction, scene_stream
from .metrics import format_table, write_reports_csv
from .model import VARIANTS, ModelConfig, forward_batch, load_model, predict
from .nn import no_grad
from .plotting import loss_curve_svg, metric_bars_svg, trajectory_svg
from .scene import CUE_ORDER, CueKind, parse_cue_list, read_corpus, write_corpus
from .training import TrainConfig, evaluate, prepare_eval_scene, train

CONFIG_ENV = "CUETRAJ_CONFIG"
OCCLUSIONS = ("random-limb", "structured-right-leg", "frame-drop")

log = logging.getLogger("cuetraj")


class UsageError(ValidationError):
    """Command-line arguments could not be parsed."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _flag(name: str) -> str:
    return "--" + name.replace("_", "-")


def _add_dataclass_flags(parser, cls, skip=()) -> None:
    group = parser.add_argument_group(cls.__name__)
    for f in dataclasses.fields(cls):
        if f.name in skip:
            continue
        group.add_argument(_flag(f.name), dest=f.name, default=None, metavar="VALUE",
                           help=f"default: {f.default}")


def _resolve(cls, file_values: dict[str, str], args, skip=(), extra=None):
    """Build ``cls`` from file values overridden by flags (and ``extra``)."""
    names = {f.name for f in dataclasses.fields(cls)} - set(skip)
    values = {k: v for k, v in file_values.items() if k in names}
    values.update({k: v for k, v in vars(args).items() if k in names and v is not None})
    if extra:
        values.update({k: v for k, v in extra.items() if k not in values})
    return cls(**kvconfig.coerce(cls, values))


def _load_file_config(path: str | None) -> dict[str, str]:
    path = path or os.environ.get(CONFIG_ENV)
    if not path:
        return {}
    return kvconfig.load(path)


def _check_file_keys(values: dict[str, str], *classes, extra=()) -> None:
    known = set(extra)
    for cls in classes:
        known |= {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(values) - known)
    if unknown:
        raise ConfigError(f"unknown configuration keys: {', '.join(unknown)}")


def _write_resolved(out: Path, sections: dict[str, dict[str, str]]) -> None:
    lines = []
    for name, values in sections.items():
        lines.append(f"# {name}")
        lines.extend(f"{k} = {v}" for k, v in values.items())
    (out / "resolved.cfg").write_text("\n".join(lines) + "\n", encoding="utf-8")


def _corpus(path) -> list:
    scenes = read_corpus(path)
    if not scenes:
        raise ValidationError(f"corpus is empty: {path}")
    return scenes


def _split_path(data: str, split: str) -> Path:
    p = Path(data)
    return p / f"{split}.jsonl" if p.is_dir() else p


def _cues(text: str | None):
    if not text:
        return CUE_ORDER
    kinds = parse_cue_list(text)
    if CueKind.T not in kinds:
        raise ConfigError("--cues must include the trajectory cue T")
    return kinds


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_gen_data(args, file_values) -> int:
    _check_file_keys(file_values, ScenarioSpec)
    spec = _resolve(ScenarioSpec, file_values, args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    corpus = generate(spec)
    for split, scenes in corpus.items():
        n = write_corpus(out / f"{split}.jsonl", scenes)
        print(f"{split}: {n} scenes -> {out / f'{split}.jsonl'}")
    kvconfig.dump(out / "spec.cfg", spec.to_kv())
    _write_resolved(out, {"scenario": spec.to_kv()})
    return 0


def _model_and_train_config(args, file_values, scenes):
    first = scenes[0]
    inferred = {"t_obs": first.t_obs, "horizon": first.future.shape[0]}
    if first.keypoints is not None:
        inferred["keypoints"] = first.keypoints
    model_config = _resolve(ModelConfig, file_values, args, extra=inferred)
    train_config = _resolve(TrainConfig, file_values, args)
    return model_config, train_config


def cmd_train(args, file_values) -> int:
    _check_file_keys(file_values, ModelConfig, TrainConfig)
    scenes = _corpus(_split_path(args.data, "train"))
    val_path = Path(args.val) if args.val else _split_path(args.data, "val")
    val = _corpus(val_path) if val_path.is_file() and val_path != _split_path(args.data, "train") \
        else None
    model_config, train_config = _model_and_train_config(args, file_values, scenes)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ckpt = out / "model.ckpt"
    _, runlog = train(scenes, model_config, train_config, val, checkpoint=ckpt, progress=True)
    runlog.write_csv(out / "runlog.csv")
    rows = runlog.rows
    loss_curve_svg(out / "loss.svg", [r["epoch"] for r in rows], [r["train_loss"] for r in rows],
                   [r.get("val_ade") for r in rows])
    _write_resolved(out, {"model": model_config.to_kv(), "train": train_config.to_kv(),
                          "data": {"train": str(_split_path(args.data, "train")),
                                   "val": str(val_path) if val else "none"}})
    print(runlog.to_csv(), end="")
    print(f"checkpoint -> {ckpt}")
    return 0


def _eval_pattern(args) -> EvalPattern:
    chosen = [name for name, flag in (("keep-fraction", args.keep_fraction),
                                      ("gaussian-noise", args.noise_std),
                                      ("occlusion", args.occlusion)) if flag is not None]
    if len(chosen) > 1:
        raise ConfigError(f"choose at most one evaluation pattern, got {', '.join(chosen)}")
    if args.keep_fraction is not None:
        return EvalPattern("keep-fraction", parse_keep_fraction(args.keep_fraction,
                                                                _cues(args.cues)))
    if args.noise_std is not None:
        return EvalPattern("gaussian-noise", sigma=float(args.noise_std))
    if args.occlusion is not None:
        return EvalPattern(args.occlusion, p=float(args.drop_prob))
    return EvalPattern()


def cmd_eval(args, file_values) -> int:
    params, model_config = load_model(args.checkpoint)
    scenes = _corpus(_split_path(args.data, "test"))
    cues = _cues(args.cues)
    pattern = _eval_pattern(args)
    clean = evaluate(params, model_config, scenes, cues, seed=args.seed)
    reports = [clean]
    if pattern.name != "none":
        reports.append(evaluate(params, model_config, scenes, cues, pattern, seed=args.seed)
                       .against(clean))
    print(format_table(reports))
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        write_reports_csv(out / "metrics.csv", reports)
        metric_bars_svg(out / "metrics.svg", [r.name for r in reports],
                        [r.ade for r in reports], [r.fde for r in reports])
        _write_resolved(out, {"model": model_config.to_kv(), "eval": {
            "checkpoint": args.checkpoint, "data": str(_split_path(args.data, "test")),
            "cues": ",".join(k.value for k in cues), "pattern": pattern.describe(),
            "seed": str(args.seed)}})
    return 0


def cmd_predict(args, file_values) -> int:
    params, model_config = load_model(args.checkpoint)
    scenes = _corpus(_split_path(args.data, "test"))
    if args.limit is not None:
        scenes = scenes[:args.limit]
    cues = _cues(args.cues)
    prepared = [prepare_eval_scene(s, cues, EvalPattern(), scene_stream(args.seed, i, 7919))
                for i, s in enumerate(scenes)]
    preds = predict(prepared, params, model_config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "predictions.csv", "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["scene_id", "step", "pred_x", "pred_y", "true_x", "true_y"])
        for s, p in zip(scenes, preds):
            for j, (xy, gt) in enumerate(zip(p, s.future), 1):
                writer.writerow([s.id, j, repr(float(xy[0])), repr(float(xy[1])),
                                 repr(float(gt[0])), repr(float(gt[1]))])
    for s, p in list(zip(scenes, preds))[:args.plots]:
        traj = s.primary.trajectory
        obs = np.where(traj.mask[:, 0, None], traj.values[:, 0], np.nan)
        neighbors = [a.trajectory.values[a.trajectory.mask[:, 0], 0] for a in s.agents[1:]]
        trajectory_svg(out / f"{_safe(s.id)}.svg", obs, s.future, p,
                       [n for n in neighbors if len(n)], title=s.id)
    _write_resolved(out, {"model": model_config.to_kv(), "predict": {
        "checkpoint": args.checkpoint, "data": str(_split_path(args.data, "test")),
        "cues": ",".join(k.value for k in cues), "scenes": str(len(scenes))}})
    print(f"{len(scenes)} predictions -> {out / 'predictions.csv'}")
    return 0


def _safe(name: str) -> str:
    return "".join(c if c.isalnum() or c in "-_." else "_" for c in name)


def cmd_ablate(args, file_values) -> int:
    _check_file_keys(file_values, ModelConfig, TrainConfig)
    scenes = _corpus(_split_path(args.data, "train"))
    test = _corpus(_split_path(args.data, "test")) if Path(args.data).is_dir() else scenes
    base_model, train_config = _model_and_train_config(args, file_values, scenes)
    if args.steps is not None:
        train_config = dataclasses.replace(train_config, max_steps=args.steps,
                                           epochs=max(train_config.epochs, 10 ** 6)
                                           if args.steps else train_config.epochs)
    reports, sections = [], {"train": train_config.to_kv()}
    for variant in VARIANTS:
        mc = dataclasses.replace(base_model, variant=variant)
        params, runlog = train(scenes, mc, train_config)
        losses = [r["train_loss"] for r in runlog.rows]
        if not all(np.isfinite(losses)):
            raise CuetrajError(f"variant {variant} produced a non-finite loss")
        reports.append(evaluate(params, mc, test, name=variant))
        sections[variant] = mc.to_kv()
    reports = [reports[0]] + [r.against(reports[0]) for r in reports[1:]]
    print(format_table(reports))
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        write_reports_csv(out / "ablation.csv", reports)
        metric_bars_svg(out / "ablation.svg", [r.name for r in reports],
                        [r.ade for r in reports], [r.fde for r in reports], title="variants")
        _write_resolved(out, sections)
    return 0


def cmd_attention(args, file_values) -> int:
    params, model_config = load_model(args.checkpoint)
    scenes = _corpus(_split_path(args.data, "test"))[:args.limit]
    cues = _cues(args.cues)
    prepared = [prepare_eval_scene(s, cues, EvalPattern(), scene_stream(args.seed, i, 7919))
                for i, s in enumerate(scenes)]
    captures = []
    with no_grad():
        for i in range(0, len(prepared), 32):
            captures += forward_batch(prepared[i:i + 32], params, model_config, capture=True)[1]
    temporal = average_maps(captures, temporal_map, rows=args.rows)
    layout = keypoint_layout(model_config.keypoints)
    try:
        spatial = average_maps(captures, spatial_map, layout=layout, rows=args.rows)
    except EmptyMapError:
        spatial = None
        print("no pose tokens in the selected cues: spatial map skipped")
    paths = write_maps(args.out, temporal, spatial, layout)
    _write_resolved(Path(args.out), {"model": model_config.to_kv(), "attention": {
        "checkpoint": args.checkpoint, "data": str(_split_path(args.data, "test")),
        "cues": ",".join(k.value for k in cues), "rows": args.rows,
        "scenes": str(len(scenes))}})
    print("temporal: " + " ".join(f"{v:.4f}" for v in temporal))
    if spatial is not None:
        print("spatial: " + " ".join(f"{layout.label(i)}={v:.4f}" for i, v in enumerate(spatial)))
    for p in paths:
        print(f"-> {p}")
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="cuetraj", description="Promptable multi-cue trajectory prediction.")
    parser.add_argument("--config", help=f"key = value file (default: ${CONFIG_ENV})")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen-data", help="generate a synthetic corpus")
    p.add_argument("--out", required=True, help="output directory")
    _add_dataclass_flags(p, ScenarioSpec)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train a model")
    p.add_argument("--data", required=True, help="corpus directory or training .jsonl file")
    p.add_argument("--val", help="validation .jsonl (default: <data>/val.jsonl)")
    p.add_argument("--out", required=True, help="output directory")
    _add_dataclass_flags(p, ModelConfig)
    _add_dataclass_flags(p, TrainConfig)
    p.set_defaults(func=cmd_train)

    def eval_like(p):
        p.add_argument("--checkpoint", required=True)
        p.add_argument("--data", required=True, help="corpus directory (test split) or .jsonl")
        p.add_argument("--cues", help="comma-separated cue subset, e.g. T,P3d (default: all)")
        p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    eval_like(p)
    p.add_argument("--keep-fraction", help="e.g. T=0.5,P3d=0.5")
    p.add_argument("--noise-std", type=float, help="Gaussian noise on pose values")
    p.add_argument("--occlusion", choices=OCCLUSIONS)
    p.add_argument("--drop-prob", type=float, default=1.0, help="frame-drop probability")
    p.add_argument("--out", help="directory for metrics.csv and metrics.svg")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("predict", help="write predicted trajectories and overlays")
    eval_like(p)
    p.add_argument("--out", required=True)
    p.add_argument("--limit", type=int)
    p.add_argument("--plots", type=int, default=4, help="number of SVG overlays")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("ablate", help="train and compare the four architecture variants")
    p.add_argument("--data", required=True, help="corpus directory")
    p.add_argument("--steps", type=int, default=200, help="optimizer steps per variant")
    p.add_argument("--out")
    _add_dataclass_flags(p, ModelConfig, skip=("variant",))
    _add_dataclass_flags(p, TrainConfig)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("attention", help="export temporal and spatial attention maps")
    eval_like(p)
    p.add_argument("--out", required=True)
    p.add_argument("--limit", type=int, default=200)
    p.add_argument("--rows", choices=("queries", "all"), default="queries")
    p.set_defaults(func=cmd_attention)
    return parser


def run(argv: list[str] | None = None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(message)s")
    try:
        return args.func(args, _load_file_config(args.config))
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except CuetrajError as exc:
        print(f"failed: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"failed: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(run())
