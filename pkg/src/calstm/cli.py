"""Command line entry point: synth, prepare, train, evaluate, plot, gradcheck.

Data lives in a root directory with one subdirectory per scene, each holding
trajectories.tsv and scene.tsv. Every artifact-producing run writes a
manifest.json beside its outputs recording the resolved configuration, the
seed, sha256 digests of the inputs and the produced files, so a run can be
reproduced exactly.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
import time
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__, data, inference, svg, synth, training
from .errors import ConfigurationError, DataFormatError, TrainingDiverged, UsageError
from .gradcheck import SEQUENCE_FD_STEP, tiny_suite
from .model import HyperParams, Model, ModelVariant, VARIANT_NAMES
from .pooling import GridSpec


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(out_dir, command: str, config: dict, inputs, outputs, started: float) -> Path:
    manifest = {
        "command": command,
        "config": config,
        "seed": config.get("seed"),
        "inputs": {str(p): _sha256(p) for p in inputs if Path(p).is_file()},
        "outputs": [str(p) for p in outputs],
        "started_utc": datetime.fromtimestamp(started, tz=timezone.utc).isoformat(),
        "elapsed_seconds": round(time.time() - started, 3),
        "version": __version__,
    }
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / "manifest.json"
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, default=str)
        fh.write("\n")
    return path


def discover_scenes(root) -> list[Path]:
    root = Path(root)
    if (root / "trajectories.tsv").is_file():
        return [root]
    found = sorted(d for d in root.iterdir() if (d / "trajectories.tsv").is_file())
    if not found:
        raise ConfigurationError(f"no scene directories with trajectories.tsv under {root}")
    return found


def load_scene_dir(path) -> inference.SceneSource:
    path = Path(path)
    dataset = data.load_trajectories(path / "trajectories.tsv", scene_id=path.name)
    scene_file = path / "scene.tsv"
    scene = data.load_scene(scene_file, scene_id=path.name) if scene_file.is_file() else data.Scene.empty(path.name)
    return inference.SceneSource(path.name, dataset, scene)


def _add_pipeline_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--t-obs", type=int, default=8, help="observed frames per window")
    p.add_argument("--t-pred", type=int, default=12, help="predicted frames per window")
    p.add_argument("--stride", type=int, default=1, help="frame subsampling stride")
    p.add_argument("--window-stride", type=int, default=None, help="training window stride")


def _add_hyper_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--embed-dim", type=int, default=64)
    p.add_argument("--hidden-dim", type=int, default=128)
    p.add_argument("--neighborhood", type=float, default=32.0, help="pooling neighborhood side, meters")
    p.add_argument("--grid-cells", type=int, default=8, help="pooling cells per side")


def _hyper_from_args(args, static_points: int) -> HyperParams:
    return HyperParams(
        embed_dim=args.embed_dim,
        hidden_dim=args.hidden_dim,
        grid=GridSpec(args.neighborhood, args.grid_cells),
        static_points=static_points,
    )


def _variants_from_args(values) -> list[ModelVariant]:
    names = []
    for v in values:
        names.extend(x.strip() for x in v.split(",") if x.strip())
    return [ModelVariant.from_name(n) for n in names]


def cmd_synth(args) -> int:
    started = time.time()
    config = synth.SynthConfig.from_json(args.config) if args.config else synth.SynthConfig()
    if args.seed is not None:
        config = synth.SynthConfig(**{**config.__dict__, "seed": args.seed})
    dataset, scene = synth.generate(config, scene_id=args.scene_id)
    out = Path(args.out) / args.scene_id
    out.mkdir(parents=True, exist_ok=True)
    tpath = out / "trajectories.tsv"
    spath = out / "scene.tsv"
    data.save_trajectories(dataset, tpath)
    data.save_scene(scene, spath)
    config_snapshot = {k: v for k, v in config.__dict__.items()}
    write_manifest(
        out, "synth", {"synth": config_snapshot, "seed": config.seed, "scene_id": args.scene_id},
        [args.config] if args.config else [], [tpath, spath], started,
    )
    print(f"wrote {tpath} ({len(dataset)} records, {scene.k} static points)")
    return 0


def cmd_prepare(args) -> int:
    started = time.time()
    scene_dirs = discover_scenes(args.data)
    report = []
    for d in scene_dirs:
        source = load_scene_dir(d)
        sampled = data.subsample(source.dataset, args.stride)
        windows = data.make_windows(sampled, args.t_obs, args.t_pred, stride=args.window_stride or 1)
        report.append(
            {
                "scene": source.scene_id,
                "records": len(source.dataset),
                "agents": len(source.dataset.agent_ids),
                "sampled_frames": len(sampled.frame_values),
                "static_points": source.scene.k,
                "windows": len(windows),
            }
        )
    folds = data.make_folds([r["scene"] for r in report], args.folds)
    out = Path(args.out or args.data)
    out.mkdir(parents=True, exist_ok=True)
    folds_path = out / "folds.json"
    data.save_folds(folds, folds_path)
    report_path = out / "prepare_report.json"
    with open(report_path, "w", encoding="utf-8") as fh:
        json.dump({"scenes": report}, fh, indent=2)
        fh.write("\n")
    write_manifest(
        out, "prepare",
        {"data": str(args.data), "folds": args.folds, "stride": args.stride,
         "t_obs": args.t_obs, "t_pred": args.t_pred, "seed": None},
        [d / "trajectories.tsv" for d in scene_dirs], [folds_path, report_path], started,
    )
    for r in report:
        print(f"{r['scene']}: {r['agents']} agents, {r['sampled_frames']} frames, {r['windows']} windows")
    print(f"wrote {folds_path} ({len(folds)} folds)")
    return 0


def cmd_train(args) -> int:
    started = time.time()
    scene_dirs = discover_scenes(args.data)
    if args.scene:
        wanted = set(args.scene)
        scene_dirs = [d for d in scene_dirs if d.name in wanted]
        missing = wanted - {d.name for d in scene_dirs}
        if missing:
            raise ConfigurationError(f"scenes not found under {args.data}: {sorted(missing)}")
    sources = [load_scene_dir(d) for d in scene_dirs]
    (variant,) = _variants_from_args(args.variant or ["lstm"]) or [ModelVariant("none", "none")]
    hyper = _hyper_from_args(args, sources[0].scene.k)
    prepared = [
        data.prepare_scene(
            s.dataset, s.scene, t_obs=args.t_obs, t_pred=args.t_pred,
            window_stride=args.window_stride, subsample_stride=args.stride,
        )
        for s in sources
    ]
    config = training.TrainConfig(
        learning_rate=args.lr, epochs=args.epochs, seed=args.seed, clip_norm=args.clip_norm,
        full_range_loss=args.full_range_loss,
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ckpt = out / "checkpoint.json"
    result = training.train(
        prepared, variant, hyper, config,
        checkpoint_path=ckpt, checkpoint_every=args.checkpoint_every,
        log_every=args.log_every,
    )
    history_path = out / "loss_history.csv"
    training.save_loss_history(result.loss_history, history_path)
    write_manifest(
        out, "train",
        {"data": str(args.data), "scenes": [s.scene_id for s in sources],
         "variant": variant.name, "epochs": args.epochs, "lr": args.lr, "seed": args.seed,
         "clip_norm": args.clip_norm, "t_obs": args.t_obs, "t_pred": args.t_pred,
         "stride": args.stride, "window_stride": args.window_stride,
         "embed_dim": args.embed_dim, "hidden_dim": args.hidden_dim,
         "neighborhood": args.neighborhood, "grid_cells": args.grid_cells,
         "full_range_loss": args.full_range_loss},
        [d / "trajectories.tsv" for d in scene_dirs], [ckpt, history_path], started,
    )
    last = f", final mean nll {result.loss_history[-1]:.4f}" if result.loss_history else ""
    print(f"trained {variant.name} for {args.epochs} epochs{last}; wrote {ckpt}")
    return 0


def cmd_evaluate(args) -> int:
    started = time.time()
    sources = [load_scene_dir(d) for d in discover_scenes(args.data)]
    folds = data.load_folds(args.folds)
    variants = _variants_from_args(args.variant or ["lstm"])
    protocol = inference.EvalProtocol(
        t_obs=args.t_obs, t_pred=args.t_pred, subsample_stride=args.stride,
        train_window_stride=args.window_stride or 1,
        mode=args.mode, sample_seed=args.sample_seed,
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    table = {}
    all_rows = []
    for variant in variants:
        hyper = _hyper_from_args(args, sources[0].scene.k)
        config = training.TrainConfig(
            learning_rate=args.lr, epochs=args.epochs, seed=args.seed, clip_norm=args.clip_norm,
            full_range_loss=args.full_range_loss,
        )
        results = inference.crossval(sources, folds, variant, hyper, config, protocol)
        table[variant.name] = results
        by_id = {s.scene_id: s for s in sources}
        for fr in results:
            model = Model(variant, hyper, fr.params)
            for sid in fr.test_scenes:
                prepared = data.prepare_scene(
                    by_id[sid].dataset, by_id[sid].scene,
                    t_obs=args.t_obs, t_pred=args.t_pred,
                    window_stride=protocol.eval_stride, subsample_stride=args.stride,
                )
                evals = inference.evaluate_windows(model, prepared, mode=args.mode, seed=args.sample_seed)
                all_rows.extend(inference.evaluation_rows(fr.fold_index, variant.name, evals))
        ades = ", ".join(f"{fr.ade_m:.3f}" for fr in results)
        print(f"{variant.name}: fold ADE [{ades}] avg {np.mean([fr.ade_m for fr in results]):.3f} m")
    summary_path = out / "summary.csv"
    inference.write_summary_csv(summary_path, table)
    results_path = out / "results.csv"
    inference.write_results_csv(results_path, all_rows)
    write_manifest(
        out, "evaluate",
        {"data": str(args.data), "folds": str(args.folds),
         "variants": [v.name for v in variants], "epochs": args.epochs, "lr": args.lr,
         "seed": args.seed, "mode": args.mode, "sample_seed": args.sample_seed,
         "t_obs": args.t_obs, "t_pred": args.t_pred, "stride": args.stride,
         "window_stride": args.window_stride, "embed_dim": args.embed_dim,
         "hidden_dim": args.hidden_dim, "neighborhood": args.neighborhood,
         "grid_cells": args.grid_cells, "full_range_loss": args.full_range_loss},
        [args.folds], [summary_path, results_path], started,
    )
    print(f"wrote {summary_path}")
    return 0


def cmd_plot(args) -> int:
    started = time.time()
    source = load_scene_dir(Path(args.data) / args.scene if args.scene else args.data)
    prepared = data.prepare_scene(
        source.dataset, source.scene, t_obs=args.t_obs, t_pred=args.t_pred,
        window_stride=args.t_obs + args.t_pred, subsample_stride=args.stride,
    )
    if not prepared.windows:
        raise ConfigurationError(f"scene {source.scene_id} yields no windows")
    if not 0 <= args.window < len(prepared.windows):
        raise ConfigurationError(
            f"window {args.window} out of range, scene has {len(prepared.windows)}"
        )
    window = prepared.windows[args.window]
    predictions = {}
    for ck_path in args.checkpoint or []:
        model = Model.from_checkpoint(ck_path)
        grid = model.hyper.grid.scaled(1.0 / prepared.transform.scale)
        result = inference.rollout(
            window, prepared.scene.points, model, mode=args.mode, seed=args.sample_seed, grid=grid
        )
        predictions[model.variant.name] = prepared.transform.invert(result.positions)
    predictions["constant-velocity"] = prepared.transform.invert(
        inference.constant_velocity_baseline(window).positions
    )
    truth_m = prepared.transform.invert(window.positions)
    points_m = prepared.transform.invert(prepared.scene.points) if prepared.scene.k else np.zeros((0, 2))
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    svg.render_window(out, window, points_m, truth_m, predictions, source.scene.labels)
    write_manifest(
        out.parent, "plot",
        {"data": str(args.data), "scene": args.scene, "window": args.window,
         "checkpoints": list(args.checkpoint or []), "mode": args.mode, "seed": args.sample_seed},
        list(args.checkpoint or []), [out], started,
    )
    print(f"wrote {out}")
    return 0


def cmd_gradcheck(args) -> int:
    tol = args.tolerance
    reports = tiny_suite(seed=args.seed, step=args.step)
    failed = []
    for name, report in reports.items():
        status = "PASS" if report.passed(tol) else "FAIL"
        print(f"{name:14s} max rel err {report.max_rel_err:.3e}  {status}")
        if not report.passed(tol):
            failed.append(name)
            print(str(report))
    if failed:
        print(f"gradient check FAILED for: {', '.join(failed)}")
        return 1
    print(f"all {len(reports)} variants passed at tolerance {tol:g}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="calstm",
        description="Context-aware LSTM trajectory forecasting: synthesize, train, evaluate, plot.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic scene")
    p.add_argument("--config", help="synth config JSON")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--scene-id", default="synth")
    p.add_argument("--out", required=True, help="data root to write the scene under")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("prepare", help="inspect scenes and write cross-validation folds")
    p.add_argument("--data", required=True)
    p.add_argument("--folds", type=int, required=True)
    p.add_argument("--out", default=None)
    _add_pipeline_flags(p)
    p.set_defaults(func=cmd_prepare)

    p = sub.add_parser("train", help="train one variant on one or more scenes")
    p.add_argument("--data", required=True)
    p.add_argument("--scene", action="append", help="scene id, repeatable; default all")
    p.add_argument("--variant", action="append", help=f"one of {', '.join(VARIANT_NAMES)}")
    p.add_argument("--epochs", type=int, default=1600)
    p.add_argument("--lr", type=float, default=0.005)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--clip-norm", type=float, default=10.0)
    p.add_argument("--full-range-loss", action="store_true")
    p.add_argument("--checkpoint-every", type=int, default=None)
    p.add_argument("--log-every", type=int, default=None)
    p.add_argument("--out", required=True, help="output directory")
    _add_pipeline_flags(p)
    _add_hyper_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="cross-validated ADE per variant")
    p.add_argument("--data", required=True)
    p.add_argument("--folds", required=True, help="folds.json from prepare")
    p.add_argument("--variant", action="append", help="repeatable or comma-separated")
    p.add_argument("--epochs", type=int, default=1600)
    p.add_argument("--lr", type=float, default=0.005)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--clip-norm", type=float, default=10.0)
    p.add_argument("--full-range-loss", action="store_true")
    p.add_argument("--mode", choices=("mean", "sample"), default="mean")
    p.add_argument("--sample-seed", type=int, default=None)
    p.add_argument("--out", required=True)
    _add_pipeline_flags(p)
    _add_hyper_flags(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("plot", help="SVG overlay of truth vs predictions for one window")
    p.add_argument("--data", required=True)
    p.add_argument("--scene", default=None, help="scene id under the data root")
    p.add_argument("--checkpoint", action="append", help="checkpoint JSON, repeatable")
    p.add_argument("--window", type=int, default=0)
    p.add_argument("--mode", choices=("mean", "sample"), default="mean")
    p.add_argument("--sample-seed", type=int, default=None)
    p.add_argument("--out", required=True, help="output SVG path")
    _add_pipeline_flags(p)
    p.set_defaults(func=cmd_plot)

    p = sub.add_parser("gradcheck", help="finite-difference check of all variant gradients")
    p.add_argument("--tiny", action="store_true", help="tiny configuration (the default and only suite)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--step", type=float, default=SEQUENCE_FD_STEP)
    p.add_argument("--tolerance", type=float, default=1e-4)
    p.set_defaults(func=cmd_gradcheck)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigurationError, DataFormatError, UsageError, TrainingDiverged) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
