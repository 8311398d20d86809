"""Command-line entry points.

Subcommands: simulate, train, crossval, predict, evaluate, robustness,
calibrate, features.  Every run writes a manifest.json (config, seeds,
version, outputs) into its output directory; with identical seeds and inputs
the produced files are byte-identical between runs.
"""

from __future__ import annotations

import argparse
import glob
import os
import sys

import numpy as np

from . import __version__, io
from .data import FrameSchedule, InputFunction
from .errors import FcdlifError
from .evaluation import (mbe, mse, orthogonal_regression, paired_ttest,
                         shift_test, truncation_test, voxelwise_patlak)
from .model import FcDlifModel, SfeConfig, TfeConfig, build_fcdlif
from .phantom import FengParams, make_mouse_phantom, render_phantom
from .calibration import calibrate_trace
from .training import TrainConfig, cross_validate, kfold_split, train
from .tsne import TsneConfig, tsne_embed

DEFAULT_SCHEDULE_SPEC = "1x30,24x5,9x20,8x300"


def _parse_grid(text: str) -> tuple:
    try:
        parts = tuple(int(p) for p in text.lower().split("x"))
    except ValueError:
        parts = ()
    if len(parts) != 3 or any(p < 1 for p in parts):
        raise argparse.ArgumentTypeError(f"grid must look like 24x16x16, got {text!r}")
    return parts


def _parse_schedule(text: str) -> FrameSchedule:
    groups = []
    try:
        for item in text.split(","):
            count, dur = item.lower().split("x")
            groups.append((int(count), float(dur)))
    except ValueError as exc:
        raise FcdlifError(
            f"schedule must look like {DEFAULT_SCHEDULE_SPEC!r}, got {text!r}") from exc
    return FrameSchedule.from_spec(groups)


def _model_for_grid(grid: tuple, seed: int) -> FcDlifModel:
    """Paper-scale layout for full-size grids, desk-style widths otherwise."""
    if grid == (96, 48, 48):
        return build_fcdlif(seed=seed)
    sfe = SfeConfig(spatial_shape=grid, channels=(4, 8, 16), embedding_dim=16)
    return FcDlifModel(sfe, TfeConfig.for_embedding(16), seed=seed)


def _load_dataset(data_dir: str):
    images = sorted(glob.glob(os.path.join(data_dir, "*.fdlf")))
    if not images:
        raise FcdlifError(f"no .fdlf images found in {data_dir}")
    dataset, names = [], []
    for path in images:
        stem = os.path.splitext(os.path.basename(path))[0]
        curve_path = os.path.join(data_dir, f"{stem}_aif.csv")
        if not os.path.exists(curve_path):
            raise FcdlifError(f"missing paired curve {curve_path}")
        dataset.append((io.load_image(path), io.load_curve(curve_path)))
        names.append(stem)
    return dataset, names


def _write_csv(path, header, rows):
    lines = [header]
    for row in rows:
        lines.append(",".join(str(v) for v in row))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# subcommand handlers
# ---------------------------------------------------------------------------

def _cmd_simulate(args) -> int:
    os.makedirs(args.out_dir, exist_ok=True)
    schedule = _parse_schedule(args.schedule)
    outputs = []
    for i in range(args.n):
        child = np.random.SeedSequence([args.seed, i])
        rng = np.random.Generator(np.random.PCG64(child))
        phantom = make_mouse_phantom(args.grid, rng=rng)
        feng = FengParams.typical(rng=rng)
        image, aif = render_phantom(phantom, schedule, feng,
                                    seed=int(child.generate_state(1)[0]),
                                    count_scale=args.count_scale,
                                    noise=not args.no_noise)
        image.meta["sample"] = i
        img_path = os.path.join(args.out_dir, f"phantom_{i:03d}.fdlf")
        aif_path = os.path.join(args.out_dir, f"phantom_{i:03d}_aif.csv")
        io.save_image(img_path, image)
        io.save_curve(aif_path, aif)
        outputs += [img_path, aif_path]
    io.write_manifest(args.out_dir, "simulate", {
        "n": args.n, "grid": "x".join(map(str, args.grid)),
        "schedule": args.schedule, "seed": args.seed,
        "count_scale": args.count_scale, "no_noise": args.no_noise,
        "out_dir": args.out_dir,
    }, outputs)
    print(f"wrote {args.n} phantom pairs to {args.out_dir}")
    return 0


def _train_config(args) -> TrainConfig:
    return TrainConfig(epochs=args.epochs, learning_rate=args.lr,
                       folds=args.folds, runs_per_fold=args.runs,
                       augment=not args.no_augment, seed=args.seed)


def _history_rows(history):
    return [(e, history.train_wmse[e], history.val_wmse[e])
            for e in range(len(history.train_wmse))]


def _cmd_train(args) -> int:
    dataset, _ = _load_dataset(args.data_dir)
    config = _train_config(args)
    train_idx, val_idx = kfold_split(len(dataset), config.folds, config.seed)[0]
    grid = dataset[0][0].spatial_shape
    model = _model_for_grid(grid, config.seed)
    model, history = train(model,
                           [dataset[i] for i in train_idx],
                           [dataset[i] for i in val_idx], config)
    os.makedirs(args.out_dir, exist_ok=True)
    weights_path = os.path.join(args.out_dir, "weights.fdlw")
    history_path = os.path.join(args.out_dir, "history.csv")
    io.save_weights(weights_path, model)
    _write_csv(history_path, "epoch,train_wmse,val_wmse", _history_rows(history))
    io.write_manifest(args.out_dir, "train", {
        "data_dir": args.data_dir, "epochs": args.epochs, "lr": args.lr,
        "folds": args.folds, "runs": args.runs, "no_augment": args.no_augment,
        "seed": args.seed, "out_dir": args.out_dir,
    }, [weights_path, history_path])
    print(f"best val wMSE {history.best_val_wmse:.6g} at epoch {history.best_epoch}")
    return 0


def _cmd_crossval(args) -> int:
    dataset, names = _load_dataset(args.data_dir)
    config = _train_config(args)
    grid = dataset[0][0].spatial_shape
    result = cross_validate(dataset, config,
                            model_factory=lambda seed: _model_for_grid(grid, seed))
    os.makedirs(args.out_dir, exist_ok=True)
    outputs = []
    metrics_path = os.path.join(args.out_dir, "metrics.csv")
    _write_csv(metrics_path, "fold,run,sample,mse,mbe",
               [(r["fold"], r["run"], r["sample"], repr(r["mse"]), repr(r["mbe"]))
                for r in result.rows])
    outputs.append(metrics_path)
    for (fold, run, sample), values in sorted(result.predictions.items()):
        pred_path = os.path.join(
            args.out_dir, f"pred_f{fold}_r{run}_{names[sample]}.csv")
        curve = InputFunction.from_schedule(values, dataset[sample][0].schedule)
        io.save_curve(pred_path, curve)
        outputs.append(pred_path)
    for (fold, run), history in sorted(result.histories.items()):
        hist_path = os.path.join(args.out_dir, f"history_f{fold}_r{run}.csv")
        _write_csv(hist_path, "epoch,train_wmse,val_wmse", _history_rows(history))
        outputs.append(hist_path)
    io.write_manifest(args.out_dir, "crossval", {
        "data_dir": args.data_dir, "epochs": args.epochs, "lr": args.lr,
        "folds": args.folds, "runs": args.runs, "no_augment": args.no_augment,
        "seed": args.seed, "out_dir": args.out_dir,
    }, outputs)
    print(f"cross-validation finished: {len(result.rows)} held-out predictions")
    return 0


def _cmd_predict(args) -> int:
    model = io.build_from_weights(args.weights)
    image = io.load_image(args.image)
    curve = model.predict(image)
    io.save_curve(args.out, curve)
    out_dir = os.path.dirname(os.path.abspath(args.out))
    io.write_manifest(out_dir, "predict", {
        "weights": args.weights, "image": args.image, "out": args.out,
    }, [args.out])
    print(f"wrote prediction to {args.out}")
    return 0


def _cmd_evaluate(args) -> int:
    pred_files = sorted(glob.glob(os.path.join(args.pred_dir, "*.csv")))
    if not pred_files:
        raise FcdlifError(f"no prediction curves in {args.pred_dir}")
    os.makedirs(args.out_dir, exist_ok=True)
    rows, pooled_pred, pooled_truth = [], [], []
    samples = []
    for pred_path in pred_files:
        name = os.path.basename(pred_path)
        truth_path = os.path.join(args.truth_dir, name)
        if not os.path.exists(truth_path):
            raise FcdlifError(f"missing truth curve {truth_path}")
        pred = io.load_curve(pred_path)
        truth = io.load_curve(truth_path)
        samples.append((os.path.splitext(name)[0], pred, truth))
        rows.append((os.path.splitext(name)[0], repr(mse(pred, truth)),
                     repr(mbe(pred, truth)), "", "", "", "", "", ""))
        pooled_pred.append(pred.values)
        pooled_truth.append(truth.values)
    x = np.concatenate(pooled_truth)
    y = np.concatenate(pooled_pred)
    try:
        reg = orthogonal_regression(x, y)
        reg_cols = [repr(reg.slope), repr(reg.intercept), repr(reg.pearson_r),
                    repr(reg.r_squared)]
    except FcdlifError:
        reg_cols = ["nan"] * 4  # degenerate scatter (e.g. constant curves)
    t_stat, p_val, _ = paired_ttest(y, x)
    rows.append(("all", repr(mse(y, x)), repr(mbe(y, x)), *reg_cols,
                 repr(t_stat), repr(p_val)))
    metrics_path = os.path.join(args.out_dir, "metrics.csv")
    _write_csv(metrics_path, "sample,mse,mbe,a,b,r,r2,t,p", rows)
    outputs = [metrics_path]

    if args.patlak:
        if not args.image_dir:
            raise FcdlifError("--patlak needs --image-dir with the source images")
        scatter_rows = []
        for name, pred, truth in samples:
            stem = name[:-4] if name.endswith("_aif") else name
            image_path = os.path.join(args.image_dir, f"{stem}.fdlf")
            if not os.path.exists(image_path):
                raise FcdlifError(f"missing image {image_path}")
            image = io.load_image(image_path)
            ki_truth, _, idx = voxelwise_patlak(image, truth,
                                                sample_count=args.ki_voxels,
                                                seed=args.seed)
            ki_pred, _, _ = voxelwise_patlak(image, pred,
                                             sample_count=args.ki_voxels,
                                             seed=args.seed)
            for voxel, kt, kp in zip(idx, ki_truth, ki_pred):
                scatter_rows.append((stem, voxel, repr(float(kt)), repr(float(kp))))
        scatter_path = os.path.join(args.out_dir, "ki_scatter.csv")
        _write_csv(scatter_path, "sample,voxel,ki_aif,ki_dlif", scatter_rows)
        outputs.append(scatter_path)

    io.write_manifest(args.out_dir, "evaluate", {
        "pred_dir": args.pred_dir, "truth_dir": args.truth_dir,
        "patlak": args.patlak, "image_dir": args.image_dir,
        "ki_voxels": args.ki_voxels, "seed": args.seed, "out_dir": args.out_dir,
    }, outputs)
    print(f"wrote metrics for {len(pred_files)} samples to {metrics_path}")
    return 0


def _cmd_robustness(args) -> int:
    model = io.build_from_weights(args.weights)
    image = io.load_image(args.image)
    if args.mode == "shift":
        report = shift_test(model, image)
    else:
        report = truncation_test(model, image)
    os.makedirs(args.out_dir, exist_ok=True)
    report_path = os.path.join(args.out_dir, "report.csv")
    if report.error is not None:
        _write_csv(report_path, "error", [(report.error,)])
        print(f"model rejected the transformed input: {report.error}")
    else:
        rows = []
        offset = 1 if args.mode == "shift" else 0
        for i, dev in enumerate(report.overlap_deviation):
            value = report.transformed[i + offset] if args.mode == "shift" \
                else report.transformed[i]
            interior = bool(report.interior[i]) if i < report.interior.size else False
            rows.append((i, repr(float(value)), repr(float(dev)), int(interior)))
        _write_csv(report_path, "position,transformed,deviation,interior", rows)
        interior_max = float(np.abs(
            report.overlap_deviation[report.interior[:report.overlap_deviation.size]]).max())
        print(f"max interior deviation: {interior_max:g}")
    io.write_manifest(args.out_dir, "robustness", {
        "weights": args.weights, "image": args.image, "mode": args.mode,
        "out_dir": args.out_dir,
    }, [report_path])
    return 0


def _cmd_calibrate(args) -> int:
    trace = io.load_trace(args.trace)
    samples = io.load_samples(args.samples)
    result, _, curve = calibrate_trace(trace, samples, args.delay,
                                       _parse_schedule(args.schedule))
    os.makedirs(args.out_dir, exist_ok=True)
    aif_path = os.path.join(args.out_dir, "aif.csv")
    io.save_curve(aif_path, curve)
    factors_path = os.path.join(args.out_dir, "factors.csv")
    rows = [(i, repr(float(f)), int(inc))
            for i, (f, inc) in enumerate(zip(result.factors, result.included))]
    rows.append(("overall", repr(result.overall_factor), ""))
    rows.append(("delay_s", repr(result.delay_s), ""))
    _write_csv(factors_path, "sample,factor,included", rows)
    io.write_manifest(args.out_dir, "calibrate", {
        "trace": args.trace, "samples": args.samples, "delay": args.delay,
        "schedule": args.schedule, "out_dir": args.out_dir,
    }, [aif_path, factors_path])
    print(f"overall factor {result.overall_factor:.6g} "
          f"({int(result.included.sum())}/{result.included.size} samples)")
    return 0


def _cmd_features(args) -> int:
    model = io.build_from_weights(args.weights)
    dataset, names = _load_dataset(args.data_dir)
    os.makedirs(args.out_dir, exist_ok=True)
    rows = []
    matrices = []
    for name, (image, _) in zip(names, dataset):
        feats = model.extract_sfe_features(image)  # (E, T)
        matrices.append(feats)
        for t in range(feats.shape[1]):
            rows.append((name, t, *(repr(float(v)) for v in feats[:, t])))
    width = matrices[0].shape[0]
    header = "sample,frame," + ",".join(f"e{i}" for i in range(width))
    emb_path = os.path.join(args.out_dir, "embeddings.csv")
    _write_csv(emb_path, header, rows)
    outputs = [emb_path]

    if args.tsne:
        stacked = np.concatenate([m.T for m in matrices], axis=0)
        config = TsneConfig(perplexity=args.perplexity,
                            iterations=args.iterations, seed=args.seed)
        coords, info = tsne_embed(stacked, config)
        tsne_rows = []
        k = 0
        for name, feats in zip(names, matrices):
            for t in range(feats.shape[1]):
                tsne_rows.append((name, t, repr(float(coords[k, 0])),
                                  repr(float(coords[k, 1]))))
                k += 1
        tsne_path = os.path.join(args.out_dir, "tsne.csv")
        _write_csv(tsne_path, "sample,frame,x,y", tsne_rows)
        outputs.append(tsne_path)
        print(f"t-SNE KL {info['initial_kl']:.4f} -> {info['final_kl']:.4f}")

    io.write_manifest(args.out_dir, "features", {
        "weights": args.weights, "data_dir": args.data_dir, "tsne": args.tsne,
        "perplexity": args.perplexity, "iterations": args.iterations,
        "seed": args.seed, "out_dir": args.out_dir,
    }, outputs)
    print(f"wrote embeddings for {len(dataset)} samples")
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fcdlif",
        description="Arterial input function prediction from dynamic PET")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate paired phantom image/AIF files")
    p.add_argument("--n", type=int, default=4)
    p.add_argument("--grid", type=_parse_grid, default=(24, 16, 16))
    p.add_argument("--schedule", default=DEFAULT_SCHEDULE_SPEC)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--count-scale", type=float, default=100.0)
    p.add_argument("--no-noise", action="store_true")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=_cmd_simulate)

    for name, handler in (("train", _cmd_train), ("crossval", _cmd_crossval)):
        p = sub.add_parser(name, help=f"{name} on a simulated dataset")
        p.add_argument("--data-dir", required=True)
        p.add_argument("--epochs", type=int, default=50)
        p.add_argument("--lr", type=float, default=1e-4)
        p.add_argument("--folds", type=int, default=10)
        p.add_argument("--runs", type=int, default=1)
        p.add_argument("--no-augment", action="store_true")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--out-dir", required=True)
        p.set_defaults(func=handler)

    p = sub.add_parser("predict", help="predict an input function from an image")
    p.add_argument("--weights", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_predict)

    p = sub.add_parser("evaluate", help="metrics for predicted vs true curves")
    p.add_argument("--pred-dir", required=True)
    p.add_argument("--truth-dir", required=True)
    p.add_argument("--patlak", action="store_true")
    p.add_argument("--image-dir", default=None)
    p.add_argument("--ki-voxels", type=int, default=5000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("robustness", help="shift/truncation behavior of a model")
    p.add_argument("--weights", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--mode", choices=("shift", "truncate"), required=True)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=_cmd_robustness)

    p = sub.add_parser("calibrate", help="arterial-line calibration pipeline")
    p.add_argument("--trace", required=True)
    p.add_argument("--samples", required=True)
    p.add_argument("--delay", type=float, required=True)
    p.add_argument("--schedule", default=DEFAULT_SCHEDULE_SPEC)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=_cmd_calibrate)

    p = sub.add_parser("features", help="export encoder features (and t-SNE)")
    p.add_argument("--weights", required=True)
    p.add_argument("--data-dir", required=True)
    p.add_argument("--tsne", action="store_true")
    p.add_argument("--perplexity", type=float, default=30.0)
    p.add_argument("--iterations", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=_cmd_features)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except FcdlifError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: io: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
