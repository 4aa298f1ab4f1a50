"""Command-line interface.

Exit codes: 0 ok, 1 some frames failed, 2 training diverged, 3 I/O error,
4 usage error or shape mismatch.
"""
from __future__ import annotations

import argparse
import csv
import io as _stringio
import logging
import math
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import io
from .align import AlignmentParams, AlignSpace, build_correspondences, estimate_const, fit_var
from .config import Config, ConfigError, load_config, override, parse_caps, parse_methods
from .core import EmptyDomain, MapKind, RadarScaleError, ShapeMismatch, invert_inverse_map, require_same_shape
from .dataset import FrameData, generate_frame, load_frame, read_index, write_index
from .geometry import project_points
from .metrics import CSV_COLUMNS, MetricsReport, evaluate_ranges, reports_to_csv
from .pipeline import PipelineConfig, run_frame
from .refine import DivergenceDetected, RefinerParams, TrainConfig, TrainingFrame, train_refiner

log = logging.getLogger("radarscale")

EXIT_OK, EXIT_PARTIAL, EXIT_DIVERGED, EXIT_IO, EXIT_USAGE = range(5)
RENDER_VMAX = 10.0  # meters of absolute error mapped to the top of the ramp


class UsageError(Exception):
    pass


def pool_map(fn, items, jobs: int):
    """Ordered map over ``items`` with up to ``jobs`` threads."""
    items = list(items)
    if jobs <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=jobs) as ex:
        return list(ex.map(fn, items))


def _guarded(fn):
    """Wrap ``fn`` so exceptions become values; one bad frame must not stop the rest."""
    def call(x):
        try:
            return fn(x), None
        except (OSError, ValueError, ArithmeticError) as exc:
            return None, exc
    return call


def _config(args) -> Config:
    cfg = load_config(args.config)
    return override(
        cfg,
        seed=args.seed,
        ga=_parse_ga(args.ga),
        tau=args.tau,
        range_caps=_parse_caps(args.range_caps),
    )


def _parse_ga(text):
    if text is None:
        return None
    try:
        return parse_methods(text)
    except ValueError as exc:
        raise UsageError(f"--ga: {exc}") from None


def _parse_caps(text):
    if text is None:
        return None
    try:
        return parse_caps(text)
    except ValueError as exc:
        raise UsageError(f"--range-caps: {exc}") from None


def _pipeline_config(cfg: Config, method: str) -> PipelineConfig:
    return PipelineConfig(
        ga=method, space=cfg.align_space, tau=cfg.tau,
        patch_w=cfg.patch_w, patch_h=cfg.patch_h, seed=cfg.seed, ransac_refit=cfg.ransac_refit,
    )


def _mono(frame: FrameData, space: AlignSpace):
    return frame.mono if space is AlignSpace.INVERSE_DEPTH else invert_inverse_map(frame.mono)


def _confidence(frame: FrameData, cfg: Config):
    if cfg.confidence == "files":
        return io.read_confidence(frame.path / "conf", frame.radar, frame.K)
    if frame.d_int is None:
        raise FileNotFoundError(f"{frame.path}: oracle confidence needs dint.pfm")
    return None


def _const_params(cfg: Config, frames, jobs) -> AlignmentParams:
    """Dataset-wide scale: configured, or the mean per-frame Var scale."""
    if cfg.const_scale is not None:
        return AlignmentParams(cfg.const_scale, 0.0, cfg.align_space)

    def scale(frame):
        corr = build_correspondences(_mono(frame, cfg.align_space), project_points(frame.radar, frame.K))
        return fit_var(corr, cfg.align_space).scale

    scales = []
    for frame, (s, err) in zip(frames, pool_map(_guarded(scale), frames, jobs)):
        if err is not None:
            log.warning("%s: excluded from the constant scale: %s", frame.name, err)
        else:
            scales.append(s)
    return AlignmentParams(estimate_const(scales).scale, 0.0, cfg.align_space)


def _load_frames(data_dir, jobs):
    names = read_index(data_dir)
    loaded = pool_map(_guarded(lambda n: load_frame(data_dir, n)), names, jobs)
    frames, failed = [], 0
    for name, (frame, err) in zip(names, loaded):
        if err is not None:
            log.error("%s: cannot load frame: %s", name, err)
            failed += 1
        else:
            frames.append(frame)
    return frames, failed


# ---------------------------------------------------------------- gen

def cmd_gen(args) -> int:
    cfg = _config(args)
    out = io.ensure_dir(args.out_dir)
    names = pool_map(lambda i: generate_frame(cfg, i, out), range(cfg.frames), args.jobs)
    write_index(out, names)
    print(f"wrote {len(names)} frames to {out}")
    return EXIT_OK


# ---------------------------------------------------------------- run

def _run_one(frame: FrameData, cfg: Config, method: str, refiner, const_params, out_dir: Path):
    pcfg = _pipeline_config(cfg, method)
    res = run_frame(
        _mono(frame, cfg.align_space), frame.radar, frame.K, pcfg,
        d_int=frame.d_int, confidence=_confidence(frame, cfg), refiner=refiner,
        frame_id=frame.frame_id, const_params=const_params,
    )
    ref = frame.reference(cfg.eval_reference)
    rows = []
    for stage, depth in (("ga", res.d_ga), ("final", res.d_hat)):
        try:
            reports = evaluate_ranges(depth, ref, cfg.range_caps)
        except EmptyDomain as exc:
            log.warning("%s: no %s metrics: %s", frame.name, stage, exc)
            continue
        rows += [((frame.name, stage), rep) for rep in reports]

    d = io.ensure_dir(out_dir / frame.name)
    for fname, m in (("d_ga", res.d_ga), ("z_ga", res.z_ga), ("dq", res.d_q), ("sq", res.s_q),
                     ("r", res.r), ("dhat", res.d_hat)):
        io.save_map(d / f"{fname}.pfm", m)
    p = res.params
    (d / "alignment.txt").write_text(f"{method} {p.scale!r} {p.offset!r} {p.space.value}\n")
    return rows


def _ablation_csv(per_method) -> str:
    """One row per (method, cap): mean metrics over frames plus median MAE."""
    buf = _stringio.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    metric_names = CSV_COLUMNS[2:]
    w.writerow(["method", "range_cap", "n_frames"] + list(metric_names) + ["median_mae"])
    for method, rows in per_method:
        final = [rep for (name, stage), rep in rows if stage == "final"]
        for cap in sorted({rep.range_cap for rep in final}):
            reps = [rep for rep in final if rep.range_cap == cap]
            means = [math.fsum(getattr(r, k) for r in reps) / len(reps) for k in metric_names]
            median = float(np.median([r.mae for r in reps]))
            w.writerow([method, repr(cap), len(reps)] + [repr(v) for v in means] + [repr(median)])
    return buf.getvalue()


def cmd_run(args) -> int:
    cfg = _config(args)
    out = io.ensure_dir(args.out_dir)
    refiner = io.load_checkpoint(cfg.checkpoint) if cfg.residual == "checkpoint" else None
    frames, failed = _load_frames(args.data_dir, args.jobs)
    per_method = []
    for method in cfg.ga:
        m_out = out if len(cfg.ga) == 1 else io.ensure_dir(out / method)
        const = _const_params(cfg, frames, args.jobs) if method == "const" else None
        results = pool_map(_guarded(lambda f: _run_one(f, cfg, method, refiner, const, m_out)), frames, args.jobs)
        rows = []
        for frame, (frame_rows, err) in zip(frames, results):
            if err is not None:
                log.error("%s (%s): frame skipped: %s", frame.name, method, err)
                failed += 1
            else:
                rows += frame_rows
        (m_out / "metrics.csv").write_text(reports_to_csv(rows, ("frame", "stage")))
        per_method.append((method, rows))
    if len(cfg.ga) > 1:
        (out / "ga_ablation.csv").write_text(_ablation_csv(per_method))
    return EXIT_PARTIAL if failed else EXIT_OK


# ---------------------------------------------------------------- train-sml

def _training_frame(frame: FrameData, cfg: Config, const) -> TrainingFrame:
    if frame.d_gt is None or frame.d_int is None:
        raise FileNotFoundError(f"{frame.path}: training needs dgt.pfm and dint.pfm")
    res = run_frame(
        _mono(frame, cfg.align_space), frame.radar, frame.K, _pipeline_config(cfg, cfg.ga[0]),
        d_int=frame.d_int, confidence=_confidence(frame, cfg),
        frame_id=frame.frame_id, const_params=const,
    )
    return TrainingFrame(res.z_ga, res.inv_s_q, frame.d_gt, frame.d_int)


def _write_history(path: Path, history) -> None:
    lines = ["iteration,loss"] + [f"{i},{v!r}" for i, v in enumerate(history)]
    path.write_text("\n".join(lines) + "\n")


def cmd_train_sml(args) -> int:
    cfg = _config(args)
    ckpt = Path(args.checkpoint)
    io.ensure_dir(ckpt.parent)
    frames, failed = _load_frames(args.data_dir, args.jobs)
    const = _const_params(cfg, frames, args.jobs) if cfg.ga[0] == "const" else None
    batch = []
    for frame, (tf, err) in zip(frames, pool_map(_guarded(lambda f: _training_frame(f, cfg, const)), frames, args.jobs)):
        if err is not None:
            log.error("%s: excluded from training: %s", frame.name, err)
            failed += 1
        else:
            batch.append(tf)
    if not batch:
        log.error("no usable training frame")
        return EXIT_PARTIAL
    tcfg = TrainConfig(
        lr=cfg.lr, iterations=cfg.iterations, lambda_gt=cfg.lambda_gt, beta=cfg.beta, seed=cfg.seed,
        momentum=cfg.momentum, guarded=cfg.guarded, variant=cfg.loss_variant,
    )
    init = RefinerParams.init(cfg.seed, out_scale=cfg.init_scale)
    history_path = ckpt.with_name(ckpt.name + ".loss.csv")
    try:
        if args.jobs > 1:
            with ThreadPoolExecutor(max_workers=args.jobs) as ex:
                result = train_refiner(init, batch, tcfg, map_fn=ex.map)
        else:
            result = train_refiner(init, batch, tcfg)
    except DivergenceDetected as exc:
        _write_history(history_path, exc.history)
        log.error("training diverged after %d iterations: %s", len(exc.history), exc)
        return EXIT_DIVERGED
    io.save_checkpoint(ckpt, result.params)
    _write_history(history_path, result.history)
    first, last = result.history[0], result.history[-1]
    ratio = last / first if first > 0 else float("nan")
    print(f"initial_loss={first!r} final_loss={last!r} ratio={ratio!r}")
    return EXIT_PARTIAL if failed else EXIT_OK


# ---------------------------------------------------------------- eval

def cmd_eval(args) -> int:
    caps = _parse_caps(args.range_caps) or (50.0, 70.0, 80.0)
    names = read_index(args.data_dir)

    def one(name):
        frame = load_frame(args.data_dir, name)
        pred = io.load_map(Path(args.run_dir) / name / f"{args.map}.pfm", MapKind.DEPTH)
        return [((name,), rep) for rep in evaluate_ranges(pred, frame.reference(args.reference), caps)]

    rows, failed = [], 0
    for name, (frame_rows, err) in zip(names, pool_map(_guarded(one), names, args.jobs)):
        if err is not None:
            log.error("%s: not evaluated: %s", name, err)
            failed += 1
        else:
            rows += frame_rows
    for cap in caps:
        reps = [rep for _, rep in rows if rep.range_cap == cap]
        if reps:
            means = {k: math.fsum(getattr(r, k) for r in reps) / len(reps) for k in CSV_COLUMNS[2:]}
            rows.append((("mean",), MetricsReport(cap, sum(r.n_pixels for r in reps), **means)))
    text = reports_to_csv(rows, ("frame",))
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_PARTIAL if failed else EXIT_OK


# ---------------------------------------------------------------- render

def error_ramp(err: np.ndarray, valid: np.ndarray, vmax: float = RENDER_VMAX) -> np.ndarray:
    """RGB image of absolute error; black where invalid.

    With ``e = clip(err / vmax, 0, 1)``: R = round(255 e),
    G = round(255 (1 - |2e - 1|)), B = round(255 (1 - e)).
    """
    e = np.clip(np.abs(err) / vmax, 0.0, 1.0)
    rgb = np.stack([e, 1.0 - np.abs(2.0 * e - 1.0), 1.0 - e], axis=-1)
    rgb = np.rint(255.0 * rgb).astype(np.uint8)
    rgb[~valid] = 0
    return rgb


def cmd_render(args) -> int:
    if not args.vmax > 0:
        raise UsageError("--vmax must be positive")
    pred = io.load_map(args.map_file, MapKind.DEPTH)
    gt = io.load_map(args.gt_file, MapKind.DEPTH)
    require_same_shape(pred, gt)
    valid = pred.valid & gt.valid
    io.write_ppm(args.out_image, error_ramp(np.where(valid, pred.values - gt.values, 0.0), valid, args.vmax))
    return EXIT_OK


# ---------------------------------------------------------------- main

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _positive_int(text):
    n = int(text)
    if n < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return n


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, help="override the config seed")
    common.add_argument("--ga", help="GA method(s), comma separated: const,var,ls,ransac")
    common.add_argument("--tau", type=float, help="confidence threshold in (0, 1)")
    common.add_argument("--range-caps", help="comma-separated evaluation caps in meters")
    common.add_argument("--jobs", type=_positive_int, default=1, help="worker threads")

    parser = _Parser(prog="radarscale", description="Radar-camera metric depth pipeline.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen", parents=[common], help="generate a synthetic dataset")
    p.add_argument("config")
    p.add_argument("out_dir")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("run", parents=[common], help="run the pipeline on a dataset")
    p.add_argument("config")
    p.add_argument("data_dir")
    p.add_argument("out_dir")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("train-sml", parents=[common], help="train the toy scale-map refiner")
    p.add_argument("config")
    p.add_argument("data_dir")
    p.add_argument("checkpoint")
    p.set_defaults(func=cmd_train_sml)

    p = sub.add_parser("eval", parents=[common], help="evaluate saved depth maps")
    p.add_argument("data_dir")
    p.add_argument("run_dir")
    p.add_argument("--map", default="dhat", help="map stem inside each frame directory")
    p.add_argument("--reference", choices=("gt", "dgt", "dint"), default="gt")
    p.add_argument("-o", "--out", help="CSV output path (default stdout)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("render", parents=[common], help="render an absolute-error image")
    p.add_argument("map_file")
    p.add_argument("gt_file")
    p.add_argument("out_image")
    p.add_argument("--vmax", type=float, default=RENDER_VMAX, help="error (m) at the top of the ramp")
    p.set_defaults(func=cmd_render)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, ConfigError, ShapeMismatch) as exc:
        print(f"radarscale: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, io.FormatError) as exc:
        print(f"radarscale: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except RadarScaleError as exc:
        print(f"radarscale: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
