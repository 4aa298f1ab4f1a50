"""Acceptance criteria, one test each.

Every test records a single ``PASS``/``FAIL`` line (collected by conftest and
printed in the terminal summary) before asserting, so a failing criterion
still reports its measured numbers. Thresholds are the stated ones; nothing
here is tuned to make a criterion pass.
"""
import math
import time

import numpy as np
import pytest

from radarscale import kernels
from radarscale.align import (
    Correspondences,
    build_correspondences,
    estimate_const,
    fit_ls,
    fit_ransac,
    fit_var,
)
from radarscale.cli import main
from radarscale.core import FloatMap, MapKind, PointCloud
from radarscale.geometry import interpolate_log, project_points
from radarscale.metrics import evaluate
from radarscale.pipeline import PipelineConfig, run_frame
from radarscale.quasidense import (
    ConfidencePatch,
    ConfidenceStack,
    Window,
    assemble_quasi_dense,
    bce_loss,
    oracle_stack,
)
from radarscale.refine import (
    RefinerParams,
    TrainConfig,
    TrainingFrame,
    batch_loss,
    loss_and_grad,
    smooth_l1,
    train_refiner,
)
from radarscale.synth import SceneSpec, distort_mono, frame_spec, render_gt, sample_lidar, sample_radar


def criterion(record_property, name, ok, detail):
    line = f"{'PASS' if ok else 'FAIL'} {name}: {detail}"
    print(line)
    record_property("acceptance", line)
    assert ok, line


def synthetic(spec):
    gt = render_gt(spec)
    K = spec.intrinsics
    d_gt = project_points(sample_lidar(spec, gt), K)
    return gt, K, sample_radar(spec, gt), distort_mono(spec, gt), d_gt, interpolate_log(d_gt)


def test_end_to_end_identity(record_property):
    worst_err, worst_time = 0.0, 0.0
    for i in range(5):
        spec = frame_spec(SceneSpec(width=320, height=240, radar_points=64, seed=1), i, n_boxes=6)
        gt = render_gt(spec)
        K = spec.intrinsics
        lidar, radar, mono = sample_lidar(spec, gt), sample_radar(spec, gt), distort_mono(spec, gt)
        # timed: LiDAR densification plus every pipeline stage
        t0 = time.perf_counter()
        d_int = interpolate_log(project_points(lidar, K))
        res = run_frame(mono, radar, K, PipelineConfig(ga="ls"), d_int=d_int)
        worst_time = max(worst_time, time.perf_counter() - t0)
        rep = evaluate(res.d_hat, gt, 80.0)
        worst_err = max(worst_err, rep.mae, rep.rmse)
    ok = worst_err <= 1e-6 and worst_time < 1.0
    criterion(record_property, "end-to-end identity",
              ok, f"max MAE/RMSE {worst_err:.3g} mm (<= 1e-6), max runtime {worst_time:.3f} s (< 1 s), 5 frames 320x240")


def test_ga_exactness(record_property):
    worst = 0.0
    base = SceneSpec(width=160, height=120, radar_points=64, seed=2)
    for i in range(100):
        spec = frame_spec(base, i, n_boxes=4, a_range=(0.5, 4.0), b_range=(0.0, 0.1))
        gt = render_gt(spec)
        mono = distort_mono(spec, gt)
        p = fit_ls(build_correspondences(mono, project_points(sample_radar(spec, gt), spec.intrinsics)))
        # the fit maps the prediction to inverse depth, so it estimates (1/a, -b/a)
        a_hat, b_hat = 1.0 / p.scale, -p.offset / p.scale
        worst = max(worst, abs(a_hat - spec.mono_a) / spec.mono_a, abs(b_hat - spec.mono_b) / spec.mono_b)
    criterion(record_property, "GA exactness", worst <= 1e-9,
              f"max relative error on (a, b) over 100 frames {worst:.3g} (<= 1e-9)")


def test_ransac_robustness(record_property):
    # 30 % of the correspondences get their depth multiplied by 10
    base = SceneSpec(width=160, height=120, radar_points=100, seed=11)
    matched = ls_off = both = 0
    for i in range(100):
        spec = frame_spec(base, i, n_boxes=6, a_range=(0.5, 4.0), b_range=(0.0, 0.1))
        gt = render_gt(spec)
        c = build_correspondences(distort_mono(spec, gt), project_points(sample_radar(spec, gt), spec.intrinsics))
        n = len(c)
        bad = np.random.default_rng([11, i]).choice(n, round(0.3 * n), replace=False)
        depth = c.depth.copy()
        depth[bad] *= 10.0
        noisy = Correspondences(c.pred, depth, c.pixels)
        ref = fit_ls(noisy.subset(np.setdiff1d(np.arange(n), bad)))
        p = fit_ransac(noisy, 11, frame_id=i)
        ls = fit_ls(noisy)
        m = abs(p.scale - ref.scale) <= 1e-6 and abs(p.offset - ref.offset) <= 1e-6
        off = abs(ls.scale - ref.scale) > 1e-5 or abs(ls.offset - ref.offset) > 1e-5
        matched += m
        ls_off += off
        both += m and off
    criterion(record_property, "RANSAC robustness", both >= 95,
              f"RANSAC within 1e-6 of clean LS on {matched}/100, plain LS off by > 1e-5 on {ls_off}/100, "
              f"both on {both}/100 (needs >= 95)")


def test_quasi_dense_gate(record_property):
    assigned = violations = 0
    base = SceneSpec(width=96, height=72, radar_points=120, radar_sigma=0.8, radar_jitter=1.5,
                     radar_outliers=0.2, lidar_stride=2, seed=3)
    taus = [0.01, 0.25, 0.5, 0.75, 0.99] + list(np.random.default_rng(3).uniform(0, 1, 5))
    for i in range(10):
        spec = frame_spec(base, i, n_boxes=5)
        _, K, radar, _, _, d_int = synthetic(spec)
        stack = oracle_stack(radar, K, d_int, 12, 72)
        for tau in taus:
            d_q = assemble_quasi_dense(stack, float(tau))
            for v in range(d_q.height):
                for u in range(d_q.width):
                    if d_q.valid[v, u]:
                        assigned += 1
                        if not (d_int.valid[v, u] and abs(d_int.values[v, u] - d_q.values[v, u]) < 0.5):
                            violations += 1
    criterion(record_property, "quasi-dense gate", violations == 0 and assigned > 0,
              f"{violations} violations among {assigned} assigned pixels (10 frames x 10 taus)")


def _brute_force(stack, tau):
    out = np.zeros((stack.height, stack.width))
    valid = np.zeros((stack.height, stack.width), bool)
    for v in range(stack.height):
        for u in range(stack.width):
            best, best_idx = -math.inf, None
            for p in stack.patches:
                u0, v0, w, h = p.window
                if u0 <= u < u0 + w and v0 <= v < v0 + h:
                    c = p.conf[v - v0, u - u0]
                    if c > best or (c == best and p.point_index < best_idx):
                        best, best_idx = c, p.point_index
            if best_idx is not None and best > tau:
                out[v, u] = stack.cloud.z[best_idx]
                valid[v, u] = True
    return out, valid


def test_assembly_matches_brute_force(record_property):
    mismatches = 0
    backends = kernels.available_backends()
    for seed in range(50):
        rng = np.random.default_rng([50, seed])
        H, W = 40, 48
        n = int(rng.integers(1, 9))
        patches = []
        for i in range(n):
            w, h = int(rng.integers(1, 33)), int(rng.integers(1, 33))
            win = Window(int(rng.integers(0, W - w + 1)), int(rng.integers(0, H - h + 1)), w, h)
            # coarse levels force ties between points
            patches.append(ConfidencePatch(i, win, rng.integers(0, 9, (h, w)) / 8.0))
        order = rng.permutation(n)
        cloud = PointCloud(np.column_stack([np.zeros(n), np.zeros(n), rng.uniform(1, 80, n)]))
        stack = ConfidenceStack(W, H, [patches[k] for k in order], cloud)
        tau = float(rng.uniform(0.05, 0.95))
        ref, ref_valid = _brute_force(stack, tau)
        for b in backends:
            previous = kernels.use_backend(b)
            try:
                out = assemble_quasi_dense(stack, tau)
            finally:
                kernels.use_backend(previous)
            if not (np.array_equal(out.valid, ref_valid) and np.array_equal(out.values, ref)):
                mismatches += 1
    criterion(record_property, "assembly oracle equivalence", mismatches == 0,
              f"{mismatches} mismatching instances of 50 (backends: {', '.join(backends)})")


def test_loss_correctness(record_property):
    worst_jump = 0.0
    analytic_ok = True
    for beta in (0.1, 0.5, 1.0, 2.0, 7.5):
        for variant in ("standard", "printed"):
            target = FloatMap.dense([[1.0]], MapKind.DEPTH)
            lo = smooth_l1(FloatMap.dense([[1.0 + beta - 1e-9]], MapKind.DEPTH), target, beta, variant)
            hi = smooth_l1(FloatMap.dense([[1.0 + beta + 1e-9]], MapKind.DEPTH), target, beta, variant)
            worst_jump = max(worst_jump, abs(hi - lo))
        # both branches evaluate to beta / 2 at |r| = beta
        analytic_ok &= math.isclose(0.5 * beta * beta / beta, beta - 0.5 * beta, rel_tol=1e-15)
    rng = np.random.default_rng(6)
    labels = ConfidencePatch(0, Window(0, 0, 7, 5), rng.integers(0, 2, (5, 7)).astype(float))
    half = ConfidencePatch(0, Window(0, 0, 7, 5), np.full((5, 7), 0.5))
    bce_err = abs(bce_loss(half, labels) - math.log(2))
    ok = worst_jump < 1e-8 and analytic_ok and bce_err <= 1e-12
    criterion(record_property, "loss correctness", ok,
              f"max jump at beta +/- 1e-9 {worst_jump:.3g} (< 1e-8), analytic branch match {analytic_ok}, "
              f"|bce(0.5) - ln 2| {bce_err:.3g} (<= 1e-12)")


def test_gradient_check(record_property):
    t0 = time.perf_counter()
    worst = 0.0
    cfg = TrainConfig()
    for inst in range(10):
        rng = np.random.default_rng(inst)
        H = W = 16
        d = rng.uniform(2, 30, (H, W))
        z = FloatMap.dense(1 / (d * np.exp(rng.normal(0, 0.2, (H, W)))), MapKind.INVERSE_DEPTH)
        inv = FloatMap.dense(rng.uniform(0.8, 1.2, (H, W)), MapKind.SCALE)
        frame = TrainingFrame(z, inv, FloatMap(d, rng.random((H, W)) < 0.3, MapKind.DEPTH),
                              FloatMap.dense(d, MapKind.DEPTH))
        p = RefinerParams.init(inst, out_scale=0.1)
        _, grads = loss_and_grad(p, frame, cfg)
        g = np.concatenate([a.ravel() for a in grads])
        flat = p.flat()

        def loss(x):
            return batch_loss(RefinerParams.from_flat(x), [frame], cfg)

        # every bias, 300 random weights, 20 random directions
        sizes = [a.size for a in p.arrays()]
        starts = np.concatenate([[0], np.cumsum(sizes)[:-1]])
        bias_idx = np.concatenate([np.arange(s, s + n) for s, n, k in zip(starts, sizes, range(6)) if k % 2])
        weight_idx = np.setdiff1d(np.arange(flat.size), bias_idx)
        idx = np.concatenate([bias_idx, rng.choice(weight_idx, 300, replace=False)])
        for i in idx:
            h = 1e-5 * max(1.0, abs(flat[i]))
            e = np.zeros_like(flat)
            e[i] = h
            num = (loss(flat + e) - loss(flat - e)) / (2 * h)
            worst = max(worst, abs(num - g[i]) / max(abs(num), abs(g[i]), 1e-6))
        for _ in range(20):
            v = rng.standard_normal(flat.size)
            h = 1e-5 * np.linalg.norm(flat) / np.linalg.norm(v)
            num = (loss(flat + h * v) - loss(flat - h * v)) / (2 * h)
            ana = g @ v
            worst = max(worst, abs(num - ana) / max(abs(num), abs(ana), 1e-6))
    elapsed = time.perf_counter() - t0
    criterion(record_property, "gradient check", worst < 1e-4 and elapsed < 30,
              f"max relative error {worst:.3g} (< 1e-4) over 10 instances of 16x16, {elapsed:.1f} s (< 30 s)")


# Pinned by the oracle run: ratio 0.0156 after 500 guarded momentum iterations.
OVERFIT_RATIO_BOUND = 0.10


def test_overfit(record_property):
    base = SceneSpec(width=64, height=48, radar_points=300, radar_row_bias=0, radar_sigma=0.05,
                     mono_a=2.0, mono_b=0.01, mono_gamma=0.1, lidar_stride=1)
    spec = frame_spec(base, 1, n_boxes=5)
    _, K, radar, mono, d_gt, d_int = synthetic(spec)
    res = run_frame(mono, radar, K, PipelineConfig(ga="ls", patch_w=16), d_int=d_int)
    frame = TrainingFrame(res.z_ga, res.inv_s_q, d_gt, d_int)
    out = train_refiner(RefinerParams.init(0), [frame], TrainConfig(iterations=500))
    ratio = out.history[-1] / out.history[0]
    criterion(record_property, "overfit", ratio <= OVERFIT_RATIO_BOUND,
              f"final/initial SML loss {ratio:.4f} (<= {OVERFIT_RATIO_BOUND}), "
              f"{out.history[0]:.4f} -> {out.history[-1]:.4f}")


@pytest.mark.slow
def test_pipeline_improvement(record_property):
    base = SceneSpec(width=64, height=48, radar_points=100, radar_row_bias=2, radar_sigma=0.1,
                     radar_jitter=0.5, mono_gamma=0.1, lidar_stride=2, seed=7)

    def make(i):
        spec = frame_spec(base, i, n_boxes=5, a_range=(0.5, 4.0), b_range=(0.0, 0.05))
        return synthetic(spec)

    cfg = PipelineConfig(ga="ls", patch_w=8)
    train = []
    for i in range(8):
        _, K, radar, mono, d_gt, d_int = make(1000 + i)
        res = run_frame(mono, radar, K, cfg, d_int=d_int)
        train.append(TrainingFrame(res.z_ga, res.inv_s_q, d_gt, d_int))
    refiner = train_refiner(RefinerParams.init(0), train, TrainConfig(iterations=200)).params

    test = [make(i) for i in range(200)]
    ga_mae, final_mae, const_mae = [], [], []
    scales = [fit_var(build_correspondences(mono, project_points(radar, K))).scale
              for _, K, radar, mono, _, _ in test]
    const = estimate_const(scales)
    for gt, K, radar, mono, _, d_int in test:
        res = run_frame(mono, radar, K, cfg, d_int=d_int, refiner=refiner)
        ga_mae.append(evaluate(res.d_ga, gt, 80.0).mae)
        final_mae.append(evaluate(res.d_hat, gt, 80.0).mae)
        c = run_frame(mono, radar, K, PipelineConfig(ga="const", patch_w=8), d_int=d_int, const_params=const)
        const_mae.append(evaluate(c.d_ga, gt, 80.0).mae)
    ga_mean, final_mean = float(np.mean(ga_mae)), float(np.mean(final_mae))
    ls_med, const_med = float(np.median(ga_mae)), float(np.median(const_mae))
    ok = final_mean < ga_mean and ls_med < const_med
    criterion(record_property, "pipeline improvement", ok,
              f"mean MAE@80 GA {ga_mean:.0f} mm -> full {final_mean:.0f} mm; "
              f"median MAE@80 LS {ls_med:.0f} mm vs Const {const_med:.0f} mm (200 frames)")


def test_metrics_cross_check(record_property):
    def dmap(vals):
        return FloatMap.dense(np.array([vals], float), MapKind.DEPTH)

    rep = evaluate(dmap([2.0, 4.0]), dmap([1.0, 5.0]), 80.0)
    hand = rep.mae == 1000.0 and rep.rmse == 1000.0 and abs(rep.absrel - 0.6) <= 1e-15 and rep.delta1 == 0.0
    perfect = evaluate(dmap([3.0, 7.0]), dmap([3.0, 7.0]), 80.0)
    hand &= perfect.mae == 0.0 and perfect.rmse == 0.0 and perfect.delta1 == 1.0
    capped = evaluate(dmap([10.0, 10.0]), dmap([90.0, 10.0]), 80.0)
    hand &= capped.n_pixels == 1
    rng = np.random.default_rng(1000)
    bad = 0
    for _ in range(1000):
        n = int(rng.integers(1, 50))
        gt = rng.uniform(0.1, 80, n)
        pred = np.exp(np.log(gt) + rng.normal(0, rng.uniform(0.01, 2)))
        r = evaluate(dmap(pred), dmap(gt), 80.0)
        bad += not r.mae <= r.rmse * (1 + 1e-12)
    criterion(record_property, "metrics cross-check", hand and bad == 0,
              f"hand cases exact: {hand}; MAE > RMSE on {bad} of 1000 fuzzed inputs")


def test_cli_determinism(record_property, tmp_path):
    def tree(root):
        return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}

    gen_cfg = tmp_path / "gen.cfg"
    gen_cfg.write_text("frames = 4\nwidth = 64\nheight = 48\nrandom_boxes = 3\nradar_points = 60\n"
                       "radar_sigma = 0.2\nradar_jitter = 0.5\nradar_outliers = 0.3\nmono_gamma = 0.1\n"
                       "a_min = 0.5\na_max = 4\nb_min = 0\nb_max = 0.1\nlidar_stride = 2\nlidar_sweeps = 2\n"
                       "write_confidence = true\nseed = 9\n")
    run_cfg = tmp_path / "run.cfg"
    run_cfg.write_text("ga = const,var,ls,ransac\nconfidence = files\n")
    train_cfg = tmp_path / "train.cfg"
    train_cfg.write_text("iterations = 5\nga = ransac\n")
    differing = []
    outputs = {}
    for tag, jobs in (("a", "1"), ("b", "1"), ("c", "8")):
        root = tmp_path / tag
        codes = [
            main(["gen", str(gen_cfg), str(root / "data"), "--jobs", jobs]),
            main(["run", str(run_cfg), str(root / "data"), str(root / "run"), "--jobs", jobs]),
            main(["train-sml", str(train_cfg), str(root / "data"), str(root / "ckpt" / "r.ckpt"), "--jobs", jobs]),
            main(["eval", str(root / "data"), str(root / "run" / "ls"), "-o", str(root / "eval.csv"), "--jobs", jobs]),
            main(["render", str(root / "run" / "ls" / "frame_0000" / "dhat.pfm"),
                  str(root / "data" / "frame_0000" / "gt.pfm"), str(root / "err.ppm")]),
        ]
        assert codes == [0] * 5, codes
        outputs[tag] = tree(root)
    for tag in ("b", "c"):
        for name in sorted(set(outputs["a"]) | set(outputs[tag])):
            if outputs["a"].get(name) != outputs[tag].get(name):
                differing.append(f"{tag}:{name}")
    n_files = len(outputs["a"])
    criterion(record_property, "determinism", not differing,
              f"{n_files} output files of gen/run/train-sml/eval/render compared across 2 runs and 1 vs 8 jobs, "
              f"{len(differing)} differ" + (f" ({', '.join(differing[:3])})" if differing else ""))
