"""Compare the compiled kernels with the numpy fallback.

Times each hot kernel on inputs shaped like a 320x240 frame, plus the
public stages built on them, and checks that both backends agree.

    python benchmarks/bench_kernels.py --repeat 5
"""
import argparse
import json
import sys
import timeit

import numpy as np
from scipy.spatial import Delaunay

from radarscale import kernels
from radarscale.geometry import interpolate_log, project_points
from radarscale.quasidense import assemble_quasi_dense, oracle_stack
from radarscale.synth import SceneSpec, frame_spec, render_gt, sample_lidar, sample_radar


def kernel_cases(width, height, seed):
    rng = np.random.default_rng(seed)
    n = width * height // 4
    zb = (rng.integers(0, width, n), rng.integers(0, height, n), rng.uniform(1, 80, n), height, width)

    m = min(2000, width * height // 4)
    flat = rng.choice(width * height, m, replace=False)
    py, px = np.divmod(flat, width)
    px, py = px.astype(float), py.astype(float)
    simplices = Delaunay(np.column_stack([px, py])).simplices
    raster = (simplices, px, py, np.log(rng.uniform(1, 80, m)), height, width)

    k = 64
    pw, ph = width // 10, height
    windows = np.column_stack([rng.integers(0, width - pw + 1, k), np.zeros(k, int),
                               np.full(k, pw), np.full(k, ph)])
    sizes = windows[:, 2] * windows[:, 3]
    offsets = np.concatenate([[0], np.cumsum(sizes)[:-1]])
    conf = (rng.random(sizes.sum()) < 0.3).astype(float)
    argmax = (windows, conf, offsets, rng.uniform(1, 80, k), 0.5, height, width)
    return {
        "zbuffer": lambda: kernels.zbuffer(*zb),
        "raster_log": lambda: kernels.raster_log(*raster),
        "assemble_argmax": lambda: kernels.assemble_argmax(*argmax),
    }


def stage_cases(width, height, seed):
    spec = frame_spec(SceneSpec(width=width, height=height, radar_points=64, seed=seed), 0, n_boxes=6)
    gt = render_gt(spec)
    K = spec.intrinsics
    sparse = project_points(sample_lidar(spec, gt), K)
    d_int = interpolate_log(sparse)
    stack = oracle_stack(sample_radar(spec, gt), K, d_int, width // 10, height)
    lidar = sample_lidar(spec, gt)
    return {
        "project_points": lambda: project_points(lidar, K),
        "interpolate_log": lambda: interpolate_log(sparse),
        "assemble_quasi_dense": lambda: assemble_quasi_dense(stack, 0.5),
    }


def outputs_equal(a, b):
    a = a if isinstance(a, tuple) else (a.values, a.valid)
    b = b if isinstance(b, tuple) else (b.values, b.valid)
    return all(np.allclose(x, y, rtol=1e-12, atol=0) for x, y in zip(a, b))


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--width", type=int, default=320)
    ap.add_argument("--height", type=int, default=240)
    ap.add_argument("--repeat", type=int, default=5, help="best-of repetitions")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--json", help="also write results to this file")
    args = ap.parse_args(argv)

    backends = kernels.available_backends()
    if "compiled" not in backends:
        print("compiled extension not built; timing the numpy fallback only", file=sys.stderr)
    cases = {**kernel_cases(args.width, args.height, args.seed), **stage_cases(args.width, args.height, args.seed)}

    results = {}
    reference = {}
    for backend in backends:
        previous = kernels.use_backend(backend)
        try:
            for name, fn in cases.items():
                timer = timeit.Timer(fn)
                number, _ = timer.autorange()
                best = min(timer.repeat(args.repeat, number)) / number
                results.setdefault(name, {})[backend] = best
                out = fn()
                if name in reference and not outputs_equal(reference[name], out):
                    raise SystemExit(f"{name}: backends disagree")
                reference.setdefault(name, out)
        finally:
            kernels.use_backend(previous)

    header = f"{'case':<22}" + "".join(f"{b + ' (ms)':>16}" for b in backends)
    if len(backends) > 1:
        header += f"{'speedup':>10}"
    print(f"{args.width}x{args.height}, best of {args.repeat}")
    print(header)
    for name, times in results.items():
        line = f"{name:<22}" + "".join(f"{1e3 * times[b]:>16.3f}" for b in backends)
        if len(backends) > 1:
            line += f"{times['python'] / times['compiled']:>9.1f}x"
        print(line)
    if args.json:
        with open(args.json, "w") as f:
            json.dump({"width": args.width, "height": args.height, "seconds": results}, f, indent=2)


if __name__ == "__main__":
    main()
