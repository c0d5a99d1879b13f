"""Time the numba raster kernels against their numpy twins.

    python benchmarks/bench_kernels.py [--repeat N]

Both paths are called directly through the kernel tables, so the
SIGNGAN_DISABLE_NUMBA flag does not matter here.  The first numba call
is a warm-up and excluded from timing.
"""

import argparse
import time

import numpy as np

from signgan import _kernels as K
from signgan.pose import default_layout, to_pixels
from signgan.synthdata import make_styles, make_vocabulary, sequence_from_tokens


def cases(rng):
    layout = default_layout()
    seq = sequence_from_tokens(list(range(8)), make_vocabulary(20, 0, layout), layout)
    pix = np.stack([to_pixels(f.coords, (256, 256)) for f in seq]).astype(np.int64)
    valid = np.ones(layout.n_joints, dtype=np.bool_)
    limbs = np.asarray(layout.limbs, dtype=np.int64)
    gray = rng.uniform(0, 255, (60, 60))
    color = np.array(make_styles(1)[0].torso_color, dtype=np.uint8)
    verts = np.array([[40.0, 50.0], [45.0, 200.0], [210.0, 190.0], [200.0, 60.0]])

    def limb_lines(kern):
        for p in pix:
            out = np.zeros((len(limbs), 256, 256))
            kern(out, p, valid, limbs)

    def capsules(kern):
        img = np.zeros((256, 256, 3), dtype=np.uint8)
        for k in range(200):
            kern(img, 10.0 + k, 20.0, 200.0, 30.0 + k * 0.5, 3.0, color)

    def polygon(kern):
        img = np.zeros((256, 256, 3), dtype=np.uint8)
        for _ in range(50):
            kern(img, verts, color)

    def laplacian(kern):
        for _ in range(500):
            kern(gray)

    return {
        "limb_lines": (limb_lines, "limb_lines"),
        "capsule": (capsules, "capsule"),
        "convex_polygon": (polygon, "convex_polygon"),
        "laplacian_variance": (laplacian, "laplacian_variance"),
    }


def bench(fn, kern, repeat):
    best = float("inf")
    for _ in range(repeat):
        t = time.perf_counter()
        fn(kern)
        best = min(best, time.perf_counter() - t)
    return best


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--repeat", type=int, default=3)
    args = p.parse_args()
    rng = np.random.default_rng(0)
    print(f"numba available: {K.HAS_NUMBA}")
    print(f"{'kernel':20s} {'numpy s':>10s} {'numba s':>10s} {'speed-up':>9s}")
    for name, (fn, key) in cases(rng).items():
        t_np = bench(fn, K.NUMPY_KERNELS[key], args.repeat)
        if K.HAS_NUMBA:
            fn(K.NUMBA_KERNELS[key])
            t_nb = bench(fn, K.NUMBA_KERNELS[key], args.repeat)
            print(f"{name:20s} {t_np:10.4f} {t_nb:10.4f} {t_np / t_nb:8.1f}x")
        else:
            print(f"{name:20s} {t_np:10.4f} {'-':>10s}")


if __name__ == "__main__":
    main()
