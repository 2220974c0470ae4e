"""Time the compiled and pure-Python kernel backends side by side.

    python benchmarks/bench_kernels.py [--repeat 200]
"""
import argparse
import timeit

import numpy as np

from swarmcover.geometry import make_random_polygon, unit_square
from swarmcover.kernels import available_backends


def cases():
    rng = np.random.default_rng(0)
    for name, poly in (("square", unit_square()), ("random12", make_random_polygon(3, 12))):
        for n in (9, 50):
            p = rng.uniform(-0.5, 1.5, size=(n, 2))
            v = rng.uniform(-1, 1, size=(n, 2))
            yield f"{name} n={n}", poly.vertices, p, v, float(np.sqrt(1.0 / n))


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=200)
    args = ap.parse_args()
    backends = available_backends()
    print(f"{'case':<18}{'kernel':<24}" + "".join(f"{b:>14}" for b in backends) + "   speedup")
    for label, verts, p, v, r_d in cases():
        calls = {
            "project_points": lambda m: m.project_points(verts, p),
            "individual_potentials": lambda m: m.individual_potentials(verts, p, r_d),
            "classical_accels": lambda m: m.classical_accels(verts, p, v, r_d, 1.0, 1.0),
        }
        for kname, call in calls.items():
            report(label, kname, call, backends, args.repeat)
    # one LSTM time step at training batch size
    rng = np.random.default_rng(1)
    B, H = 512, 64
    z, x = rng.normal(size=(B, 4 * H)), rng.normal(size=(B, 2))
    W_x, b, c_prev = rng.normal(size=(2, 4 * H)), rng.normal(size=4 * H), rng.normal(size=(B, H))
    gates, c, tc, h = np.empty((B, 4 * H)), np.empty((B, H)), np.empty((B, H)), np.empty((B, H))
    dz = np.empty((B, 4 * H))
    calls = {
        "lstm_step_forward": lambda m: m.lstm_step_forward(z.copy(), x, W_x, b, c_prev, gates, c, tc, h),
        "lstm_step_backward": lambda m: m.lstm_step_backward(h, c.copy(), gates, c_prev, tc, dz),
    }
    for kname, call in calls.items():
        report(f"batch={B} H={H}", kname, call, backends, max(1, args.repeat // 10))


def report(label, kname, call, backends, repeat):
    times = {}
    for bname, mod in backends.items():
        call(mod)
        times[bname] = min(timeit.repeat(lambda: call(mod), number=repeat, repeat=3))
        times[bname] *= 1e6 / repeat
    speed = ""
    if "python" in times and "cython" in times:
        speed = f"{times['python'] / times['cython']:9.1f}x"
    print(f"{label:<18}{kname:<24}" + "".join(f"{t:>11.1f} us" for t in times.values()) + speed)


if __name__ == "__main__":
    main()
