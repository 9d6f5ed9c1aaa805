"""Time the numba kernels against the numpy fallback.

    python benchmarks/bench_kernels.py [--repeat N] [--quick]

Each case runs once untimed (numba compiles on first call), then the best
of ``--repeat`` timings is reported per backend.
"""

import argparse
import time

import numpy as np

from rtdnn import kernels, netgraph as ng, pipeline as pl, vocoder
from rtdnn.phoneset import default_phoneset


def _best(fn, repeat):
    fn()
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def cases(quick):
    rng = np.random.default_rng(0)
    x = rng.standard_normal(4000)
    r = np.array([x[: len(x) - k] @ x[k:] for k in range(11)])
    a = vocoder.reflection_to_lpc(rng.uniform(-0.9, 0.9, 10))
    P, Q = vocoder._sum_diff_polys(a)
    cp = vocoder._cos_coeffs(P)
    e = rng.standard_normal(16000)

    ps = default_phoneset()
    n_utts = 1 if quick else 2
    items = pl.generate_synthetic(pl.SynthSpec.default(ps, 0), ps, n_utts, 0)
    data = pl.training_set(items, ps)
    g = ng.init_weights(ng.build_default_graph(ps), 0)
    g.normalizer = ng.Normalizer.fit(data.main, data.bands)
    plan, lay = g.plan()
    Tm = g.normalizer.norm_main(data.main)
    Tb = g.normalizer.norm_bands(data.bands)
    order = np.arange(data.n_utts, dtype=np.int64)
    no_force = np.zeros((0, g.main_dim))

    def epoch(be):
        th, vel = g.theta.copy(), np.zeros_like(g.theta)
        be.net_train_epoch(th, vel, data.X, Tm, Tb, data.starts, data.lengths, order, plan, lay, 0.01, 0.5, 0.5)

    n_frames = len(data.X)
    return [
        ("levinson order 10", lambda be: be.levinson(r, 10)),
        ("cosine_roots grid 256", lambda be: be.cosine_roots(cp, 256)),
        ("allpole 1 s", lambda be: be.allpole(e, a, np.zeros(10))),
        ("harmonic_excitation 40 harmonics x 80", lambda be: be.harmonic_excitation(80, 100.0, 40, 16000.0, 0.0)),
        (f"net_run free-running, {n_frames} frames", lambda be: be.net_run(g.theta, data.X, plan, lay, no_force)),
        (f"net_train_epoch, {n_frames} frames", epoch),
    ]


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--quick", action="store_true", help="smaller training corpus")
    args = ap.parse_args()
    backends = {name: kernels.get_backend(name) for name in ("numba", "numpy")}
    print(f"{'kernel':44s} {'numba':>11s} {'numpy':>11s} {'speedup':>8s}")
    for name, fn in cases(args.quick):
        t = {b: _best(lambda: fn(mod), args.repeat) for b, mod in backends.items()}
        print(f"{name:44s} {t['numba'] * 1e3:9.3f}ms {t['numpy'] * 1e3:9.3f}ms {t['numpy'] / t['numba']:7.1f}x",
              flush=True)


if __name__ == "__main__":
    main()
