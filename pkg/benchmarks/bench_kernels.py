"""Compare the compiled kernels with the numpy fallback.

    python benchmarks/bench_kernels.py [--repeat 200] [--episodes 600]

Prints per-kernel timings for both backends, checks they agree, then times a
full 4-mode evaluation run under each backend in a subprocess.
"""

import argparse
import os
import subprocess
import sys
import tempfile
import time
import timeit

import numpy as np

from protorect import _fallback, kernels
from protorect.featurestore import normalize_rows


def _case(rng, ways=5, shots=1, queries=15, dim=64, z=8):
    support = normalize_rows(rng.standard_normal((ways * shots, dim))).reshape(ways, shots, dim)
    query = normalize_rows(rng.standard_normal((ways * queries, dim)))
    basic = support.mean(axis=1)
    return support, query, basic, z


def bench_kernels(repeat):
    if kernels.compiled is None:
        print("compiled kernels not available; nothing to compare")
        return
    rng = np.random.default_rng(0)
    support, query, basic, z = _case(rng)
    cos = _fallback.cosine_matrix(query, basic)
    probs = _fallback.softmax_rows(10 * cos)
    picked = _fallback.select_topz(cos, probs, z)
    rows = normalize_rows(rng.standard_normal((100, 64)))
    idx = np.argsort(rng.random((1000, 100)), axis=1)[:, :4].astype(np.int64)

    cases = {
        "cosine_matrix": lambda m: m.cosine_matrix(query, basic),
        "softmax_rows": lambda m: m.softmax_rows(10 * cos),
        "select_topz": lambda m: m.select_topz(cos, probs, z),
        "rectify_prototypes": lambda m: m.rectify_prototypes(support, query, picked, basic, 10.0),
        "mc_trial_cosines": lambda m: m.mc_trial_cosines(rows, idx),
    }
    print(f"{'kernel':<20} {'python us':>10} {'cython us':>10} {'speedup':>8}  max|diff|")
    for name, fn in cases.items():
        a, b = fn(_fallback), fn(kernels.compiled)
        a = a[0] if isinstance(a, tuple) else a
        b = b[0] if isinstance(b, tuple) else b
        diff = float(np.max(np.abs(np.asarray(a, float) - np.asarray(b, float))))
        n = repeat if name != "mc_trial_cosines" else max(1, repeat // 20)
        tp = timeit.timeit(lambda: fn(_fallback), number=n) / n * 1e6
        tc = timeit.timeit(lambda: fn(kernels.compiled), number=n) / n * 1e6
        print(f"{name:<20} {tp:>10.1f} {tc:>10.1f} {tp / tc:>7.1f}x  {diff:.2e}")


def bench_end_to_end(episodes):
    with tempfile.TemporaryDirectory() as tmp:
        feats = os.path.join(tmp, "f.bin")
        subprocess.run([sys.executable, "-m", "protorect.cli", "synth", "--classes", "20", "--per-class", "100",
                        "--spread", "0.08", "--concentration", "3", "--seed", "1", "--out", feats], check=True)
        cmd = [sys.executable, "-m", "protorect.cli", "eval", "--features", feats, "--mode", "all",
               "--z", "8", "--episodes", str(episodes), "--seed", "3"]
        outputs = {}
        for label, env_extra in (("python", {"PROTORECT_PURE_PYTHON": "1"}), ("cython", {})):
            env = {**os.environ, **env_extra}
            t0 = time.perf_counter()
            res = subprocess.run(cmd, env=env, check=True, capture_output=True, text=True)
            outputs[label] = res.stdout
            print(f"eval {episodes} episodes x 4 modes [{label}]: {time.perf_counter() - t0:.2f} s")
        print("TSV identical across backends:", outputs["python"] == outputs["cython"])


if __name__ == "__main__":
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=200)
    ap.add_argument("--episodes", type=int, default=600)
    args = ap.parse_args()
    print("active backend:", kernels.BACKEND)
    bench_kernels(args.repeat)
    bench_end_to_end(args.episodes)
