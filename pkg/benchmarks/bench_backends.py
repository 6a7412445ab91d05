"""Time the compiled core against the numpy fallback.

Each backend runs in its own interpreter because the choice is made at
import. Usage: python benchmarks/bench_backends.py [--repeat 3]
"""

import argparse
import json
import os
import subprocess
import sys

WORKER = r"""
import json, sys, time
import numpy as np
import drcme
from drcme import _backend
from drcme.datagen import DgpSpec, generate
from drcme.permutation import run_permutation_tests

repeat = int(sys.argv[1])
rng = np.random.default_rng(0)
X = rng.standard_normal((2000, 9))
Y = rng.standard_normal((1000, 1))
M = rng.standard_normal((1000, 1000))
Q = M @ M.T
dense = rng.standard_normal((200, 1000))
sparse = dense * (rng.random((200, 1000)) < 0.05)
data = generate(DgpSpec("dgp_effect", n=1000, seed=1, beta=1.0))

cases = {
    "gaussian_gram 2000x2000 d=9": lambda: _backend.gaussian_gram(X, X, 1.0),
    "pairwise_distances n=2000": lambda: _backend.pairwise_distances(X),
    "gaussian_gram 1000x1000 d=1": lambda: _backend.gaussian_gram(Y, Y, 1.0),
    "symmetric gaussian_gram n=2000 d=9": lambda: _backend.gaussian_gram_sym(X, 1.0),
    "quad_forms 200 dense rows m=1000": lambda: _backend.quad_forms(Q, dense),
    "quad_forms 200 rows 5% nonzero m=1000": lambda: _backend.quad_forms(Q, sparse),
    "permutation test n=1000 N=20 m=200 (4 stats)": lambda: run_permutation_tests(
        data, ["date", "dr-date", "dett", "dr-dett"], N=20, m=200, seed=0
    ),
}
out = {}
for name, fn in cases.items():
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    out[name] = best
print(json.dumps({"backend": drcme.BACKEND, "times": out}))
"""


def run(backend, repeat):
    env = dict(os.environ, DRCME_BACKEND=backend, OMP_NUM_THREADS=os.environ.get("OMP_NUM_THREADS", "1"))
    res = subprocess.run([sys.executable, "-c", WORKER, str(repeat)], env=env, capture_output=True, text=True, check=True)
    return json.loads(res.stdout)


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()
    fast, slow = run("cython", args.repeat), run("python", args.repeat)
    if fast["backend"] != "cython":
        sys.exit("compiled extension not built; run `pip install -e . --no-build-isolation` first")
    width = max(map(len, fast["times"]))
    print(f"{'case':<{width}}  {'cython s':>9}  {'numpy s':>9}  {'speedup':>7}")
    for name, tc in fast["times"].items():
        tp = slow["times"][name]
        print(f"{name:<{width}}  {tc:9.4f}  {tp:9.4f}  {tp / tc:7.2f}")


if __name__ == "__main__":
    main()
