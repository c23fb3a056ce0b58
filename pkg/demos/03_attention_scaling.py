"""Linear self-attention cost grows linearly in the token count.

For comparison we time a plain dot-product attention over the same tokens,
whose L x L score matrix makes it quadratic.
"""

import statistics
import time

import numpy as np

from plantvit import autograd as ag
from plantvit.autograd import Tensor
from plantvit.blocks import LinearSelfAttention

d, B = 256, 4
att = LinearSelfAttention(d, np.random.default_rng(0)).eval()
wq, wk, wv = (np.random.default_rng(i).standard_normal((d, d)).astype(np.float32) / 16 for i in range(3))


def pairwise(x):
    q, k, v = x @ wq, x @ wk, x @ wv
    s = q @ k.transpose(0, 2, 1) / np.sqrt(d)
    s = np.exp(s - s.max(axis=-1, keepdims=True))
    return (s / s.sum(axis=-1, keepdims=True)) @ v


def median_time(fn, x, runs=15):
    fn(x)
    times = []
    for _ in range(runs):
        t0 = time.perf_counter()
        fn(x)
        times.append(time.perf_counter() - t0)
    return statistics.median(times)


print(f"{'L':>6} {'linear ms':>10} {'pairwise ms':>12}")
with ag.no_grad():
    for L in (64, 128, 256, 512, 1024):
        x = np.random.default_rng(L).standard_normal((B, L, d)).astype(np.float32)
        lin = median_time(lambda v: att(Tensor(v)), x)
        quad = median_time(pairwise, x)
        print(f"{L:>6} {lin * 1e3:>10.2f} {quad * 1e3:>12.2f}")
