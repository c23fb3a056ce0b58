"""Check the tape against central differences on a grouped convolution.

The engine records every op on a tape and replays it in reverse. Here we
differentiate a small grouped conv followed by GELU, in float64, and compare
a handful of coordinates of each input with finite differences.
"""

import numpy as np

from plantvit import autograd as ag
from plantvit.autograd import Tensor, precision

rng = np.random.default_rng(0)

with precision(np.float64):
    x = Tensor(rng.standard_normal((2, 4, 6, 6)), requires_grad=True)
    w = Tensor(rng.standard_normal((6, 2, 3, 3)), requires_grad=True)
    b = Tensor(rng.standard_normal(6), requires_grad=True)
    proj = rng.standard_normal((2, 6, 6, 6))

    def loss():
        return (ag.gelu(ag.conv2d(x, w, b, padding=1, groups=2)) * proj).sum()

    ag.backward(loss())

    h = 1e-6
    for name, t in (("x", x), ("weight", w), ("bias", b)):
        flat = t.data.reshape(-1)
        worst = 0.0
        for i in rng.choice(flat.size, size=5, replace=False):
            orig = flat[i]
            flat[i] = orig + h
            up = float(loss().data)
            flat[i] = orig - h
            down = float(loss().data)
            flat[i] = orig
            numeric = (up - down) / (2 * h)
            analytic = t.grad.reshape(-1)[i]
            worst = max(worst, abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-8))
        print(f"{name:>7}: max relative error over 5 coordinates = {worst:.2e}")
