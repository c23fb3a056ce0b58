"""Finite-difference gradient checking shared by the test modules."""

import numpy as np

from plantvit.autograd import backward, precision
from oracles import central_difference


def rel_err(a, n, floor):
    return abs(a - n) / max(abs(a), abs(n), floor)


def check_gradients(build_loss, tensors, n_coords=20, h=1e-6, floor=1e-8, seed=0, names=None,
                    structural_zero=(), zero_atol=(1e-10, 1e-7)):
    """Compare tape gradients to central differences on sampled coordinates.

    ``build_loss()`` must rebuild the scalar loss from the current values of
    ``tensors`` each call. Returns a list of ``(name, max_rel_err)``.

    Tensors named in ``structural_zero`` have coordinates whose true gradient
    is exactly zero (a bias feeding a train-mode batch norm, a shift of
    softmax logits). A relative error is undefined there, so a coordinate of
    such a tensor counts as matched when the analytic gradient is below
    ``zero_atol[0]`` and the numeric one below ``zero_atol[1]``.
    """
    rng = np.random.default_rng(seed)
    for t in tensors:
        t.zero_grad()
    loss = build_loss()
    backward(loss)
    analytic = [t.grad.copy() if t.grad is not None else np.zeros_like(t.data) for t in tensors]

    def f():
        return float(build_loss().data)

    results = []
    for k, t in enumerate(tensors):
        flat = t.data.reshape(-1)
        count = min(n_coords, flat.size)
        coords = rng.choice(flat.size, size=count, replace=False)
        worst = 0.0
        for c in coords:
            num = central_difference(f, flat, int(c), h)
            a = float(analytic[k].reshape(-1)[c])
            name = names[k] if names else None
            if name in structural_zero and abs(a) < zero_atol[0] and abs(num) < zero_atol[1]:
                continue
            worst = max(worst, rel_err(a, num, floor))
        results.append((names[k] if names else f"t{k}", worst))
    return results


def check_gradients_mixed(make, seed=0, n_coords=20, h=1e-6, floor=1e-8, structural_zero=(),
                          zero_atol=(1e-4, 1e-7)):
    """Float32 tape gradients against float64 central differences.

    ``make(rng)`` builds a case and returns ``(tensors, names, build_loss)``.
    It is called once per precision with identically seeded generators; the
    float64 copy then takes the float32 values so both sides differentiate
    the same point. The analytic side of a structural zero is float32
    round-off of a cancelling sum, a few ulps of the summed terms, hence the
    looser default ``zero_atol``.
    """
    with precision(np.float32):
        t32, names, loss32 = make(np.random.default_rng(seed))
        for t in t32:
            t.zero_grad()
        backward(loss32())
        analytic = [t.grad.copy() if t.grad is not None else np.zeros_like(t.data) for t in t32]
    with precision(np.float64):
        t64, _, loss64 = make(np.random.default_rng(seed))
        for a, b in zip(t32, t64):
            b.data[...] = a.data

        def f():
            return float(loss64().data)

        rng = np.random.default_rng(seed + 1)
        results = []
        for k, t in enumerate(t64):
            flat = t.data.reshape(-1)
            coords = rng.choice(flat.size, size=min(n_coords, flat.size), replace=False)
            worst = 0.0
            for c in coords:
                num = central_difference(f, flat, int(c), h)
                a = float(analytic[k].reshape(-1)[c])
                if names[k] in structural_zero and abs(a) < zero_atol[0] and abs(num) < zero_atol[1]:
                    continue
                worst = max(worst, rel_err(a, num, floor))
            results.append((names[k], worst))
    return results
