"""Finite-difference gradient checking shared by the test modules."""

from __future__ import annotations

import numpy as np

from feduq.autodiff import Tape, Tensor, backward, tsum, mul, constant


def scalarized(fn, weights):
    """Reduce a tensor-valued fn to a scalar via a fixed random projection."""

    def wrapped(*tensors):
        out = fn(*tensors)
        return tsum(mul(out, constant(weights)))

    return wrapped


def numeric_grad(fn, arrays, index, h=1e-6):
    """Central finite differences of fn(*arrays) w.r.t. arrays[index]."""
    base = [np.array(a, dtype=np.float64) for a in arrays]
    grad = np.zeros_like(base[index])
    it = np.nditer(base[index], flags=["multi_index"])
    while not it.finished:
        idx = it.multi_index
        orig = base[index][idx]
        base[index][idx] = orig + h
        hi = fn(*[Tensor(a) for a in base]).item()
        base[index][idx] = orig - h
        lo = fn(*[Tensor(a) for a in base]).item()
        base[index][idx] = orig
        grad[idx] = (hi - lo) / (2.0 * h)
        it.iternext()
    return grad


def analytic_grads(fn, arrays, wrt):
    tensors = [Tensor(a, requires_grad=(i in wrt)) for i, a in enumerate(arrays)]
    with Tape() as tape:
        loss = fn(*tensors)
    backward(loss, tape)
    return [tensors[i].grad for i in wrt]


def assert_grads_match(fn, arrays, wrt=(0,), h=1e-6, rtol=1e-4, atol=1e-7):
    """Analytic vs central-difference gradients, relative tolerance rtol."""
    analytic = analytic_grads(fn, arrays, wrt)
    for slot, i in enumerate(wrt):
        numeric = numeric_grad(fn, arrays, i, h=h)
        got = analytic[slot]
        assert got is not None, f"no gradient for input {i}"
        denom = np.maximum(np.abs(numeric), np.abs(got))
        err = np.abs(got - numeric)
        ok = err <= atol + rtol * denom
        assert ok.all(), (
            f"gradient mismatch for input {i}: max abs err {err.max():.3e}, "
            f"max rel err {(err / np.maximum(denom, 1e-12)).max():.3e}"
        )
