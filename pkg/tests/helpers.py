"""Shared test utilities: central finite-difference gradient checking."""

import numpy as np

from scalegnn.autodiff import Tape, zero_grads


def numeric_grad(loss_fn, param, h=1e-5, coords=None):
    """Central finite differences of loss_fn() w.r.t. selected coordinates
    of param.data. Returns (coords, estimates)."""
    flat = param.data.ravel()
    if coords is None:
        coords = range(flat.size)
    coords = list(coords)
    out = np.zeros(len(coords))
    for j, idx in enumerate(coords):
        orig = flat[idx]
        flat[idx] = orig + h
        up = loss_fn().item()
        flat[idx] = orig - h
        down = loss_fn().item()
        flat[idx] = orig
        out[j] = (up - down) / (2.0 * h)
    return coords, out


def check_grads(loss_fn, params, h=1e-5, rtol=1e-4, max_coords=8, seed=0):
    """Compare tape gradients of loss_fn against finite differences.

    Checks up to max_coords coordinates per parameter, chosen deterministically.
    """
    with Tape() as tape:
        loss = loss_fn()
        zero_grads(params)
        tape.backward(loss)
    analytic = [p.grad.copy() for p in params]
    rng = np.random.default_rng(seed)
    for p, ana in zip(params, analytic):
        size = p.data.size
        if size <= max_coords:
            coords = list(range(size))
        else:
            coords = sorted(rng.choice(size, size=max_coords, replace=False))
        _, num = numeric_grad(loss_fn, p, h=h, coords=coords)
        ana_sel = ana.ravel()[coords]
        scale = np.maximum(1.0, np.maximum(np.abs(num), np.abs(ana_sel)))
        err = np.max(np.abs(num - ana_sel) / scale)
        assert err < rtol, (
            f"gradient mismatch: max rel err {err:.3e} "
            f"(analytic {ana_sel}, numeric {num})")
