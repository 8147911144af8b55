"""Finite-difference verification of analytic gradients."""

from __future__ import annotations

import numpy as np

from .params import ParamStore


def check_gradients(f, stores, h: float = 1e-5, num_coords: int = 200, rng=None) -> float:
    """Max relative error between analytic and central finite-difference grads.

    `f` must be a deterministic scalar-Tensor-valued function of the given
    ParamStore(s). Errors are measured on a random subsample of parameter
    coordinates (all of them when fewer than `num_coords` exist) as
    |analytic - fd| / max(|analytic|, |fd|, floor). The floor is
    1e-5 * max(1, |f|): central differences of coordinates whose true
    gradient is exactly zero (e.g. a bias annihilated by batch-norm
    centering) consist purely of cancellation noise ~eps*|f|/h, which must
    not read as a gradient bug.
    """
    if isinstance(stores, ParamStore):
        stores = [stores]
    rng = rng or np.random.default_rng(0)

    for s in stores:
        s.zero_grad()
    out = f()
    floor = 1e-5 * max(1.0, abs(out.item()))
    out.backward()
    analytic = {id(s): {name: t.grad.copy() for name, t in s.items()} for s in stores}

    coords = []
    for s in stores:
        for name, t in s.items():
            for flat in range(t.data.size):
                coords.append((s, name, flat))
    if len(coords) > num_coords:
        pick = rng.choice(len(coords), size=num_coords, replace=False)
        coords = [coords[i] for i in sorted(pick)]

    max_err = 0.0
    for s, name, flat in coords:
        t = s[name]
        orig = t.data.reshape(-1)[flat]
        t.data.reshape(-1)[flat] = orig + h
        f_plus = f().item()
        t.data.reshape(-1)[flat] = orig - h
        f_minus = f().item()
        t.data.reshape(-1)[flat] = orig
        fd = (f_plus - f_minus) / (2.0 * h)
        a = analytic[id(s)][name].reshape(-1)[flat]
        err = abs(a - fd) / max(abs(a), abs(fd), floor)
        max_err = max(max_err, err)
    return max_err
