"""Central finite-difference gradient checking shared by unit and acceptance tests.

The oracle only ever calls the forward path: for sampled parameter
coordinates, the derivative is (f(x+eps) - f(x-eps)) / (2 eps) in double
precision. Analytic gradients come from backprop; the two must agree to a
relative error below 1e-4.
"""

from __future__ import annotations

import numpy as np
import torch


def sampled_coords(params: list[torch.nn.Parameter], per_param: int, seed: int):
    rng = np.random.default_rng(seed)
    out = []
    for p in params:
        n = p.numel()
        take = min(per_param, n)
        idx = rng.choice(n, size=take, replace=False)
        out.append(sorted(int(i) for i in idx))
    return out


def fd_vs_analytic(loss_fn, params: list[torch.nn.Parameter], per_param: int = 8, seed: int = 0):
    """Relative error between FD and backprop gradients on sampled coordinates.

    loss_fn must be a pure function of the current parameter values and return
    a scalar tensor. Parameters must be double precision.
    """
    for p in params:
        assert p.dtype == torch.float64, "gradient checks run in double precision"
        p.grad = None
    loss = loss_fn()
    loss.backward()
    coords = sampled_coords(params, per_param, seed)
    analytic, fd = [], []
    with torch.no_grad():
        for p, idxs in zip(params, coords):
            flat = p.view(-1)
            grad_flat = p.grad.view(-1) if p.grad is not None else torch.zeros_like(flat)
            for i in idxs:
                analytic.append(float(grad_flat[i]))
                orig = float(flat[i])
                eps = 1e-6 * max(1.0, abs(orig))
                flat[i] = orig + eps
                up = float(loss_fn())
                flat[i] = orig - eps
                down = float(loss_fn())
                flat[i] = orig
                fd.append((up - down) / (2 * eps))
    a = np.asarray(analytic)
    f = np.asarray(fd)
    denom = max(np.linalg.norm(a), np.linalg.norm(f), 1e-30)
    return float(np.linalg.norm(a - f) / denom)
