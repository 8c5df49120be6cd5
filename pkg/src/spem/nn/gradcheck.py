"""Finite-difference verification of analytic gradients."""

from __future__ import annotations

from contextlib import contextmanager

import numpy as np

# the finite-difference side runs in extended precision so that rounding in
# the forward pass does not swamp small gradient coordinates
FD_DTYPE = np.longdouble


def rel_error(a, n):
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), 1e-8)


@contextmanager
def _promoted(fragment, dtype):
    saved = []
    for mod in fragment.modules():
        for k, v in mod.params.items():
            saved.append((mod, k, v))
            mod.params[k] = v.astype(dtype)
    try:
        yield
    finally:
        for mod, k, v in saved:
            mod.params[k] = v


def grad_check(fragment, input_shape, seed=0, coords=200, h=1e-6, loss=None,
               check_input=True, train=True, x=None):
    """Largest relative error between analytic and central-difference gradients.

    ``fragment`` is any layer. Unless ``loss`` is given, the scalar checked is
    a fixed random projection of the output. Dropout masks are frozen by
    reseeding the layer rng before every forward pass. Coordinates (at least
    ``coords`` overall when available) are sampled from every parameter and
    from the input.
    """
    rng = np.random.default_rng(seed)
    if x is None:
        x = rng.standard_normal(input_shape)
    drop_seed = int(rng.integers(2**32))

    def run(inp):
        return fragment.forward(inp, train, np.random.default_rng(drop_seed))

    out = run(x)
    if loss is None:
        proj = rng.standard_normal(out.shape)
        dout = proj

        def objective(o):
            return np.sum(o * proj)
    else:
        dout = loss(out)[1]

        def objective(o):
            return loss(o)[0]

    fragment.zero_grad()
    dx = fragment.backward(dout)
    analytic = [(name, g.copy()) for name, g in fragment.named_grads()]
    if check_input:
        analytic.append(("input", dx))

    sizes = {name: g.size for name, g in analytic}
    total = sum(sizes.values())
    picks = {}
    for name, g in analytic:
        share = max(8, int(np.ceil(coords * g.size / total)))
        picks[name] = rng.choice(g.size, size=min(g.size, share), replace=False)

    worst = 0.0
    xe = np.asarray(x, dtype=FD_DTYPE)
    with _promoted(fragment, FD_DTYPE):
        arrays = dict(fragment.named_parameters())
        arrays["input"] = xe
        for name, g in analytic:
            p = arrays[name]
            for idx in picks[name]:
                pos = np.unravel_index(idx, p.shape)
                old = p[pos]
                p[pos] = old + h
                up = objective(run(xe))
                p[pos] = old - h
                down = objective(run(xe))
                p[pos] = old
                num = float((up - down) / (2 * h))
                worst = max(worst, float(rel_error(g[pos], num)))
    return worst
