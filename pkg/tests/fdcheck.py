"""Central finite-difference checks shared by the gradient tests."""

import numpy as np


def fd_compare(f, arrays, grads, h=1e-5, floor=1e-3, max_entries=None, rng=None):
    """Worst relative error between analytic ``grads`` and central differences of ``f``.

    ``arrays`` are perturbed in place (and restored).  The relative error of an
    entry is ``|an - fd| / max(|an|, |fd|, floor)``; the floor keeps entries
    whose true gradient is ~0 from turning round-off into a huge ratio.
    """
    worst, where = 0.0, None
    for name, (a, g) in zip(arrays, zip(arrays.values(), grads)):
        idx = list(np.ndindex(a.shape))
        if max_entries is not None and len(idx) > max_entries:
            pick = (rng or np.random.default_rng(0)).choice(len(idx), max_entries, replace=False)
            idx = [idx[i] for i in pick]
        for i in idx:
            old = a[i]
            a[i] = old + h
            up = f()
            a[i] = old - h
            dn = f()
            a[i] = old
            fd = (up - dn) / (2 * h)
            an = g[i]
            err = abs(an - fd) / max(abs(an), abs(fd), floor)
            if err > worst:
                worst, where = err, (name, i, an, fd)
    return worst, where
