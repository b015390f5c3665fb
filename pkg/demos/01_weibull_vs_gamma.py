"""
How well does a Weibull stand in for a gamma?
=============================================

The encoder's posterior over topic weights is Weibull because a Weibull draw
is a one-line transform of uniform noise, while the model's conditional is
gamma.  This script fits a Weibull to a few gamma targets by minimising the
closed-form KL and checks the fit by simulation.
"""

import math

import numpy as np
from scipy import optimize

from datm import distributions as D

# fit (k, lambda) in log space so both stay positive
def fit(alpha, beta=1.0):
    f = lambda z: D.weibull_gamma_kl(math.exp(z[0]), math.exp(z[1]), alpha, beta)
    res = optimize.minimize(f, [0.0, 0.0], method="Nelder-Mead",
                            options={"xatol": 1e-10, "fatol": 1e-12, "maxiter": 5000})
    return math.exp(res.x[0]), math.exp(res.x[1]), max(res.fun, 0.0)


print(f"{'gamma shape':>12} {'k':>8} {'lambda':>10} {'KL':>8}")
for alpha in (0.05, 0.1, 0.5, 1.0, 2.0, 5.0, 20.0):
    k, lam, kl = fit(alpha)
    print(f"{alpha:12.2f} {k:8.3f} {lam:10.3g} {kl:8.4f}")

# the fit is tight in the middle and degrades at both ends: tiny shapes put a
# spike at zero, large shapes want a symmetric bell the Weibull cannot match

# a quick Monte-Carlo look at the alpha = 2 fit
rng = D.rng_stream(0)
k, lam, _ = fit(2.0)
w = D.weibull_sample(k, lam, D.uniform_open(rng, 200_000))
g = rng.gamma(2.0, 1.0, size=200_000)
print("\nalpha = 2: mean", round(w.mean(), 3), "vs", round(g.mean(), 3),
      "| std", round(w.std(), 3), "vs", round(g.std(), 3))
print("quantiles (10/50/90%):", np.round(np.quantile(w, [0.1, 0.5, 0.9]), 3),
      "vs", np.round(np.quantile(g, [0.1, 0.5, 0.9]), 3))
