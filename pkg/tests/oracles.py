"""Independent reference computations used by several test modules."""

import itertools
import math

import numpy as np
from scipy.special import betaln, gammaln


def dm_log_marginal(z, gam):
    """Dirichlet-multinomial log pmf (without the multinomial coefficient), summed over rows."""
    z = np.asarray(z, dtype=float)
    tot = 0.0
    for i in range(z.shape[0]):
        g = gam[i]
        G = sum(g)
        tot = tot + gammaln(G) - gammaln(z[i].sum() + G)
        for j in range(z.shape[1]):
            tot = tot + gammaln(z[i, j] + g[j]) - gammaln(g[j])
    return tot


def dm_grid_posterior(z, t, sigma2_alpha, slab_var, npts=41, a_lim=5.0, p_lim=10.0):
    """Posterior means of (alpha_1, alpha_2, phi_1, phi_2) and MPPI of phi for J=2.

    Dense grid over the intercepts and the included treatment coefficients,
    exact sum over the four indicator configurations under a shared
    Beta(1, 1) inclusion rate.
    """
    t = np.asarray(t, dtype=float)
    ag = np.linspace(-a_lim, a_lim, npts)
    pg = np.linspace(-p_lim, p_lim, npts)
    la = -0.5 * ag ** 2 / sigma2_alpha
    lp = -0.5 * pg ** 2 / slab_var - 0.5 * math.log(2 * math.pi * slab_var) + math.log(pg[1] - pg[0])
    parts = []
    for v in itertools.product([0, 1], repeat=2):
        lprior = betaln(1 + sum(v), 3 - sum(v)) - betaln(1, 1)
        P1 = pg if v[0] else np.zeros(1)
        P2 = pg if v[1] else np.zeros(1)
        A1, A2, Q1, Q2 = np.meshgrid(ag, ag, P1, P2, indexing="ij")
        gam = [(np.exp(A1 + Q1 * ti), np.exp(A2 + Q2 * ti)) for ti in t]
        lw = dm_log_marginal(z, gam) + la[:, None, None, None] + la[None, :, None, None] + lprior
        if v[0]:
            lw = lw + lp[None, None, :, None]
        if v[1]:
            lw = lw + lp[None, None, None, :]
        parts.append((v, lw, (A1, A2, Q1, Q2)))
    top = max(lw.max() for _, lw, _ in parts)
    Z, mean, inc = 0.0, np.zeros(4), np.zeros(2)
    for v, lw, grids in parts:
        w = np.exp(lw - top)
        Z += w.sum()
        mean += [(w * g).sum() for g in grids]
        inc += np.array(v) * w.sum()
    return mean / Z, inc / Z


def normal_ig_log_evidence(X, y, prior_var, a0, b0):
    """Log marginal likelihood of ``y = X b + e`` with ``b ~ N(0, s2 diag(prior_var))``, ``s2 ~ IG(a0, b0)``.

    Returns the evidence, the posterior mean of ``b`` and of ``s2``.
    """
    n = y.size
    V0inv = np.diag(1.0 / np.asarray(prior_var, dtype=float))
    Vinv = X.T @ X + V0inv
    V = np.linalg.inv(Vinv)
    m = V @ X.T @ y
    an = a0 + 0.5 * n
    bn = b0 + 0.5 * (y @ y - m @ Vinv @ m)
    _, logdet_v = np.linalg.slogdet(V)
    logdet_v0 = float(np.sum(np.log(prior_var)))
    ev = (-0.5 * n * math.log(2 * math.pi) + 0.5 * (logdet_v - logdet_v0)
          + a0 * math.log(b0) - gammaln(a0) + gammaln(an) - an * math.log(bn))
    return ev, m, bn / (an - 1.0)
