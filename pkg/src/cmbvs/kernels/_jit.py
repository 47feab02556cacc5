"""Loop kernels compiled with numba.

Every kernel is deterministic: random variates arrive pre-drawn so that this
module and :mod:`._vectorized` consume one identical stream.
"""

import math

import numpy as np
from numba import njit

_OPTS = dict(cache=True, nogil=True)


@njit(**_OPTS)
def k_step(logk, shape, log1pu, w, resid, inv2s2, g, v, acc):
    """Per-coordinate MH on the gamma latents.

    The proposal for ``log k_ij`` is the DM-only full conditional
    ``Gamma(shape_ij, 1 + u_i)``, drawn as ``log G(shape+1) + log(V)/shape``;
    only the outcome likelihood ratio remains in the acceptance test.
    ``resid`` is updated in place. Returns the number of accepted moves.
    """
    n, J = logk.shape
    nacc = 0
    for i in range(n):
        r = resid[i]
        for j in range(J):
            prop = math.log(g[i, j]) + math.log(v[i, j]) / shape[i, j] - log1pu[i]
            wj = w[j]
            if wj == 0.0:
                logk[i, j] = prop
                nacc += 1
            else:
                rn = r - wj * (prop - logk[i, j])
                if math.log(acc[i, j]) < (r * r - rn * rn) * inv2s2:
                    logk[i, j] = prop
                    r = rn
                    nacc += 1
        resid[i] = r
    return nacc


@njit(**_OPTS)
def shift_loglik(gam, lgg, logx, gsum, lgs, j, cov, delta, collapsed, g1b, lg1b, lgsb):
    """Change in the DM log-likelihood when ``lam[:, j] += delta * cov``.

    ``gam``/``lgg`` cache ``exp(lam)`` and its ``lgamma``; ``gsum``/``lgs``
    the per-subject totals and their ``lgamma``. With ``collapsed`` the
    per-subject latent scale is integrated out and ``logx`` holds ``log psi``
    (Dirichlet likelihood); otherwise ``logx`` is ``log k`` under independent
    ``Gamma(gamma_ij, 1)`` terms. Proposed values are left in the ``*b``
    buffers for :func:`apply_shift`.
    """
    out = 0.0
    e1 = math.exp(delta)
    for i in range(gam.shape[0]):
        c = cov[i]
        if c == 0.0:
            continue
        g0 = gam[i, j]
        g1 = g0 * (e1 if c == 1.0 else math.exp(delta * c))
        lg1 = math.lgamma(g1)
        out += (g1 - g0) * logx[i, j] - lg1 + lgg[i, j]
        if collapsed:
            ls1 = math.lgamma(gsum[i] + g1 - g0)
            out += ls1 - lgs[i]
            lgsb[i] = ls1
        g1b[i] = g1
        lg1b[i] = lg1
    return out


@njit(**_OPTS)
def apply_shift(lam, gam, lgg, gsum, lgs, j, cov, delta, collapsed, g1b, lg1b, lgsb):
    """Commit a shift whose proposed values sit in the buffers."""
    for i in range(lam.shape[0]):
        c = cov[i]
        if c == 0.0:
            continue
        lam[i, j] += delta * c
        gsum[i] += g1b[i] - gam[i, j]
        gam[i, j] = g1b[i]
        lgg[i, j] = lg1b[i]
        if collapsed:
            lgs[i] = lgsb[i]


@njit(**_OPTS)
def alpha_step(alpha, lam, gam, lgg, logx, gsum, lgs, ones, prior_var, sd, eps, acc,
               collapsed, use_lik, g1b, lg1b, lgsb):
    nacc = 0
    for j in range(alpha.size):
        old = alpha[j]
        new = old + sd * eps[j]
        lr = -(new * new - old * old) / (2.0 * prior_var)
        if use_lik:
            lr += shift_loglik(gam, lgg, logx, gsum, lgs, j, ones, new - old, collapsed,
                               g1b, lg1b, lgsb)
        if math.log(acc[j]) < lr:
            if not use_lik:
                shift_loglik(gam, lgg, logx, gsum, lgs, j, ones, new - old, collapsed,
                             g1b, lg1b, lgsb)
            apply_shift(lam, gam, lgg, gsum, lgs, j, ones, new - old, collapsed,
                        g1b, lg1b, lgsb)
            alpha[j] = new
            nacc += 1
    return nacc


@njit(**_OPTS)
def dm_add_delete(coef, ind, allowed, lam, gam, lgg, logx, gsum, lgs, cov, slab_var, a, b,
                  count, size, prop_j, draws, acc, collapsed, use_lik, g1b, lg1b, lgsb):
    """Add-Delete proposals for one column of DM coefficients.

    ``coef``/``ind``/``allowed`` are length-J views of one coefficient column
    and ``cov`` the matching design column. ``count``/``size`` describe the
    whole indicator family (which may span several columns). Returns
    ``(new_count, accepted)``.
    """
    nacc = 0
    for s in range(prop_j.size):
        j = prop_j[s]
        if not allowed[j]:
            continue
        m_other = count - ind[j]
        if ind[j] == 0:
            delta = math.sqrt(slab_var[j]) * draws[s]
            lr = math.log((a + m_other) / (b + size - 1 - m_other))
        else:
            delta = -coef[j]
            lr = math.log((b + size - 1 - m_other) / (a + m_other))
        if use_lik:
            lr += shift_loglik(gam, lgg, logx, gsum, lgs, j, cov, delta, collapsed,
                               g1b, lg1b, lgsb)
        if math.log(acc[s]) < lr:
            if not use_lik:
                shift_loglik(gam, lgg, logx, gsum, lgs, j, cov, delta, collapsed,
                             g1b, lg1b, lgsb)
            apply_shift(lam, gam, lgg, gsum, lgs, j, cov, delta, collapsed, g1b, lg1b, lgsb)
            if ind[j] == 0:
                coef[j] = delta
                ind[j] = 1
                count += 1
            else:
                coef[j] = 0.0
                ind[j] = 0
                count -= 1
            nacc += 1
    return count, nacc


@njit(**_OPTS)
def dm_refresh(coef, ind, lam, gam, lgg, logx, gsum, lgs, cov, slab_var, sd, eps, acc,
               collapsed, use_lik, g1b, lg1b, lgsb):
    """Random-walk refresh of the currently included coefficients of one column."""
    nprop = 0
    nacc = 0
    for j in range(coef.size):
        if ind[j] == 0:
            continue
        nprop += 1
        old = coef[j]
        new = old + sd * eps[j]
        lr = -(new * new - old * old) / (2.0 * slab_var[j])
        if use_lik:
            lr += shift_loglik(gam, lgg, logx, gsum, lgs, j, cov, new - old, collapsed,
                               g1b, lg1b, lgsb)
        if math.log(acc[j]) < lr:
            if not use_lik:
                shift_loglik(gam, lgg, logx, gsum, lgs, j, cov, new - old, collapsed,
                             g1b, lg1b, lgsb)
            apply_shift(lam, gam, lgg, gsum, lgs, j, cov, new - old, collapsed,
                        g1b, lg1b, lgsb)
            coef[j] = new
            nacc += 1
    return nprop, nacc


@njit(**_OPTS)
def balances(logk, order, scales):
    """Sequential balances from log latents, ``O(nJ)`` via suffix sums."""
    n, J = logk.shape
    out = np.empty((n, J - 1))
    for i in range(n):
        suffix = 0.0
        for p in range(J - 1, 0, -1):
            suffix += logk[i, order[p]]
            out[i, p - 1] = scales[p - 1] * (logk[i, order[p - 1]] - suffix / (J - p))
    return out

