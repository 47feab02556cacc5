"""Pure-numpy twins of the loop kernels in :mod:`._jit`.

Signatures and semantics match one-for-one; the loops over subjects are
replaced by array operations, while sequential dependencies (proposals that
see earlier acceptances) keep an explicit Python loop.
"""

import numpy as np
from scipy.special import gammaln


def k_step(logk, shape, log1pu, w, resid, inv2s2, g, v, acc):
    n, J = logk.shape
    nacc = 0
    prop_all = np.log(g) + np.log(v) / shape - log1pu[:, None]
    logacc = np.log(acc)
    r = resid.copy()
    for j in range(J):
        prop = prop_all[:, j]
        wj = w[j]
        if wj == 0.0:
            logk[:, j] = prop
            nacc += n
            continue
        rn = r - wj * (prop - logk[:, j])
        ok = logacc[:, j] < (r * r - rn * rn) * inv2s2
        logk[ok, j] = prop[ok]
        r = np.where(ok, rn, r)
        nacc += int(ok.sum())
    resid[:] = r
    return nacc


def shift_loglik(gam, lgg, logx, gsum, lgs, j, cov, delta, collapsed, g1b, lg1b, lgsb):
    sel = cov != 0.0
    c = cov[sel]
    g0 = gam[sel, j]
    g1 = g0 * np.where(c == 1.0, np.exp(delta), np.exp(delta * c))
    lg1 = gammaln(g1)
    out = (g1 - g0) * logx[sel, j] - lg1 + lgg[sel, j]
    if collapsed:
        ls1 = gammaln(gsum[sel] + g1 - g0)
        out = out + ls1 - lgs[sel]
        lgsb[sel] = ls1
    g1b[sel] = g1
    lg1b[sel] = lg1
    return float(out.sum())


def apply_shift(lam, gam, lgg, gsum, lgs, j, cov, delta, collapsed, g1b, lg1b, lgsb):
    sel = cov != 0.0
    lam[sel, j] += delta * cov[sel]
    gsum[sel] += g1b[sel] - gam[sel, j]
    gam[sel, j] = g1b[sel]
    lgg[sel, j] = lg1b[sel]
    if collapsed:
        lgs[sel] = lgsb[sel]


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
        if np.log(acc[j]) < lr:
            if not use_lik:
                shift_loglik(gam, lgg, logx, gsum, lgs, j, ones, new - old, collapsed,
                             g1b, lg1b, lgsb)
            apply_shift(lam, gam, lgg, gsum, lgs, j, ones, new - old, collapsed,
                        g1b, lg1b, lgsb)
            alpha[j] = new
            nacc += 1
    return nacc


def dm_add_delete(coef, ind, allowed, lam, gam, lgg, logx, gsum, lgs, cov, slab_var, a, b,
                  count, size, prop_j, draws, acc, collapsed, use_lik, g1b, lg1b, lgsb):
    nacc = 0
    for s in range(prop_j.size):
        j = prop_j[s]
        if not allowed[j]:
            continue
        m_other = count - ind[j]
        if ind[j] == 0:
            delta = np.sqrt(slab_var[j]) * draws[s]
            lr = np.log((a + m_other) / (b + size - 1 - m_other))
        else:
            delta = -coef[j]
            lr = np.log((b + size - 1 - m_other) / (a + m_other))
        if use_lik:
            lr += shift_loglik(gam, lgg, logx, gsum, lgs, j, cov, delta, collapsed,
                               g1b, lg1b, lgsb)
        if np.log(acc[s]) < lr:
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


def dm_refresh(coef, ind, lam, gam, lgg, logx, gsum, lgs, cov, slab_var, sd, eps, acc,
               collapsed, use_lik, g1b, lg1b, lgsb):
    nprop = 0
    nacc = 0
    for j in np.flatnonzero(ind):
        nprop += 1
        old = coef[j]
        new = old + sd * eps[j]
        lr = -(new * new - old * old) / (2.0 * slab_var[j])
        if use_lik:
            lr += shift_loglik(gam, lgg, logx, gsum, lgs, j, cov, new - old, collapsed,
                               g1b, lg1b, lgsb)
        if np.log(acc[j]) < lr:
            if not use_lik:
                shift_loglik(gam, lgg, logx, gsum, lgs, j, cov, new - old, collapsed,
                             g1b, lg1b, lgsb)
            apply_shift(lam, gam, lgg, gsum, lgs, j, cov, new - old, collapsed,
                        g1b, lg1b, lgsb)
            coef[j] = new
            nacc += 1
    return nprop, nacc


def balances(logk, order, scales):
    L = logk[:, order]
    J = L.shape[1]
    suffix = np.cumsum(L[:, :0:-1], axis=1)[:, ::-1]
    counts = J - np.arange(1, J)
    return scales * (L[:, :-1] - suffix / counts)

