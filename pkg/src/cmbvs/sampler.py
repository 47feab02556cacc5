"""Metropolis-within-Gibbs sampler for the joint outcome / Dirichlet-multinomial model.

One sweep runs, in order: :func:`update_u`, :func:`update_k`,
:func:`update_alpha`, :func:`update_spike_slab_dm`,
:func:`update_outcome_block`. All random variates for a step are drawn from
the chain's ``numpy.random.Generator`` before the (numba or numpy) kernel
runs, so a seed fixes the whole trajectory.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import gammaln

from . import kernels as _default_kernels
from .composition import PartitionScheme, sbp
from .errors import ChainAborted, DimensionError, UsageError
from .model import (
    LAMBDA_MAX,
    Augmentation,
    Dataset,
    DmParams,
    Hyperparameters,
    ModelState,
    OutcomeParams,
)

__all__ = [
    "Chain",
    "derive_seed",
    "PosteriorTrace",
    "SamplerConfig",
    "initial_state",
    "mppi",
    "run_chain",
    "update_alpha",
    "update_k",
    "update_outcome_block",
    "update_spike_slab_dm",
    "update_u",
]

log = logging.getLogger(__name__)

INDICATOR_FAMILIES = ("xi", "nu", "varphi", "zeta")
# sweeps between full recomputations of the incrementally updated DM caches
DM_REFRESH_EVERY = 100


@dataclass
class SamplerConfig:
    """Run length, proposal scales and model switches for one chain.

    ``full_scan`` proposes an Add-Delete move for every indicator each sweep
    instead of one uniformly chosen index per family. ``collapse_scale``
    updates the DM coefficients against the Dirichlet likelihood of ``psi``
    (the latent per-subject scale integrated out) and redraws that scale
    exactly before ``u``; turning it off gives the plain augmented-gamma
    updates. ``exclude_balances`` pins ``beta`` at zero, ``prior_only``
    removes every likelihood term, and ``fix_dm`` freezes ``alpha``, ``phi``
    and ``theta`` at their initial values.
    """

    iterations: int = 5000
    burn_in: int = 250
    thin: int = 10
    rw_sd_alpha: float = 0.5
    rw_sd_coef: float = 0.5
    seed: int = 0
    full_scan: bool = False
    collapse_scale: bool = True
    store_psi: bool = False
    exclude_balances: bool = False
    prior_only: bool = False
    fix_dm: bool = False

    def __post_init__(self):
        if self.iterations < 1:
            raise UsageError("iterations must be positive")
        if not 0 <= self.burn_in < self.iterations:
            raise UsageError("burn_in must satisfy 0 <= burn_in < iterations")
        if self.thin < 1:
            raise UsageError("thin must be at least 1")
        if self.rw_sd_alpha <= 0 or self.rw_sd_coef <= 0:
            raise UsageError("random-walk scales must be positive")

    @property
    def n_retained(self) -> int:
        return (self.iterations - self.burn_in) // self.thin


@dataclass(eq=False)
class PosteriorTrace:
    """Thinned post-burn-in samples of one chain.

    Coefficient arrays have the sample index first. ``psi`` is only present
    when the chain ran with ``store_psi``.
    """

    c0: np.ndarray
    c1: np.ndarray
    beta: np.ndarray
    xi: np.ndarray
    kappa: np.ndarray
    nu: np.ndarray
    sigma2: np.ndarray
    alpha: np.ndarray
    phi: np.ndarray
    varphi: np.ndarray
    theta: np.ndarray
    zeta: np.ndarray
    taxon_order: np.ndarray
    acceptance: dict = field(default_factory=dict)
    psi: np.ndarray | None = None
    taxa: list | None = None
    covariate_names: list | None = None
    covariate_dm_names: list | None = None
    covariates_dm: np.ndarray | None = None

    def __len__(self):
        return self.c1.shape[0]

    @property
    def scheme(self) -> PartitionScheme:
        return sbp(self.alpha.shape[1], self.taxon_order)

    @property
    def n_taxa(self) -> int:
        return self.alpha.shape[1]

    def acceptance_rates(self) -> dict[str, float]:
        return {name: (acc / prop if prop else float("nan"))
                for name, (prop, acc) in sorted(self.acceptance.items())}

    def columns(self) -> dict[str, np.ndarray]:
        """Flat, named columns (one per scalar parameter) in a fixed order."""
        taxa = self.taxa or [f"taxon{j + 1}" for j in range(self.n_taxa)]
        ordered = [taxa[j] for j in self.taxon_order]
        cov = self.covariate_names or [f"x{p + 1}" for p in range(self.kappa.shape[1])]
        cov_dm = self.covariate_dm_names or [f"w{p + 1}" for p in range(self.theta.shape[2])]
        cols = {"c0": self.c0, "c1": self.c1}
        for k in range(self.beta.shape[1]):
            cols[f"beta[{k + 1}:{ordered[k]}]"] = self.beta[:, k]
        for k in range(self.xi.shape[1]):
            cols[f"xi[{k + 1}:{ordered[k]}]"] = self.xi[:, k]
        for p, name in enumerate(cov):
            cols[f"kappa[{name}]"] = self.kappa[:, p]
            cols[f"nu[{name}]"] = self.nu[:, p]
        cols["sigma2"] = self.sigma2
        for j, name in enumerate(taxa):
            cols[f"alpha[{name}]"] = self.alpha[:, j]
        for j, name in enumerate(taxa):
            cols[f"phi[{name}]"] = self.phi[:, j]
            cols[f"varphi[{name}]"] = self.varphi[:, j]
        for j, name in enumerate(taxa):
            for p, cname in enumerate(cov_dm):
                cols[f"theta[{name},{cname}]"] = self.theta[:, j, p]
                cols[f"zeta[{name},{cname}]"] = self.zeta[:, j, p]
        if self.psi is not None:
            for i in range(self.psi.shape[1]):
                for j, name in enumerate(taxa):
                    cols[f"psi[{i + 1},{name}]"] = self.psi[:, i, j]
        return cols


def mppi(trace: PosteriorTrace, which: str) -> np.ndarray:
    """Marginal posterior probability of inclusion for an indicator family.

    ``which`` is one of ``"xi"``, ``"nu"``, ``"varphi"``, ``"zeta"``.
    """
    if which not in INDICATOR_FAMILIES:
        raise UsageError(f"unknown indicator family {which!r}")
    samples = np.asarray(getattr(trace, which))
    if samples.shape[0] == 0:
        raise UsageError("cannot compute MPPI from an empty trace")
    return samples.mean(axis=0)


def initial_state(data: Dataset) -> ModelState:
    """Coefficients and indicators at zero, latents at the observed counts."""
    z = data.counts
    alpha = np.log(z.mean(axis=0) + data.pseudocount)
    dm = DmParams.zeros(data.J, data.P_dm)
    dm.alpha = alpha
    logk = np.log(z + data.pseudocount)
    u = data.reads / np.exp(logk).sum(axis=1)
    return ModelState(OutcomeParams.zeros(data.J, data.P), dm, Augmentation(logk, u))


class Chain:
    """Mutable sampler state: one chain owns one instance.

    Besides the :class:`ModelState` it caches the DM linear predictor
    ``lam``, per-subject concentration totals ``gsum``, the outcome residual
    and the per-taxon outcome weights ``w = A.T @ beta`` (so the outcome
    linear predictor is ``logk @ w``).
    """

    def __init__(self, data: Dataset, hp: Hyperparameters, cfg: SamplerConfig,
                 scheme: PartitionScheme | None = None, init: ModelState | None = None,
                 phi_allowed: Sequence[bool] | None = None, backend=None):
        self.data = data
        self.hp = hp
        self.cfg = cfg
        self.K = backend if backend is not None else _default_kernels
        self.scheme = scheme if scheme is not None else sbp(data.J)
        if self.scheme.n_taxa != data.J:
            raise DimensionError("partition scheme does not match the number of taxa")
        self.state = (init if init is not None else initial_state(data)).copy()
        self._check_state_shapes()
        self.rng = np.random.default_rng(cfg.seed)
        n, J = data.n, data.J
        self.phi_allowed = (np.ones(J, dtype=np.bool_) if phi_allowed is None
                            else np.asarray(phi_allowed, dtype=np.bool_).copy())
        if self.phi_allowed.shape != (J,):
            raise DimensionError("phi_allowed must have one flag per taxon")
        dm = self.state.dm
        dm.phi[~self.phi_allowed] = 0.0
        dm.varphi[~self.phi_allowed] = 0
        self.ones = np.ones(n)
        self.t = data.treatment
        self.y = data.outcome
        self.X = data.covariates
        self.Xdm = data.covariates_dm
        self.zdot = data.reads
        self.z = data.counts
        self.slab_var_dm = hp.slab_var_dm(J)
        self.order = np.asarray(self.scheme.taxon_order, dtype=np.int64)
        self.scales = np.asarray(self.scheme.scales, dtype=float)
        self.basis = self.scheme.basis
        self.iteration = 0
        self.counters: dict[str, list[int]] = {}
        self.refresh_caches()

    # -- bookkeeping -------------------------------------------------------

    def _check_state_shapes(self):
        d, o, a = self.state.dm, self.state.outcome, self.state.aug
        n, J, P, Pd = self.data.n, self.data.J, self.data.P, self.data.P_dm
        shapes = [(d.alpha, (J,)), (d.phi, (J,)), (d.varphi, (J,)), (d.theta, (J, Pd)),
                  (d.zeta, (J, Pd)), (o.beta, (J - 1,)), (o.xi, (J - 1,)), (o.kappa, (P,)),
                  (o.nu, (P,)), (a.logk, (n, J)), (a.u, (n,))]
        for arr, shape in shapes:
            if arr.shape != shape:
                raise DimensionError(f"initial state array has shape {arr.shape}, expected {shape}")
        d.varphi = d.varphi.astype(np.int8)
        d.zeta = d.zeta.astype(np.int8)
        o.xi = o.xi.astype(np.int8)
        o.nu = o.nu.astype(np.int8)

    def tally(self, name, proposed, accepted):
        c = self.counters.setdefault(name, [0, 0])
        c[0] += int(proposed)
        c[1] += int(accepted)

    def refresh_caches(self):
        """Rebuild every cached quantity from the current state."""
        self.refresh_dm_caches()
        o = self.state.outcome
        self.w = self.basis.T @ o.beta
        self.resid = (self.y - o.c0 - o.c1 * self.t - self.state.aug.logk @ self.w
                      - self.X @ o.kappa)

    def refresh_dm_caches(self):
        """Recompute ``lam`` and the concentration caches the kernels update incrementally."""
        d = self.state.dm
        self.lam = (d.alpha[None, :] + self.t[:, None] * d.phi[None, :]
                    + self.Xdm @ d.theta.T)
        with np.errstate(over="ignore"):  # out-of-range values are caught by check()
            self.gam = np.exp(self.lam)
        self.lgg = gammaln(self.gam)
        self.gsum = self.gam.sum(axis=1)
        self.lgs = gammaln(self.gsum)
        n = self.lam.shape[0]
        self.bufs = (np.empty(n), np.empty(n), np.empty(n))

    @property
    def use_lik(self) -> bool:
        return not self.cfg.prior_only

    def _proposal_indices(self, size):
        if size == 0:
            return np.zeros(0, dtype=np.int64)
        if self.cfg.full_scan:
            return np.arange(size, dtype=np.int64)
        return self.rng.integers(size, size=1).astype(np.int64)

    def check(self):
        """Abort on non-finite state, range violations or broken exclusion coupling."""
        d, o, a = self.state.dm, self.state.outcome, self.state.aug
        last = self.iteration - 1
        # a sum is non-finite exactly when some term is
        lam_max = float(self.lam.max())
        if not math.isfinite(float(self.lam.sum())) or lam_max > LAMBDA_MAX:
            raise ChainAborted(f"DM linear predictor left the range (max {lam_max:.4g})",
                               last_good_iteration=last)
        if not (math.isfinite(float(a.logk.sum())) and math.isfinite(float(a.u.sum()))
                and float(a.u.min()) > 0):
            raise ChainAborted("non-finite gamma latents", last_good_iteration=last)
        if not (math.isfinite(o.sigma2) and o.sigma2 > 0 and math.isfinite(float(self.resid.sum()))):
            raise ChainAborted("non-finite outcome block", last_good_iteration=last)
        for coef, ind, name in ((o.beta, o.xi, "beta"), (o.kappa, o.nu, "kappa"),
                                (d.phi, d.varphi, "phi"), (d.theta, d.zeta, "theta")):
            if np.count_nonzero(coef[ind == 0]):
                raise ChainAborted(f"exclusion coupling broken for {name}",
                                   last_good_iteration=last)


# -- update steps ----------------------------------------------------------


def _log_gamma_variates(rng, shape):
    """``log`` of Gamma(shape, 1) variates, safe for shapes far below one."""
    g = rng.standard_gamma(shape + 1.0)
    v = rng.random(np.shape(shape))
    return np.log(g) + np.log(v) / shape


def update_u(chain: Chain) -> Chain:
    """Redraw ``u_i ~ Gamma(reads_i, rate=sum_j k_ij)``.

    Under ``collapse_scale`` the latent totals ``S_i = sum_j k_ij`` are
    first redrawn from their exact conditional ``Gamma(sum_j gamma_ij, 1)``
    (which leaves ``psi`` untouched), making this a joint draw of
    ``(S_i, u_i)``. Skipped under ``prior_only``, where the latents feed
    nothing.
    """
    if not chain.use_lik:
        return chain
    aug = chain.state.aug
    lmax = aug.logk.max(axis=1)
    log_s = lmax + np.log(np.exp(aug.logk - lmax[:, None]).sum(axis=1))
    if chain.cfg.collapse_scale:
        new_log_s = _log_gamma_variates(chain.rng, chain.gsum)
        aug.logk += (new_log_s - log_s)[:, None]
        log_s = new_log_s
    rate = np.exp(log_s)
    if not np.all(rate > 0) or not np.all(np.isfinite(rate)):
        raise ChainAborted("nonpositive gamma rate in u update",
                           last_good_iteration=chain.iteration - 1)
    aug.u = chain.rng.standard_gamma(chain.zdot) / rate
    return chain


def update_k(chain: Chain) -> Chain:
    """Per-coordinate MH for the gamma latents ``k_ij``.

    Proposals come from the DM-only full conditional
    ``Gamma(gamma_ij + z_ij, 1 + u_i)``; acceptance uses the outcome
    likelihood ratio, which only involves the taxon's own weight in the
    outcome predictor. With ``beta = 0`` every proposal is accepted.
    Skipped under ``prior_only``.
    """
    if not chain.use_lik:
        return chain
    aug = chain.state.aug
    shape = chain.gam + chain.z
    g = chain.rng.standard_gamma(shape + 1.0)
    v = chain.rng.random(shape.shape)
    acc = chain.rng.random(shape.shape)
    inv2s2 = 0.5 / chain.state.outcome.sigma2 if chain.use_lik else 0.0
    log1pu = np.log1p(aug.u)
    nacc = chain.K.k_step(aug.logk, shape, log1pu, chain.w, chain.resid, inv2s2, g, v, acc)
    if not np.all(np.isfinite(aug.logk)):
        raise ChainAborted("non-finite acceptance in k update",
                           last_good_iteration=chain.iteration - 1)
    chain.tally("k", shape.size, nacc)
    return chain


def _dm_logx(chain: Chain):
    logk = chain.state.aug.logk
    if not chain.cfg.collapse_scale:
        return logk
    lmax = logk.max(axis=1, keepdims=True)
    return logk - (lmax + np.log(np.exp(logk - lmax).sum(axis=1, keepdims=True)))


def update_alpha(chain: Chain) -> Chain:
    """Gaussian random-walk MH on each taxon intercept ``alpha_j``."""
    J = chain.data.J
    eps = chain.rng.standard_normal(J)
    acc = chain.rng.random(J)
    if chain.cfg.fix_dm:
        return chain
    if chain.iteration % DM_REFRESH_EVERY == 0:
        chain.refresh_dm_caches()
    chain._logx = _dm_logx(chain)
    nacc = chain.K.alpha_step(chain.state.dm.alpha, chain.lam, chain.gam, chain.lgg,
                              chain._logx, chain.gsum, chain.lgs, chain.ones,
                              chain.hp.sigma2_alpha, chain.cfg.rw_sd_alpha, eps, acc,
                              chain.cfg.collapse_scale, chain.use_lik, *chain.bufs)
    chain.tally("alpha", J, nacc)
    return chain


def update_spike_slab_dm(chain: Chain) -> Chain:
    """Add-Delete moves plus within-model refresh for ``phi`` and ``theta``."""
    d, hp, cfg, rng = chain.state.dm, chain.hp, chain.cfg, chain.rng
    J, Pd = chain.data.J, chain.data.P_dm
    collapsed = cfg.collapse_scale
    idx_phi = chain._proposal_indices(J)
    draws_phi = rng.standard_normal(idx_phi.size)
    acc_phi = rng.random(idx_phi.size)
    idx_theta = chain._proposal_indices(J * Pd)
    draws_theta = rng.standard_normal(idx_theta.size)
    acc_theta = rng.random(idx_theta.size)
    eps_phi = rng.standard_normal(J)
    uacc_phi = rng.random(J)
    eps_theta = rng.standard_normal((Pd, J))
    uacc_theta = rng.random((Pd, J))
    if cfg.fix_dm:
        return chain
    if not hasattr(chain, "_logx"):
        chain._logx = _dm_logx(chain)
    cache = (chain.lam, chain.gam, chain.lgg, chain._logx, chain.gsum, chain.lgs)
    K = chain.K

    count = int(d.varphi.sum())
    count, nacc = K.dm_add_delete(d.phi, d.varphi, chain.phi_allowed, *cache, chain.t,
                                  chain.slab_var_dm, hp.a_varphi, hp.b_varphi, count, J,
                                  idx_phi, draws_phi, acc_phi, collapsed, chain.use_lik,
                                  *chain.bufs)
    chain.tally("phi_add_delete", int(chain.phi_allowed[idx_phi].sum()), nacc)

    if Pd:
        # theta proposals index (j, p) pairs in row-major order of a J x Pd grid
        theta_t = np.ascontiguousarray(d.theta.T)
        zeta_t = np.ascontiguousarray(d.zeta.T)
        count = int(zeta_t.sum())
        everything = np.ones(J, dtype=np.bool_)
        total = 0
        for p in range(Pd):
            sel = (idx_theta % Pd) == p
            cov = np.ascontiguousarray(chain.Xdm[:, p])
            count, nacc = K.dm_add_delete(theta_t[p], zeta_t[p], everything, *cache, cov,
                                          chain.slab_var_dm, hp.a_zeta, hp.b_zeta, count,
                                          J * Pd, idx_theta[sel] // Pd, draws_theta[sel],
                                          acc_theta[sel], collapsed, chain.use_lik,
                                          *chain.bufs)
            total += nacc
        chain.tally("theta_add_delete", idx_theta.size, total)

    nprop, nacc = K.dm_refresh(d.phi, d.varphi, *cache, chain.t, chain.slab_var_dm,
                               cfg.rw_sd_coef, eps_phi, uacc_phi, collapsed, chain.use_lik,
                               *chain.bufs)
    chain.tally("phi_refresh", nprop, nacc)
    if Pd:
        tot_p = tot_a = 0
        for p in range(Pd):
            cov = np.ascontiguousarray(chain.Xdm[:, p])
            nprop, nacc = K.dm_refresh(theta_t[p], zeta_t[p], *cache, cov, chain.slab_var_dm,
                                       cfg.rw_sd_coef, eps_theta[p], uacc_theta[p],
                                       collapsed, chain.use_lik, *chain.bufs)
            tot_p += nprop
            tot_a += nacc
        chain.tally("theta_refresh", tot_p, tot_a)
        d.theta = np.ascontiguousarray(theta_t.T)
        d.zeta = np.ascontiguousarray(zeta_t.T)
    del chain._logx
    return chain


def _outcome_design(chain: Chain, B):
    return np.column_stack([chain.ones, chain.t, B, chain.X])


def _prior_precisions(hp: Hyperparameters, J: int, P: int) -> np.ndarray:
    return np.concatenate([[1.0 / hp.h_c, 1.0 / hp.h_c], np.full(J - 1, 1.0 / hp.h_beta),
                           np.full(P, 1.0 / hp.h_kappa)])


def collapsed_outcome_score(gram, fy, yy, cols, prec, a0, b0, n) -> float:
    """Log marginal likelihood of ``y`` (up to a constant) for one active set.

    Intercepts and included coefficients (prior ``N(0, sigma2 / prec)``) and
    ``sigma2 ~ InvGamma(a0, b0)`` are integrated out. ``gram = F.T @ F`` and
    ``fy = F.T @ y`` refer to the full design ``F``; ``cols`` selects the
    active columns.
    """
    Q = gram[np.ix_(cols, cols)] + np.diag(prec[cols])
    L = np.linalg.cholesky(Q)
    v = np.linalg.solve(L, fy[cols])
    quad = yy - float(v @ v)
    return float(0.5 * np.log(prec[cols]).sum() - np.log(np.diag(L)).sum()
                 - (a0 + 0.5 * n) * math.log(b0 + 0.5 * quad))


def update_outcome_block(chain: Chain) -> Chain:
    """Outcome-level updates given the current balances.

    Add-Delete moves flip one indicator of ``xi`` and of ``nu`` (every
    indicator under ``full_scan``); each flip is accepted on the prior odds
    times the ratio of marginal likelihoods with the coefficients and
    ``sigma2`` integrated out. Then ``sigma2`` and the intercepts plus all
    included coefficients are drawn jointly from their exact conditional
    (inverse-gamma, then Gaussian given ``sigma2``).
    """
    o, hp, cfg, rng = chain.state.outcome, chain.hp, chain.cfg, chain.rng
    n, J, P = chain.data.n, chain.data.J, chain.data.P
    if cfg.exclude_balances:
        B = np.zeros((n, J - 1))  # never active; skip the kernel
    else:
        B = chain.K.balances(chain.state.aug.logk, chain.order, chain.scales)
    F = _outcome_design(chain, B)
    prec = _prior_precisions(hp, J, P)
    use_lik = chain.use_lik
    if use_lik:
        gram = F.T @ F
        fy = F.T @ chain.y
        yy = float(chain.y @ chain.y)
    else:
        gram = np.zeros((F.shape[1], F.shape[1]))
        fy = np.zeros(F.shape[1])
        yy = 0.0
    active = np.concatenate([[1, 1], o.xi, o.nu]).astype(bool)

    idx_b = chain._proposal_indices(0 if cfg.exclude_balances else J - 1)
    acc_b = rng.random(idx_b.size)
    idx_k = chain._proposal_indices(P)
    acc_k = rng.random(idx_k.size)

    def score():
        if not use_lik:
            return 0.0
        return collapsed_outcome_score(gram, fy, yy, np.flatnonzero(active), prec,
                                       hp.a0, hp.b0, n)

    current = score() if idx_b.size or idx_k.size else 0.0
    for idx, acc, ind, offset, a, b, name in (
            (idx_b, acc_b, o.xi, 2, hp.a_xi, hp.b_xi, "beta_add_delete"),
            (idx_k, acc_k, o.nu, 1 + J, hp.a_nu, hp.b_nu, "kappa_add_delete")):
        size = ind.size
        nacc = 0
        for j, u in zip(idx, acc):
            m_other = int(ind.sum()) - int(ind[j])
            if ind[j]:
                lr = math.log((b + size - 1 - m_other) / (a + m_other))
            else:
                lr = math.log((a + m_other) / (b + size - 1 - m_other))
            active[offset + j] = not ind[j]
            proposed = score()
            if math.log(u) < lr + proposed - current:
                ind[j] = 1 - ind[j]
                current = proposed
                nacc += 1
            else:
                active[offset + j] = bool(ind[j])
        if idx.size:
            chain.tally(name, idx.size, nacc)

    cols = np.flatnonzero(active)
    m = cols.size
    Q = gram[np.ix_(cols, cols)] + np.diag(prec[cols])
    L = np.linalg.cholesky(Q)
    v = np.linalg.solve(L, fy[cols])
    shape = hp.a0 + (0.5 * n if use_lik else 0.0)
    rate = hp.b0 + (0.5 * (yy - float(v @ v)) if use_lik else 0.0)
    g = rng.standard_gamma(shape)
    eps = rng.standard_normal(m)
    o.sigma2 = float(rate / g)
    coef = np.linalg.solve(L.T, v + math.sqrt(o.sigma2) * eps)
    full = np.zeros(F.shape[1])
    full[cols] = coef
    o.c0, o.c1 = float(full[0]), float(full[1])
    o.beta = full[2:1 + J].copy()
    o.kappa = full[1 + J:].copy()

    chain.w = chain.basis.T @ o.beta
    chain.resid = (chain.y - o.c0 - o.c1 * chain.t - chain.state.aug.logk @ chain.w
                   - chain.X @ o.kappa)
    return chain


def sigma2_conditional(resid_ss: float, penalty: float, n: int, m: int,
                       hp: Hyperparameters) -> tuple[float, float]:
    """Shape and rate of the inverse-gamma full conditional of ``sigma2``.

    ``resid_ss`` is the residual sum of squares, ``penalty`` the prior
    quadratic form ``(c0^2 + c1^2)/h_c + |beta|^2/h_beta + |kappa|^2/h_kappa``
    and ``m`` the number of included selectable coefficients.
    """
    return hp.a0 + 0.5 * n + 0.5 * (2 + m), hp.b0 + 0.5 * resid_ss + 0.5 * penalty


def sweep(chain: Chain) -> Chain:
    chain.iteration += 1
    update_u(chain)
    update_k(chain)
    update_alpha(chain)
    update_spike_slab_dm(chain)
    update_outcome_block(chain)
    chain.check()
    return chain


def run_chain(data: Dataset, hp: Hyperparameters | None = None,
              cfg: SamplerConfig | None = None, *, scheme: PartitionScheme | None = None,
              init: ModelState | None = None, phi_allowed=None, backend=None) -> PosteriorTrace:
    """Run one chain and return its thinned post-burn-in trace.

    Parameters
    ----------
    data : Dataset
    hp : Hyperparameters, optional
    cfg : SamplerConfig, optional
    scheme : PartitionScheme, optional
        Balance ordering; identity when omitted.
    init : ModelState, optional
        Starting point; see :func:`initial_state` for the default.
    phi_allowed : sequence of bool, optional
        Taxa whose treatment coefficient may enter the model. Others are
        pinned at zero with no selection.
    backend : module, optional
        Kernel implementation; defaults to the backend chosen at import.

    Raises
    ------
    ChainAborted
        On non-finite values or invariant violations, with the last good
        iteration attached.
    """
    hp = hp if hp is not None else Hyperparameters()
    cfg = cfg if cfg is not None else SamplerConfig()
    chain = Chain(data, hp, cfg, scheme=scheme, init=init, phi_allowed=phi_allowed,
                  backend=backend)
    n, J, P, Pd = data.n, data.J, data.P, data.P_dm
    S = cfg.n_retained
    tr = {
        "c0": np.empty(S), "c1": np.empty(S), "sigma2": np.empty(S),
        "beta": np.empty((S, J - 1)), "xi": np.empty((S, J - 1), dtype=np.int8),
        "kappa": np.empty((S, P)), "nu": np.empty((S, P), dtype=np.int8),
        "alpha": np.empty((S, J)), "phi": np.empty((S, J)), "varphi": np.empty((S, J), dtype=np.int8),
        "theta": np.empty((S, J, Pd)), "zeta": np.empty((S, J, Pd), dtype=np.int8),
    }
    psi = np.empty((S, n, J)) if cfg.store_psi else None
    s = 0
    for it in range(1, cfg.iterations + 1):
        try:
            sweep(chain)
        except FloatingPointError as exc:  # pragma: no cover - numpy errstate is default
            raise ChainAborted(str(exc), last_good_iteration=it - 1) from exc
        if it > cfg.burn_in and (it - cfg.burn_in) % cfg.thin == 0:
            o, d = chain.state.outcome, chain.state.dm
            tr["c0"][s], tr["c1"][s], tr["sigma2"][s] = o.c0, o.c1, o.sigma2
            tr["beta"][s], tr["xi"][s] = o.beta, o.xi
            tr["kappa"][s], tr["nu"][s] = o.kappa, o.nu
            tr["alpha"][s], tr["phi"][s], tr["varphi"][s] = d.alpha, d.phi, d.varphi
            tr["theta"][s], tr["zeta"][s] = d.theta, d.zeta
            if psi is not None:
                psi[s] = chain.state.aug.psi
            s += 1
    acceptance = {k: tuple(v) for k, v in chain.counters.items()}
    rates = ", ".join(f"{k}={a / p:.3f}" for k, (p, a) in sorted(acceptance.items()) if p)
    log.debug("chain seed=%s order[0]=%s acceptance: %s", cfg.seed, chain.order[0], rates)
    return PosteriorTrace(
        **tr, taxon_order=chain.order.copy(), acceptance=acceptance, psi=psi,
        taxa=list(data.taxa), covariate_names=list(data.covariate_names),
        covariate_dm_names=list(data.covariate_dm_names),
        covariates_dm=data.covariates_dm.copy(),
    )


def config_items(cfg: SamplerConfig) -> dict:
    return asdict(cfg)


def derive_seed(seed: int, *keys: int) -> int:
    """Child seed for a sub-task (refit, replicate) of a run seeded with ``seed``.

    Distinct key tuples give statistically independent streams; the mapping
    is fixed so results do not depend on scheduling.
    """
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in keys))
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))
