"""Causal estimands from a posterior trace and the three selection strategies.

Per retained sample, with ``A`` the ILR basis of the trace's ordering:

* direct effect: ``c1``;
* contrast ``vartheta_j = E[log psi_j | t=1] - E[log psi_j | t=0]`` (digamma form);
* taxon weights ``w = A.T @ beta``;
* relative indirect effects ``delta_j = w_j * vartheta_j``;
* overall indirect effect ``delta = beta @ (E[B | t=1] - E[B | t=0])``, which
  equals ``sum_j delta_j``.

Excluded coefficients are exact zeros in the trace, so model uncertainty
propagates into every summary.
"""

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import digamma

from .composition import PartitionScheme, ilr_basis, sbp
from .errors import ChainAborted, DomainError, UsageError
from .model import Dataset, DmParams, Hyperparameters
from .sampler import PosteriorTrace, SamplerConfig, derive_seed, mppi, run_chain

__all__ = [
    "EffectSummary",
    "MediationResult",
    "StrategyConfig",
    "credible_interval",
    "direct_effect",
    "dm_profiles",
    "expected_balance",
    "expected_log_psi",
    "mediate",
    "overall_indirect",
    "relative_indirect",
    "select_cmbvs1",
    "select_cmbvs2",
    "select_cmbvs3",
]

log = logging.getLogger(__name__)

STRATEGIES = ("cmbvs1", "cmbvs2", "cmbvs3")


def credible_interval(samples, level: float = 0.95) -> tuple[float, float]:
    """Equal-tail interval from empirical quantiles (linear interpolation)."""
    if not 0.0 < level < 1.0:
        raise UsageError("credible level must lie in (0, 1)")
    x = np.asarray(samples, dtype=float).reshape(-1)
    if x.size == 0:
        raise UsageError("cannot summarise an empty sample")
    tail = (1.0 - level) / 2.0
    lo, hi = np.quantile(x, [tail, 1.0 - tail])
    return float(lo), float(hi)


@dataclass(eq=False)
class EffectSummary:
    """Posterior summary of one estimand.

    ``profile`` indexes the unique DM covariate profile conditioned on
    (``None`` for the population level). ``selected`` is ``None`` when no
    selection rule applies.
    """

    name: str
    samples: np.ndarray
    mean: float
    lower: float
    upper: float
    taxon: str | None = None
    profile: int | None = None
    profile_values: tuple = ()
    selected: bool | None = None
    mppi_phi: float | None = None
    mppi_beta: float | None = None
    level: float = 0.95

    @classmethod
    def from_samples(cls, name, samples, level=0.95, **kw) -> "EffectSummary":
        s = np.asarray(samples, dtype=float).reshape(-1)
        lo, hi = credible_interval(s, level)
        mean = float(s.mean())
        # guard the ordering against rounding when all samples coincide
        mean = min(max(mean, lo), hi)
        return cls(name=name, samples=s, mean=mean, lower=lo, upper=hi, level=level, **kw)

    @property
    def excludes_zero(self) -> bool:
        return self.lower > 0.0 or self.upper < 0.0


@dataclass
class StrategyConfig:
    """Selection strategy and its thresholds.

    ``exhaustive`` makes CMbvs1 refit with every taxon first instead of
    only those whose treatment term passed the threshold in the base fit.
    ``workers`` > 1 runs the refits in a process pool; results do not
    depend on it.
    """

    strategy: str = "cmbvs1"
    mppi_threshold: float = 0.5
    ci_level: float = 0.95
    exhaustive: bool = False
    workers: int = 1

    def __post_init__(self):
        self.strategy = str(self.strategy).lower()
        if self.strategy not in STRATEGIES:
            raise UsageError(f"strategy must be one of {', '.join(STRATEGIES)}")
        if not 0.0 < self.mppi_threshold < 1.0:
            raise UsageError("mppi_threshold must lie in (0, 1)")
        if not 0.0 < self.ci_level < 1.0:
            raise UsageError("ci_level must lie in (0, 1)")
        if self.workers < 1:
            raise UsageError("workers must be at least 1")


# -- expectations -------------------------------------------------------------


def _linear_predictor(alpha, phi, theta, t, x):
    alpha = np.asarray(alpha, dtype=float)
    lam = alpha + t * np.asarray(phi, dtype=float)
    theta = np.asarray(theta, dtype=float)
    if x is not None and theta.size:
        x = np.asarray(x, dtype=float).reshape(-1)
        lam = lam + theta @ x
    return lam


def expected_log_psi_from_gamma(gamma) -> np.ndarray:
    """``E[log psi_j] = digamma(gamma_j) - digamma(sum_k gamma_k)`` along the last axis."""
    g = np.asarray(gamma, dtype=float)
    if not np.all(np.isfinite(g)) or np.any(g <= 0):
        raise DomainError("Dirichlet concentrations must be positive and finite")
    return digamma(g) - digamma(g.sum(axis=-1, keepdims=True))


def expected_log_psi(dm: DmParams, t: float, x=None) -> np.ndarray:
    """Expected log relative abundances at treatment ``t`` and DM covariates ``x``.

    Arrays in ``dm`` may carry leading sample axes (``alpha`` of shape
    ``(..., J)``, ``theta`` of shape ``(..., J, P_dm)``).
    """
    lam = _linear_predictor(dm.alpha, dm.phi, dm.theta, t, x)
    with np.errstate(over="ignore"):
        gamma = np.exp(lam)
    return expected_log_psi_from_gamma(gamma)


def expected_balance(dm: DmParams, scheme: PartitionScheme, t: float, x=None) -> np.ndarray:
    """Expected balances ``A @ E[log psi]`` under ``scheme``."""
    return expected_log_psi(dm, t, x) @ scheme.basis.T


# -- per-sample estimands ------------------------------------------------------


def _trace_dm(trace: PosteriorTrace) -> DmParams:
    return DmParams(trace.alpha, trace.phi, trace.varphi, trace.theta, trace.zeta)


def dm_profiles(trace_or_data) -> tuple[np.ndarray, np.ndarray]:
    """Unique DM covariate rows and their subject counts.

    Without DM covariates there is a single empty profile shared by all
    subjects.
    """
    X = np.asarray(trace_or_data.covariates_dm, dtype=float)
    if X.shape[1] == 0:
        return np.zeros((1, 0)), np.array([X.shape[0]])
    rows, counts = np.unique(X, axis=0, return_counts=True)
    return rows, counts


def _profile_list(trace, profile):
    """(weights, rows) to average over: one profile, or all subjects' profiles."""
    rows, counts = dm_profiles(trace)
    if profile is None:
        return counts / counts.sum(), rows
    if isinstance(profile, (int, np.integer)):
        if not 0 <= profile < rows.shape[0]:
            raise UsageError(f"profile index {profile} out of range")
        return np.ones(1), rows[profile:profile + 1]
    x = np.asarray(profile, dtype=float).reshape(1, -1)
    if x.shape[1] != rows.shape[1]:
        raise UsageError("profile length does not match the DM covariates")
    return np.ones(1), x


def contrast_samples(trace: PosteriorTrace, profile=None) -> np.ndarray:
    """Per-sample ``vartheta`` (S x J): treatment contrast of ``E[log psi]``."""
    dm = _trace_dm(trace)
    weights, rows = _profile_list(trace, profile)
    out = np.zeros_like(trace.alpha)
    for wgt, x in zip(weights, rows):
        out += wgt * (expected_log_psi(dm, 1.0, x) - expected_log_psi(dm, 0.0, x))
    return out


def taxon_weights(trace: PosteriorTrace) -> np.ndarray:
    """Per-sample outcome weights on ``log psi`` (S x J), ``A.T @ beta``."""
    return trace.beta @ ilr_basis(trace.scheme)


def relative_samples(trace: PosteriorTrace, profile=None) -> np.ndarray:
    """Per-sample relative indirect effects (S x J, original taxon order)."""
    return taxon_weights(trace) * contrast_samples(trace, profile)


def overall_samples(trace: PosteriorTrace, profile=None) -> np.ndarray:
    """Per-sample overall indirect effect via expected balances."""
    dm = _trace_dm(trace)
    scheme = trace.scheme
    weights, rows = _profile_list(trace, profile)
    out = np.zeros(len(trace))
    for wgt, x in zip(weights, rows):
        diff = expected_balance(dm, scheme, 1.0, x) - expected_balance(dm, scheme, 0.0, x)
        out += wgt * np.einsum("sk,sk->s", trace.beta, diff)
    return out


def _profile_kw(trace, profile):
    if profile is None:
        return {}
    rows, _ = dm_profiles(trace)
    if isinstance(profile, (int, np.integer)):
        return {"profile": int(profile), "profile_values": tuple(rows[profile])}
    return {"profile_values": tuple(np.asarray(profile, dtype=float).reshape(-1))}


def direct_effect(trace: PosteriorTrace, level: float = 0.95) -> EffectSummary:
    if len(trace) == 0:
        raise UsageError("empty trace")
    return EffectSummary.from_samples("direct", trace.c1, level)


def overall_indirect(trace: PosteriorTrace, profile=None, level: float = 0.95) -> EffectSummary:
    """Overall indirect effect; ``profile`` is a profile index, a covariate row or ``None``."""
    if len(trace) == 0:
        raise UsageError("empty trace")
    return EffectSummary.from_samples("overall_indirect", overall_samples(trace, profile),
                                      level, **_profile_kw(trace, profile))


def relative_indirect(trace: PosteriorTrace, profile=None,
                      level: float = 0.95) -> list[EffectSummary]:
    """Relative indirect effect of every taxon, in original taxon order."""
    if len(trace) == 0:
        raise UsageError("empty trace")
    d = relative_samples(trace, profile)
    taxa = trace.taxa or [f"taxon{j + 1}" for j in range(trace.n_taxa)]
    mp_phi = mppi(trace, "varphi")
    # MPPI of the balance that leads with each taxon, where one exists
    mp_beta = np.full(trace.n_taxa, np.nan)
    mp_beta[trace.taxon_order[:-1]] = mppi(trace, "xi")
    kw = _profile_kw(trace, profile)
    return [EffectSummary.from_samples("relative_indirect", d[:, j], level, taxon=taxa[j],
                                       mppi_phi=float(mp_phi[j]),
                                       mppi_beta=(None if np.isnan(mp_beta[j])
                                                  else float(mp_beta[j])), **kw)
            for j in range(trace.n_taxa)]


# -- strategies ----------------------------------------------------------------


@dataclass(eq=False)
class MediationResult:
    """Outcome of one selection strategy.

    ``selected_by_profile`` has one row per unique DM covariate profile;
    ``selected`` flags a taxon if any profile selects it. ``relative`` holds
    one list of per-taxon summaries per profile.
    """

    strategy: str
    taxa: list
    selected: np.ndarray
    selected_by_profile: np.ndarray
    relative: list
    overall: list
    direct: EffectSummary
    profiles: np.ndarray
    mppi_phi: np.ndarray
    base_trace: PosteriorTrace | None = None
    fitted_first: list = field(default_factory=list)
    refit_trace: PosteriorTrace | None = None

    def summaries(self) -> list[EffectSummary]:
        out = [self.direct, *self.overall]
        for per_profile in self.relative:
            out.extend(per_profile)
        return out


def _profile_ids(trace):
    rows, _ = dm_profiles(trace)
    if rows.shape[1] == 0:
        return rows, [None]
    return rows, list(range(rows.shape[0]))


def _ci_selection(trace, scfg, strategy, base_trace=None, refit_trace=None):
    rows, ids = _profile_ids(trace)
    relative, overall, sel = [], [], []
    for pid in ids:
        eff = relative_indirect(trace, pid, scfg.ci_level)
        for e in eff:
            e.selected = e.excludes_zero
        relative.append(eff)
        overall.append(overall_indirect(trace, pid, scfg.ci_level))
        sel.append([e.selected for e in eff])
    sel = np.array(sel, dtype=bool)
    return MediationResult(
        strategy=strategy, taxa=list(trace.taxa), selected=sel.any(axis=0),
        selected_by_profile=sel, relative=relative, overall=overall,
        direct=direct_effect(trace, scfg.ci_level), profiles=rows,
        mppi_phi=mppi(base_trace if base_trace is not None else trace, "varphi"),
        base_trace=base_trace if base_trace is not None else trace, refit_trace=refit_trace)


def select_cmbvs2(trace: PosteriorTrace, strategy_cfg: StrategyConfig | None = None) -> MediationResult:
    """Single fit: select a taxon when the credible interval of its effect excludes 0."""
    scfg = strategy_cfg or StrategyConfig("cmbvs2")
    if len(trace) == 0:
        raise UsageError("empty trace")
    return _ci_selection(trace, scfg, "cmbvs2")


def _base_fit(data, hp, cfg, base_trace):
    if base_trace is not None:
        return base_trace
    return run_chain(data, hp, cfg)


def select_cmbvs3(data: Dataset, hp: Hyperparameters, cfg: SamplerConfig,
                  strategy_cfg: StrategyConfig | None = None,
                  base_trace: PosteriorTrace | None = None) -> MediationResult:
    """Fit, drop treatment terms of the count model below the threshold, refit, apply the CI rule."""
    scfg = strategy_cfg or StrategyConfig("cmbvs3")
    base = _base_fit(data, hp, cfg, base_trace)
    keep = mppi(base, "varphi") >= scfg.mppi_threshold
    log.info("cmbvs3: %d of %d treatment terms kept for the refit", keep.sum(), data.J)
    refit = run_chain(data, hp, replace(cfg, seed=derive_seed(cfg.seed, 3)), phi_allowed=keep)
    return _ci_selection(refit, scfg, "cmbvs3", base_trace=base, refit_trace=refit)


def _fit_first(args):
    data, hp, cfg, j = args
    order = [j] + [k for k in range(data.J) if k != j]
    try:
        return run_chain(data, hp, replace(cfg, seed=derive_seed(cfg.seed, 1, j)),
                         scheme=sbp(data.J, order))
    except ChainAborted as exc:
        exc.taxon = j
        raise


def select_cmbvs1(data: Dataset, hp: Hyperparameters, cfg: SamplerConfig,
                  strategy_cfg: StrategyConfig | None = None,
                  base_trace: PosteriorTrace | None = None) -> MediationResult:
    """Refit with each candidate taxon leading the balances.

    Taxon ``j`` is selected when, in the fit that places it first, both its
    treatment term and the first balance have MPPI at or above the
    threshold; its relative effect is taken from that fit. Without
    ``exhaustive`` only taxa whose treatment term passed the threshold in
    the base (identity-order) fit are refitted; the others are reported
    unselected with their effect under the base ordering. Direct and
    overall effects come from the base fit.
    """
    scfg = strategy_cfg or StrategyConfig("cmbvs1")
    base = _base_fit(data, hp, cfg, base_trace)
    thr = scfg.mppi_threshold
    mp_phi = mppi(base, "varphi")
    candidates = (list(range(data.J)) if scfg.exhaustive
                  else [j for j in range(data.J) if mp_phi[j] >= thr])
    jobs = [(data, hp, cfg, j) for j in candidates]
    if scfg.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=scfg.workers) as pool:
            fits = list(pool.map(_fit_first, jobs))
    else:
        fits = [_fit_first(job) for job in jobs]
    by_taxon = dict(zip(candidates, fits))

    rows, ids = _profile_ids(base)
    base_rel = [relative_indirect(base, pid, scfg.ci_level) for pid in ids]
    relative = [list(r) for r in base_rel]
    sel = np.zeros((len(ids), data.J), dtype=bool)
    for j, fit in by_taxon.items():
        ok = mppi(fit, "varphi")[j] >= thr and mppi(fit, "xi")[0] >= thr
        for q, pid in enumerate(ids):
            eff = relative_indirect(fit, pid, scfg.ci_level)[j]
            eff.selected = bool(ok)
            relative[q][j] = eff
            sel[q, j] = ok
    for q in range(len(ids)):
        for j in range(data.J):
            if j not in by_taxon:
                relative[q][j].selected = False
    overall = [overall_indirect(base, pid, scfg.ci_level) for pid in ids]
    return MediationResult(
        strategy="cmbvs1", taxa=list(data.taxa), selected=sel.any(axis=0),
        selected_by_profile=sel, relative=relative, overall=overall,
        direct=direct_effect(base, scfg.ci_level), profiles=rows, mppi_phi=mp_phi,
        base_trace=base, fitted_first=list(candidates))


def mediate(data: Dataset, hp: Hyperparameters | None = None, cfg: SamplerConfig | None = None,
            strategy_cfg: StrategyConfig | None = None,
            base_trace: PosteriorTrace | None = None) -> MediationResult:
    """Run the configured strategy; ``base_trace`` reuses an identity-order fit."""
    hp = hp or Hyperparameters()
    cfg = cfg or SamplerConfig()
    scfg = strategy_cfg or StrategyConfig()
    if scfg.strategy == "cmbvs1":
        return select_cmbvs1(data, hp, cfg, scfg, base_trace)
    if scfg.strategy == "cmbvs3":
        return select_cmbvs3(data, hp, cfg, scfg, base_trace)
    return select_cmbvs2(_base_fit(data, hp, cfg, base_trace), scfg)
