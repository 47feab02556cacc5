"""Model containers and the joint log-density pieces.

Two regression levels share the compositions ``psi``:

* outcome:  ``y = c0 + c1 t + B(psi) beta + x kappa + eps``, ``eps ~ N(0, sigma2)``
* counts:   ``z_i ~ DM(gamma_i)`` with ``log gamma_ij = alpha_j + phi_j t_i + xdm_i theta_j``

Coefficients under selection carry discrete spike-and-slab priors whose
inclusion probabilities are integrated out (Beta-Bernoulli).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import betaln

from .errors import DataError, DimensionError, NumericalRangeError

__all__ = [
    "Augmentation",
    "Dataset",
    "DmParams",
    "Hyperparameters",
    "ModelState",
    "OutcomeParams",
    "LAMBDA_MAX",
    "beta_bernoulli_logpmf",
    "gamma_concentrations",
    "log_lik_outcome",
    "log_prior_blocks",
    "log_prior_state",
]

LAMBDA_MAX = 700.0
_LOG_2PI = math.log(2.0 * math.pi)


def _as_matrix(a, n, name):
    if a is None:
        return np.zeros((n, 0))
    a = np.asarray(a, dtype=float)
    if a.ndim == 1:
        a = a[:, None]
    if a.ndim != 2 or a.shape[0] != n:
        raise DimensionError(f"{name} must have {n} rows, got shape {a.shape}")
    return a


@dataclass(eq=False)
class Dataset:
    """Observed data for ``n`` subjects and ``J`` taxa.

    ``pseudocount`` is the value added to counts when the initial
    compositions (and hence the first balances) are formed.
    """

    counts: np.ndarray
    outcome: np.ndarray
    treatment: np.ndarray
    covariates: np.ndarray | None = None
    covariates_dm: np.ndarray | None = None
    taxa: list[str] | None = None
    subjects: list[str] | None = None
    covariate_names: list[str] | None = None
    covariate_dm_names: list[str] | None = None
    pseudocount: float = 0.5

    def __post_init__(self):
        z = np.asarray(self.counts, dtype=float)
        if z.ndim != 2:
            raise DimensionError("counts must be an n x J matrix")
        n, J = z.shape
        if J < 2:
            raise DimensionError("need at least two taxa")
        if np.any(z < 0) or np.any(z != np.round(z)):
            raise DataError("counts must be nonnegative integers")
        if np.any(z.sum(axis=1) <= 0):
            bad = int(np.flatnonzero(z.sum(axis=1) <= 0)[0])
            raise DataError(f"subject row {bad} has zero total reads")
        y = np.asarray(self.outcome, dtype=float).reshape(-1)
        t = np.asarray(self.treatment, dtype=float).reshape(-1)
        if y.shape != (n,) or t.shape != (n,):
            raise DimensionError("outcome and treatment must have one entry per subject")
        if not np.all(np.isin(t, (0.0, 1.0))):
            raise DataError("treatment must be binary (0/1)")
        if not np.all(np.isfinite(y)):
            raise DataError("outcome must be finite")
        self.counts = z
        self.outcome = y
        self.treatment = t
        self.covariates = _as_matrix(self.covariates, n, "covariates")
        self.covariates_dm = _as_matrix(self.covariates_dm, n, "covariates_dm")
        if self.taxa is None:
            self.taxa = [f"taxon{j + 1}" for j in range(J)]
        if self.subjects is None:
            self.subjects = [f"s{i + 1}" for i in range(n)]
        if self.covariate_names is None:
            self.covariate_names = [f"x{p + 1}" for p in range(self.covariates.shape[1])]
        if self.covariate_dm_names is None:
            self.covariate_dm_names = [f"w{p + 1}" for p in range(self.covariates_dm.shape[1])]
        if len(self.taxa) != J or len(self.subjects) != n:
            raise DimensionError("name lists do not match the counts matrix")

    @property
    def n(self) -> int:
        return self.counts.shape[0]

    @property
    def J(self) -> int:
        return self.counts.shape[1]

    @property
    def P(self) -> int:
        return self.covariates.shape[1]

    @property
    def P_dm(self) -> int:
        return self.covariates_dm.shape[1]

    @property
    def reads(self) -> np.ndarray:
        return self.counts.sum(axis=1)


@dataclass(eq=False)
class OutcomeParams:
    c0: float
    c1: float
    beta: np.ndarray
    xi: np.ndarray
    kappa: np.ndarray
    nu: np.ndarray
    sigma2: float

    @classmethod
    def zeros(cls, J, P):
        return cls(0.0, 0.0, np.zeros(J - 1), np.zeros(J - 1, dtype=np.int8),
                   np.zeros(P), np.zeros(P, dtype=np.int8), 1.0)


@dataclass(eq=False)
class DmParams:
    alpha: np.ndarray
    phi: np.ndarray
    varphi: np.ndarray
    theta: np.ndarray
    zeta: np.ndarray

    @classmethod
    def zeros(cls, J, P_dm):
        return cls(np.zeros(J), np.zeros(J), np.zeros(J, dtype=np.int8),
                   np.zeros((J, P_dm)), np.zeros((J, P_dm), dtype=np.int8))


@dataclass(eq=False)
class Augmentation:
    """Gamma latents, stored on the log scale to survive tiny shapes."""

    logk: np.ndarray
    u: np.ndarray

    @property
    def k(self):
        return np.exp(self.logk)

    @property
    def psi(self):
        lk = self.logk - self.logk.max(axis=1, keepdims=True)
        e = np.exp(lk)
        return e / e.sum(axis=1, keepdims=True)


@dataclass(eq=False)
class ModelState:
    outcome: OutcomeParams
    dm: DmParams
    aug: Augmentation

    def copy(self) -> "ModelState":
        def dup(obj):
            return replace(obj, **{f: np.array(v, copy=True)
                                   for f, v in vars(obj).items() if isinstance(v, np.ndarray)})
        return ModelState(dup(self.outcome), dup(self.dm), dup(self.aug))


@dataclass
class Hyperparameters:
    """Prior settings; defaults are the weakly informative simulation values."""

    h_c: float = 1.0
    h_beta: float = 1.0
    h_kappa: float = 1.0
    a0: float = 1.0
    b0: float = 1.0
    sigma2_alpha: float = 1.0
    r2: float | np.ndarray = 10.0
    a_xi: float = 1.0
    b_xi: float = 1.0
    a_nu: float = 1.0
    b_nu: float = 1.0
    a_varphi: float = 1.0
    b_varphi: float = 1.0
    a_zeta: float = 1.0
    b_zeta: float = 1.0

    def __post_init__(self):
        for name, value in vars(self).items():
            if np.any(np.asarray(value, dtype=float) <= 0):
                raise ValueError(f"hyperparameter {name} must be strictly positive")

    def slab_var_dm(self, J) -> np.ndarray:
        r2 = np.broadcast_to(np.asarray(self.r2, dtype=float), (J,))
        return np.array(r2, dtype=float)

    def with_inclusion(self, a, b) -> "Hyperparameters":
        """Same settings with every indicator family at Beta(a, b)."""
        return replace(self, a_xi=a, b_xi=b, a_nu=a, b_nu=b,
                       a_varphi=a, b_varphi=b, a_zeta=a, b_zeta=b)


def _norm_logpdf(x, var):
    x = np.asarray(x, dtype=float)
    return -0.5 * (_LOG_2PI + np.log(var) + x * x / var)


def beta_bernoulli_logpmf(indicators, a, b) -> float:
    """Joint log-probability of exchangeable indicators sharing a Beta(a, b) rate."""
    ind = np.asarray(indicators).reshape(-1)
    m = int(ind.sum())
    M = ind.size
    return float(betaln(a + m, b + M - m) - betaln(a, b))


def log_lik_outcome(outcome: OutcomeParams, balances, data: Dataset) -> float:
    """Gaussian log-likelihood of the outcome vector."""
    B = np.asarray(balances, dtype=float)
    if B.ndim != 2 or B.shape != (data.n, data.J - 1):
        raise DimensionError(f"balances must be {data.n} x {data.J - 1}, got {B.shape}")
    if outcome.beta.shape != (data.J - 1,) or outcome.kappa.shape != (data.P,):
        raise DimensionError("coefficient vectors do not match the dataset")
    if not outcome.sigma2 > 0:
        raise ValueError("sigma2 must be positive")
    mu = (outcome.c0 + outcome.c1 * data.treatment + B @ outcome.beta
          + data.covariates @ outcome.kappa)
    r = data.outcome - mu
    return float(-0.5 * data.n * (_LOG_2PI + math.log(outcome.sigma2))
                 - 0.5 * (r @ r) / outcome.sigma2)


def log_prior_blocks(state: ModelState, hp: Hyperparameters) -> dict[str, float]:
    """Log prior split into independent blocks.

    Inclusion probabilities are integrated out, so each indicator family
    contributes one Beta-Bernoulli term; slab densities enter only for
    included coefficients.
    """
    o, d = state.outcome, state.dm
    s2 = o.sigma2
    J = d.alpha.size
    r2 = hp.slab_var_dm(J)
    xi = o.xi.astype(bool)
    nu = o.nu.astype(bool)
    vp = d.varphi.astype(bool)
    zt = d.zeta.astype(bool)
    inv_gamma = (hp.a0 * math.log(hp.b0) - math.lgamma(hp.a0)
                 - (hp.a0 + 1.0) * math.log(s2) - hp.b0 / s2)
    theta_var = np.broadcast_to(r2[:, None], d.theta.shape)
    return {
        "intercepts": float(_norm_logpdf([o.c0, o.c1], hp.h_c * s2).sum()),
        "beta": float(_norm_logpdf(o.beta[xi], hp.h_beta * s2).sum()),
        "xi": beta_bernoulli_logpmf(o.xi, hp.a_xi, hp.b_xi),
        "kappa": float(_norm_logpdf(o.kappa[nu], hp.h_kappa * s2).sum()),
        "nu": beta_bernoulli_logpmf(o.nu, hp.a_nu, hp.b_nu),
        "sigma2": inv_gamma,
        "alpha": float(_norm_logpdf(d.alpha, hp.sigma2_alpha).sum()),
        "phi": float(_norm_logpdf(d.phi[vp], r2[vp]).sum()),
        "varphi": beta_bernoulli_logpmf(d.varphi, hp.a_varphi, hp.b_varphi),
        "theta": float(_norm_logpdf(d.theta[zt], theta_var[zt]).sum()),
        "zeta": beta_bernoulli_logpmf(d.zeta, hp.a_zeta, hp.b_zeta),
    }


def log_prior_state(state: ModelState, hp: Hyperparameters) -> float:
    return float(sum(log_prior_blocks(state, hp).values()))


def gamma_concentrations(dm: DmParams, data: Dataset) -> np.ndarray:
    """Dirichlet concentrations ``exp(alpha_j + phi_j t_i + xdm_i theta_j)``.

    Raises
    ------
    NumericalRangeError
        If a linear predictor exceeds ``LAMBDA_MAX``; ``index`` is ``(i, j)``.
    """
    lam = (dm.alpha[None, :] + data.treatment[:, None] * dm.phi[None, :]
           + data.covariates_dm @ dm.theta.T)
    if not np.all(np.isfinite(lam)) or lam.max() > LAMBDA_MAX:
        bad = np.unravel_index(np.argmax(np.where(np.isfinite(lam), lam, np.inf)), lam.shape)
        idx = (int(bad[0]), int(bad[1]))
        raise NumericalRangeError(
            f"linear predictor {lam[idx]:.4g} for subject {idx[0]}, taxon {idx[1]} "
            f"exceeds {LAMBDA_MAX}", index=idx)
    return np.exp(lam)
