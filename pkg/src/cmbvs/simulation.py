"""Scenario generators, ground truth and performance scoring.

Data follow the log-linear generative model: compositions are Dirichlet
draws, counts are multinomial given a library size, and the outcome is
linear in ``log psi`` (not in balances), so the fitted model is always
somewhat misspecified.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.special import digamma

from .errors import ConfigurationError, DimensionError, UsageError
from .model import Dataset

__all__ = [
    "default_sensitivity_grid",
    "run_study",
    "sensitivity_sweep",
    "ScenarioSpec",
    "SimulatedData",
    "Truth",
    "ScoreReport",
    "generate",
    "replicate_seeds",
    "score_estimation",
    "score_selection",
    "true_overall_indirect",
]

log = logging.getLogger(__name__)

_NU1 = (0.8, 0.0, 0.0, 0.0, 1.2)
_NU2 = (0.0, 1.2, 0.0, 0.8)

PRESETS = {
    "scenario1": dict(scenario=1),
    "scenario2": dict(scenario=2),
    "scenario3": dict(scenario=3),
    "scenario4": dict(scenario=4),
    "skewed": dict(scenario=1, p_treat=0.25),
    "small-n": dict(scenario=1, n=50, J=50),
    "small-n-wide": dict(scenario=1, n=50, J=100),
    "application": dict(scenario=1, n=36, J=36, allocation="ratio", p_treat=2 / 3,
                        phi=(0.7, 1.0, 1.2), beta_log=(1.8, -1.0, -0.8)),
}


def _pad(values, J, name):
    v = np.zeros(J)
    values = np.asarray(values, dtype=float).reshape(-1)
    if values.size > J:
        if np.any(values[J:] != 0):
            raise ConfigurationError(f"{name} has nonzero entries beyond J={J}")
        values = values[:J]
    v[:values.size] = values
    return v


@dataclass
class ScenarioSpec:
    """Settings for one simulated data-generating process.

    ``phi`` and ``beta_log`` list the leading nonzero effects; the rest are
    zero. ``allocation`` is ``"bernoulli"`` (independent draws with
    probability ``p_treat``) or ``"ratio"`` (exactly ``round(n * p_treat)``
    treated subjects in random order). Confounders enter the DM level when
    ``dm_confounded`` and the outcome when ``outcome_confounded``; both
    default from ``scenario`` (2 and 4 for the DM level, 3 and 4 for the
    outcome). ``reads_min``/``reads_max`` bound the uniform library size and
    ``truth_quad_points`` sets the Gauss-Hermite nodes behind the true
    overall effect.
    """

    scenario: int = 1
    n: int = 200
    J: int = 50
    p_treat: float = 0.5
    allocation: str = "bernoulli"
    phi: tuple = (1.0, 1.2, 1.5)
    beta_log: tuple = (3.0, -1.5, -1.5)
    alpha_low: float = -2.0
    alpha_high: float = 0.5
    reads_min: int = 5000
    reads_max: int = 10000
    c0: float = 0.0
    c1: float = 1.0
    noise_sd: float = 1.0
    nu1: tuple = _NU1
    nu2: tuple = _NU2
    kappa1: float = 1.2
    kappa2: float = 1.2
    dm_confounded: bool | None = None
    outcome_confounded: bool | None = None
    truth_quad_points: int = 40
    seed: int = 0

    def __post_init__(self):
        self.phi = tuple(float(v) for v in np.atleast_1d(self.phi))
        self.beta_log = tuple(float(v) for v in np.atleast_1d(self.beta_log))
        self.nu1 = tuple(float(v) for v in np.atleast_1d(self.nu1))
        self.nu2 = tuple(float(v) for v in np.atleast_1d(self.nu2))
        if self.scenario not in (1, 2, 3, 4):
            raise ConfigurationError("scenario must be 1, 2, 3 or 4")
        if self.dm_confounded is None:
            self.dm_confounded = self.scenario in (2, 4)
        if self.outcome_confounded is None:
            self.outcome_confounded = self.scenario in (3, 4)
        if self.n < 2 or self.J < 2:
            raise ConfigurationError("need n >= 2 and J >= 2")
        if not 0.0 < self.p_treat < 1.0:
            raise ConfigurationError("p_treat must lie in (0, 1)")
        if self.allocation not in ("bernoulli", "ratio"):
            raise ConfigurationError("allocation must be 'bernoulli' or 'ratio'")
        if not self.alpha_low <= self.alpha_high:
            raise ConfigurationError("alpha_low must not exceed alpha_high")
        if not 1 <= self.reads_min <= self.reads_max:
            raise ConfigurationError("need 1 <= reads_min <= reads_max")
        if self.noise_sd <= 0:
            raise ConfigurationError("noise_sd must be positive")
        checked = ["phi", "beta_log"] + (["nu1", "nu2"] if self.dm_confounded else [])
        for name in checked:
            _pad(getattr(self, name), self.J, name)
        if abs(sum(self.beta_log)) > 1e-9:
            log.warning("beta_log does not sum to zero; the log-contrast is not scale invariant")

    @classmethod
    def preset(cls, name: str, **overrides) -> "ScenarioSpec":
        if name not in PRESETS:
            raise ConfigurationError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
        return cls(**{**PRESETS[name], **overrides})

    # vectors padded to length J
    @property
    def phi_vec(self):
        return _pad(self.phi, self.J, "phi")

    @property
    def beta_log_vec(self):
        return _pad(self.beta_log, self.J, "beta_log")

    @property
    def nu1_vec(self):
        return _pad(self.nu1, self.J, "nu1")

    @property
    def nu2_vec(self):
        return _pad(self.nu2, self.J, "nu2")

    @property
    def truth_mask(self) -> np.ndarray:
        """Taxa with an active path: nonzero treatment effect and log-coefficient."""
        return (self.phi_vec != 0) & (self.beta_log_vec != 0)

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, tuple):
                v = ", ".join(repr(x) for x in v)
            elif isinstance(v, float):
                v = repr(v)
            lines.append(f"{f.name} = {v}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "ScenarioSpec":
        """Parse ``key = value`` lines; ``preset = name`` seeds the defaults."""
        from .io import parse_key_values

        raw = parse_key_values(text)
        base = {}
        if "preset" in raw:
            name = raw.pop("preset")
            if name not in PRESETS:
                raise ConfigurationError(f"unknown preset {name!r}")
            base = dict(PRESETS[name])
        kinds = {f.name: f.type for f in fields(cls)}
        for key, value in raw.items():
            if key not in kinds:
                raise ConfigurationError(f"unknown scenario key {key!r}")
            base[key] = _coerce(key, kinds[key], value)
        return cls(**base)

    @classmethod
    def from_file(cls, path) -> "ScenarioSpec":
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigurationError(f"cannot read scenario file {path}: {exc}") from exc
        return cls.from_text(text)


def _coerce(key, kind, value: str):
    kind = str(kind)
    try:
        if kind == "tuple":
            return tuple(float(v) for v in value.replace(",", " ").split())
        if kind.startswith("bool"):
            low = value.strip().lower()
            if low in ("none", ""):
                return None
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(value)
        if kind == "int":
            return int(value)
        if kind == "float":
            return float(value)
        return value.strip()
    except ValueError as exc:
        raise ConfigurationError(f"bad value for {key}: {value!r}") from exc


@dataclass(eq=False)
class Truth:
    """Generating parameters and derived true effects."""

    alpha: np.ndarray
    phi: np.ndarray
    beta_log: np.ndarray
    selected: np.ndarray
    direct: float
    overall: float
    psi: np.ndarray
    u1: np.ndarray
    u2: np.ndarray


@dataclass(eq=False)
class SimulatedData:
    data: Dataset
    truth: Truth
    spec: ScenarioSpec


def _log_dirichlet(rng, conc):
    """``log`` of Dirichlet draws via log-gamma variates (no underflow)."""
    lg = np.log(rng.standard_gamma(conc + 1.0)) + np.log(rng.random(conc.shape)) / conc
    m = lg.max(axis=1, keepdims=True)
    return lg - (m + np.log(np.exp(lg - m).sum(axis=1, keepdims=True)))


def true_overall_indirect(alpha, phi, beta_log, nu1=None, nu2=None, quad_points=40) -> float:
    """True overall indirect effect of the log-linear generative model.

    Without DM-level confounders this is
    ``sum_j beta_log_j (E[log psi_j | t=1] - E[log psi_j | t=0])`` with the
    Dirichlet expectation ``digamma(gamma_j) - digamma(sum gamma)``. With
    confounders the contrast is averaged over ``U1 ~ Bernoulli(0.5)``
    exactly and over ``U2 ~ N(0, 1)`` by Gauss-Hermite quadrature.
    """
    alpha = np.asarray(alpha, float)
    phi = np.asarray(phi, float)
    b = np.asarray(beta_log, float)
    J = alpha.size
    nu1 = np.zeros(J) if nu1 is None else np.asarray(nu1, float)
    nu2 = np.zeros(J) if nu2 is None else np.asarray(nu2, float)

    def contrast(shift):
        out = 0.0
        for t in (1.0, 0.0):
            g = np.exp(alpha + phi * t + shift)
            e = digamma(g) - digamma(g.sum(axis=-1, keepdims=True))
            out += (1.0 if t else -1.0) * (e @ b)
        return out

    if not np.any(nu1) and not np.any(nu2):
        return float(contrast(np.zeros(J)))
    nodes, weights = np.polynomial.hermite_e.hermegauss(quad_points)
    weights = weights / weights.sum()
    total = 0.0
    for u1 in (0.0, 1.0):
        shifts = u1 * nu1[None, :] + nodes[:, None] * nu2[None, :]
        total += 0.5 * float(weights @ contrast(shifts))
    return total


def generate(spec: ScenarioSpec, seed: int | None = None) -> SimulatedData:
    """Draw one dataset from ``spec`` (``seed`` overrides ``spec.seed``)."""
    seed = spec.seed if seed is None else seed
    rng = np.random.default_rng(seed)
    n, J = spec.n, spec.J
    if spec.allocation == "ratio":
        n_treat = int(round(n * spec.p_treat))
        t = np.zeros(n)
        t[:n_treat] = 1.0
        t = rng.permutation(t)
    else:
        t = (rng.random(n) < spec.p_treat).astype(float)
    alpha = rng.uniform(spec.alpha_low, spec.alpha_high, size=J)
    u1 = (rng.random(n) < 0.5).astype(float)
    u2 = rng.standard_normal(n)
    phi = spec.phi_vec
    beta_log = spec.beta_log_vec
    lam = alpha[None, :] + t[:, None] * phi[None, :]
    nu1 = nu2 = None
    if spec.dm_confounded:
        nu1, nu2 = spec.nu1_vec, spec.nu2_vec
        lam = lam + u1[:, None] * nu1[None, :] + u2[:, None] * nu2[None, :]
    log_psi = _log_dirichlet(rng, np.exp(lam))
    psi = np.exp(log_psi)
    reads = rng.integers(spec.reads_min, spec.reads_max + 1, size=n)
    counts = np.empty((n, J), dtype=np.int64)
    for i in range(n):
        p = psi[i] / psi[i].sum()
        counts[i] = rng.multinomial(reads[i], p)
    eps = spec.noise_sd * rng.standard_normal(n)
    y = spec.c0 + spec.c1 * t + log_psi @ beta_log + eps
    if spec.outcome_confounded:
        y = y + spec.kappa1 * u1 + spec.kappa2 * u2
    # a row with no reads would be unusable; resample its counts
    for i in np.flatnonzero(counts.sum(axis=1) == 0):  # pragma: no cover - reads >= 1
        counts[i] = rng.multinomial(reads[i], psi[i] / psi[i].sum())
    data = Dataset(counts=counts.astype(float), outcome=y, treatment=t,
                   taxa=[f"taxon{j + 1}" for j in range(J)],
                   subjects=[f"s{i + 1}" for i in range(n)])
    truth = Truth(alpha=alpha, phi=phi, beta_log=beta_log, selected=spec.truth_mask,
                  direct=spec.c1,
                  overall=true_overall_indirect(alpha, phi, beta_log, nu1, nu2,
                                                 spec.truth_quad_points),
                  psi=psi, u1=u1, u2=u2)
    return SimulatedData(data, truth, spec)


def replicate_seeds(seed: int, replicates: int) -> list[int]:
    """Independent per-replicate seeds split from one study seed."""
    if replicates < 1:
        raise UsageError("replicates must be at least 1")
    children = np.random.SeedSequence(seed).spawn(replicates)
    return [int(c.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1)) for c in children]


# -- scoring ----------------------------------------------------------------


def score_selection(selected, truth) -> tuple[float, float, float]:
    """Sensitivity, specificity and Matthews correlation of a selection.

    A metric whose denominator is zero is reported as 0.
    """
    s = np.asarray(selected, dtype=bool).reshape(-1)
    g = np.asarray(truth, dtype=bool).reshape(-1)
    if s.shape != g.shape:
        raise DimensionError("selected and truth must have equal length")
    tp = float(np.sum(s & g))
    tn = float(np.sum(~s & ~g))
    fp = float(np.sum(s & ~g))
    fn = float(np.sum(~s & g))
    sens = tp / (tp + fn) if tp + fn else 0.0
    spec = tn / (tn + fp) if tn + fp else 0.0
    denom = math.sqrt((tp + fp) * (tp + fn) * (tn + fp) * (tn + fn))
    mcc = (tp * tn - fp * fn) / denom if denom else 0.0
    return sens, spec, mcc


def score_estimation(estimates, lowers, uppers, truths) -> tuple[float, float, float]:
    """Bias, mean squared error and interval coverage over replicates."""
    est = np.asarray(estimates, dtype=float).reshape(-1)
    lo = np.asarray(lowers, dtype=float).reshape(-1)
    hi = np.asarray(uppers, dtype=float).reshape(-1)
    tru = np.broadcast_to(np.asarray(truths, dtype=float), est.shape)
    if est.size == 0:
        raise UsageError("no replicates to score")
    if not (lo.shape == hi.shape == est.shape):
        raise DimensionError("estimates and interval bounds must have equal length")
    diff = est - tru
    cover = (lo <= tru) & (tru <= hi)
    return float(diff.mean()), float(np.mean(diff ** 2)), float(cover.mean())


@dataclass
class ScoreReport:
    """Averaged selection and estimation scores for one method.

    ``rows`` holds one dict per replicate; failed replicates carry an
    ``error`` entry and are excluded from the averages.
    """

    method: str
    sens: float = float("nan")
    spec: float = float("nan")
    mcc: float = float("nan")
    direct_bias: float = float("nan")
    direct_mse: float = float("nan")
    direct_coverage: float = float("nan")
    overall_bias: float = float("nan")
    overall_mse: float = float("nan")
    overall_coverage: float = float("nan")
    n_ok: int = 0
    n_failed: int = 0
    rows: list = field(default_factory=list)

    @classmethod
    def from_rows(cls, method: str, rows: Sequence[dict]) -> "ScoreReport":
        ok = [r for r in rows if not r.get("error")]
        rep = cls(method=method, rows=list(rows), n_ok=len(ok), n_failed=len(rows) - len(ok))
        if not ok:
            return rep
        rep.sens = float(np.mean([r["sens"] for r in ok]))
        rep.spec = float(np.mean([r["spec"] for r in ok]))
        rep.mcc = float(np.mean([r["mcc"] for r in ok]))
        for key in ("direct", "overall"):
            if all(f"{key}_mean" in r for r in ok):
                bias, mse, cov = score_estimation(
                    [r[f"{key}_mean"] for r in ok], [r[f"{key}_lower"] for r in ok],
                    [r[f"{key}_upper"] for r in ok], [r[f"{key}_true"] for r in ok])
                setattr(rep, f"{key}_bias", bias)
                setattr(rep, f"{key}_mse", mse)
                setattr(rep, f"{key}_coverage", cov)
        return rep

    def summary(self) -> dict:
        d = asdict(self)
        d.pop("rows")
        return d


# -- studies ------------------------------------------------------------------


def _replicate(args):
    """Fit and score one replicate; errors are recorded, not raised."""
    from .errors import CmbvsError
    from .estimands import StrategyConfig, mediate
    from .sampler import derive_seed, run_chain

    spec, rep, seed, methods, hp, cfg, scfg = args
    row_base = {"replicate": rep, "seed": seed}
    try:
        sim = generate(spec, seed=seed)
        chain_cfg = replace(cfg, seed=derive_seed(seed, 0))
        base = run_chain(sim.data, hp, chain_cfg)
    except CmbvsError as exc:
        log.warning("replicate %d failed: %s", rep, exc)
        return {m: {**row_base, "error": f"{type(exc).__name__}: {exc}"} for m in methods}
    out = {}
    for method in methods:
        try:
            res = mediate(sim.data, hp, chain_cfg, replace(scfg, strategy=method),
                          base_trace=base)
        except CmbvsError as exc:
            log.warning("replicate %d, %s failed: %s", rep, method, exc)
            out[method] = {**row_base, "error": f"{type(exc).__name__}: {exc}"}
            continue
        sens, spec_, mcc = score_selection(res.selected, sim.truth.selected)
        overall = res.overall[0] if len(res.overall) == 1 else None
        row = {**row_base, "sens": sens, "spec": spec_, "mcc": mcc,
               "n_selected": int(res.selected.sum()),
               "selected": " ".join(str(j + 1) for j in np.flatnonzero(res.selected)),
               "direct_mean": res.direct.mean, "direct_lower": res.direct.lower,
               "direct_upper": res.direct.upper, "direct_true": sim.truth.direct}
        if overall is not None:
            row.update(overall_mean=overall.mean, overall_lower=overall.lower,
                       overall_upper=overall.upper, overall_true=sim.truth.overall)
        row["error"] = ""
        out[method] = row
    return out


def run_study(spec: ScenarioSpec, replicates: int, methods=("cmbvs1",), hp=None, cfg=None,
              strategy_cfg=None, workers: int = 1) -> dict[str, ScoreReport]:
    """Simulate ``replicates`` datasets from ``spec`` and score each method.

    Replicate ``r`` uses a seed split from ``spec.seed``; within a replicate
    all methods share one identity-order base fit. Replicates that fail are
    recorded in the report rows and skipped in the averages.
    """
    from concurrent.futures import ProcessPoolExecutor

    from .estimands import STRATEGIES, StrategyConfig
    from .model import Hyperparameters
    from .sampler import SamplerConfig

    if replicates < 1:
        raise UsageError("replicates must be at least 1")
    methods = tuple(str(m).lower() for m in methods)
    for m in methods:
        if m not in STRATEGIES:
            raise UsageError(f"unknown method {m!r}")
    hp = hp or Hyperparameters()
    cfg = cfg or SamplerConfig()
    scfg = strategy_cfg or StrategyConfig()
    seeds = replicate_seeds(spec.seed, replicates)
    jobs = [(spec, r, s, methods, hp, cfg, scfg) for r, s in enumerate(seeds)]
    if workers > 1 and replicates > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_replicate, jobs))
    else:
        results = [_replicate(job) for job in jobs]
    return {m: ScoreReport.from_rows(m, [res[m] for res in results]) for m in methods}


def default_sensitivity_grid(base) -> list[tuple[str, object]]:
    """Baseline plus one-at-a-time changes to the prior settings."""
    grid = [("baseline", base)]
    grid.append(("prpi_1pct", base.with_inclusion(0.02, 1.98)))
    grid.append(("prpi_10pct", base.with_inclusion(0.2, 1.8)))
    for r2 in (5.0, 20.0):
        grid.append((f"r2_{r2:g}", replace(base, r2=r2)))
    for h in (5.0, 20.0):
        grid.append((f"h_{h:g}", replace(base, h_c=h, h_beta=h, h_kappa=h)))
    for ab in (0.1, 10.0):
        grid.append((f"a0b0_{ab:g}", replace(base, a0=ab, b0=ab)))
    return grid


def sensitivity_sweep(sim: SimulatedData, base_hp=None, grid=None, methods=("cmbvs1",),
                      cfg=None, strategy_cfg=None) -> list[tuple[str, dict[str, ScoreReport]]]:
    """Rerun the strategies on one reference dataset for each grid cell.

    Every cell uses the same chain seed, so the baseline cell reproduces a
    standard run exactly.
    """
    from .errors import CmbvsError
    from .estimands import StrategyConfig, mediate
    from .model import Hyperparameters
    from .sampler import SamplerConfig, run_chain

    base_hp = base_hp or Hyperparameters()
    grid = grid if grid is not None else default_sensitivity_grid(base_hp)
    cfg = cfg or SamplerConfig()
    scfg = strategy_cfg or StrategyConfig()
    out = []
    for name, hp in grid:
        reports = {}
        try:
            base = run_chain(sim.data, hp, cfg)
        except CmbvsError as exc:
            err = {"cell": name, "error": f"{type(exc).__name__}: {exc}"}
            out.append((name, {m: ScoreReport.from_rows(m, [err]) for m in methods}))
            continue
        for m in methods:
            try:
                res = mediate(sim.data, hp, cfg, replace(scfg, strategy=m), base_trace=base)
            except CmbvsError as exc:
                reports[m] = ScoreReport.from_rows(m, [{"cell": name, "error": str(exc)}])
                continue
            sens, spec_, mcc = score_selection(res.selected, sim.truth.selected)
            row = {"cell": name, "sens": sens, "spec": spec_, "mcc": mcc,
                   "selected": " ".join(str(j + 1) for j in np.flatnonzero(res.selected)),
                   "error": ""}
            reports[m] = ScoreReport.from_rows(m, [row])
        out.append((name, reports))
    return out
