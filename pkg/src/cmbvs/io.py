"""File formats, ingestion, preprocessing and run manifests.

Tables are UTF-8 comma-separated files with LF line endings, a first line
``# schema: cmbvs-table/1 kind=<kind>`` and a header row. Floats are written
in shortest round-trip form, so a written table reads back bit-for-bit.
Manifests and small reports are ``key = value`` text.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np
import pandas as pd

from .errors import ConfigurationError, DataError, IngestionError, UsageError
from .model import Dataset, Hyperparameters

__all__ = [
    "SCHEMA_VERSION",
    "IngestReport",
    "PreprocessLog",
    "RunManifest",
    "format_key_values",
    "ingest",
    "parse_key_values",
    "preprocess",
    "read_table",
    "write_dataset",
    "write_key_values",
    "write_table",
]

log = logging.getLogger(__name__)

SCHEMA_VERSION = "cmbvs-table/1"
ID_COLUMN = "subject_id"


# -- key = value text ----------------------------------------------------------


def parse_key_values(text: str) -> dict[str, str]:
    """Parse ``key = value`` lines; blank lines and ``#`` comments are ignored."""
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigurationError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = line.split("=", 1)
        key = key.strip()
        if not key:
            raise ConfigurationError(f"line {lineno}: empty key")
        if key in out:
            raise ConfigurationError(f"line {lineno}: duplicate key {key!r}")
        out[key] = value.strip()
    return out


def _fmt(value) -> str:
    if isinstance(value, bool) or value is None:
        return str(value).lower()
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if isinstance(value, (list, tuple)):
        return ", ".join(_fmt(v) for v in value)
    return str(value)


def format_key_values(items, header: str | None = None) -> str:
    lines = [f"# {header}"] if header else []
    lines += [f"{k} = {_fmt(v)}" for k, v in items.items()]
    return "\n".join(lines) + "\n"


def write_key_values(path, items, header: str | None = None) -> None:
    Path(path).write_text(format_key_values(items, header), encoding="utf-8", newline="\n")


# -- tables ---------------------------------------------------------------------


def write_table(path, frame: pd.DataFrame, kind: str) -> None:
    """Write ``frame`` with the schema line; floats keep full precision."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"# schema: {SCHEMA_VERSION} kind={kind}\n")
        frame.to_csv(fh, index=False, lineterminator="\n")


def read_table(path, kind: str | None = None) -> pd.DataFrame:
    """Read a table written by :func:`write_table` (or a plain CSV).

    Leading ``#`` lines are skipped; with ``kind`` given, a schema line
    naming a different kind is rejected.
    """
    path = Path(path)
    try:
        with open(path, encoding="utf-8") as fh:
            skip = 0
            for line in fh:
                if not line.startswith("#"):
                    break
                skip += 1
                if kind and "kind=" in line and f"kind={kind}" not in line.split():
                    raise IngestionError(f"{path}: expected a {kind!r} table, found {line.strip()}")
        return pd.read_csv(path, skiprows=skip, dtype={ID_COLUMN: str},
                           float_precision="round_trip")
    except FileNotFoundError as exc:
        raise IngestionError(f"file not found: {path}") from exc
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as exc:
        raise IngestionError(f"cannot parse {path}: {exc}") from exc


# -- ingestion ------------------------------------------------------------------


@dataclass
class IngestReport:
    """Rows that did not make it into the dataset."""

    n_subjects: int
    unmatched: dict = field(default_factory=dict)

    def to_items(self) -> dict:
        items = {"subjects": self.n_subjects}
        for name, ids in self.unmatched.items():
            items[f"unmatched.{name}"] = " ".join(ids) if ids else "none"
        return items


def _keyed(frame: pd.DataFrame, path, what: str) -> pd.DataFrame:
    if ID_COLUMN not in frame.columns:
        raise IngestionError(f"{path}: missing the {ID_COLUMN!r} column")
    ids = frame[ID_COLUMN].astype(str)
    dup = ids[ids.duplicated()]
    if len(dup):
        raise IngestionError(f"{path}: duplicate {what} subject id {dup.iloc[0]!r}")
    return frame.assign(**{ID_COLUMN: ids}).set_index(ID_COLUMN)


def _numeric(frame: pd.DataFrame, path) -> pd.DataFrame:
    for col in frame.columns:
        converted = pd.to_numeric(frame[col], errors="coerce")
        bad = converted.isna() & frame[col].notna()
        if bad.any() or converted.isna().any():
            row = frame.index[(bad | converted.isna()).to_numpy()][0]
            raise IngestionError(f"{path}: non-numeric or missing value in column {col!r} "
                                 f"for subject {row!r}")
        frame[col] = converted.astype(float)
    return frame


def ingest(counts_path, outcome_path, covariates_path=None, covariates_dm_path=None,
           outcome_column: str = "outcome", treatment_column: str = "treatment",
           pseudocount: float = 0.5) -> tuple[Dataset, IngestReport]:
    """Read and align the input tables into a validated :class:`Dataset`.

    Subjects are those of the counts table, in its row order. Every one of
    them must appear in the outcome and covariate tables; extra rows there
    are dropped and listed in the report.
    """
    counts = _keyed(read_table(counts_path), counts_path, "counts")
    if counts.shape[1] < 2:
        raise IngestionError(f"{counts_path}: need at least two taxon columns")
    cvals = counts.apply(pd.to_numeric, errors="coerce")
    for r, c in zip(*np.nonzero(cvals.isna().to_numpy())):
        raise IngestionError(f"{counts_path}: non-numeric count at row {r + 1}, "
                             f"column {counts.columns[c]!r}")
    arr = cvals.to_numpy(dtype=float)
    neg = np.argwhere(arr < 0)
    if neg.size:
        r, c = neg[0]
        raise IngestionError(f"{counts_path}: negative count at row {r + 1}, "
                             f"column {counts.columns[c]!r}")
    frac = np.argwhere(arr != np.round(arr))
    if frac.size:
        r, c = frac[0]
        raise IngestionError(f"{counts_path}: non-integer count at row {r + 1}, "
                             f"column {counts.columns[c]!r}")
    empty = np.flatnonzero(arr.sum(axis=1) == 0)
    if empty.size:
        raise IngestionError(f"{counts_path}: subject {counts.index[empty[0]]!r} has no reads")
    subjects = list(counts.index)
    report = IngestReport(n_subjects=len(subjects))

    def aligned(path, name, required=None):
        frame = _keyed(read_table(path), path, name)
        missing = [s for s in subjects if s not in frame.index]
        if missing:
            raise IngestionError(f"{path}: subject {missing[0]!r} from the counts table is missing")
        report.unmatched[name] = [s for s in frame.index if s not in set(subjects)]
        frame = frame.loc[subjects]
        for col in required or ():
            if col not in frame.columns:
                raise IngestionError(f"{path}: missing column {col!r}")
        return frame

    out = aligned(outcome_path, "outcome", [outcome_column, treatment_column])
    out = _numeric(out[[outcome_column, treatment_column]].copy(), outcome_path)
    y = out[outcome_column].to_numpy()
    t = out[treatment_column].to_numpy()
    if not np.all(np.isin(t, (0.0, 1.0))):
        raise IngestionError(f"{outcome_path}: treatment must be coded 0/1")
    if np.ptp(y) == 0:
        raise IngestionError(f"{outcome_path}: outcome is constant")
    if len(np.unique(t)) < 2:
        raise IngestionError(f"{outcome_path}: treatment has a single arm")

    def covs(path, name):
        if path is None:
            return None, []
        frame = _numeric(aligned(path, name).copy(), path)
        return frame.to_numpy(dtype=float), [str(c) for c in frame.columns]

    X, xnames = covs(covariates_path, "covariates")
    Xdm, dmnames = covs(covariates_dm_path, "covariates_dm")
    try:
        data = Dataset(counts=arr, outcome=y, treatment=t, covariates=X, covariates_dm=Xdm,
                       taxa=[str(c) for c in counts.columns], subjects=subjects,
                       covariate_names=xnames, covariate_dm_names=dmnames,
                       pseudocount=pseudocount)
    except DataError as exc:
        raise IngestionError(str(exc)) from exc
    return data, report


def write_dataset(data: Dataset, directory, prefix: str = "") -> dict[str, Path]:
    """Write the tables that :func:`ingest` reads back into ``data``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    ids = pd.Series(data.subjects, name=ID_COLUMN)
    paths = {"counts": directory / f"{prefix}counts.csv",
             "outcome": directory / f"{prefix}outcome.csv"}
    counts = pd.DataFrame(data.counts.astype(np.int64), columns=data.taxa)
    write_table(paths["counts"], pd.concat([ids, counts], axis=1), "counts")
    outcome = pd.DataFrame({ID_COLUMN: ids, "outcome": data.outcome,
                            "treatment": data.treatment.astype(np.int64)})
    write_table(paths["outcome"], outcome, "outcome")
    if data.P:
        paths["covariates"] = directory / f"{prefix}covariates.csv"
        frame = pd.DataFrame(data.covariates, columns=data.covariate_names)
        write_table(paths["covariates"], pd.concat([ids, frame], axis=1), "covariates")
    if data.P_dm:
        paths["covariates_dm"] = directory / f"{prefix}covariates_dm.csv"
        frame = pd.DataFrame(data.covariates_dm, columns=data.covariate_dm_names)
        write_table(paths["covariates_dm"], pd.concat([ids, frame], axis=1), "covariates_dm")
    return paths


# -- preprocessing ----------------------------------------------------------------


@dataclass
class PreprocessLog:
    kept: list
    dropped: list
    zero_fraction: dict
    zero_threshold: float
    pseudovalue: float
    standardized: bool
    outcome_mean: float | None = None
    outcome_sd: float | None = None

    def to_items(self) -> dict:
        items = {
            "zero_threshold": self.zero_threshold,
            "pseudovalue": self.pseudovalue,
            "standardized": self.standardized,
            "taxa_in": len(self.kept) + len(self.dropped),
            "taxa_kept": len(self.kept),
            "taxa_dropped": len(self.dropped),
            "dropped": " ".join(self.dropped) if self.dropped else "none",
        }
        if self.standardized:
            items["outcome_mean"] = self.outcome_mean
            items["outcome_sd"] = self.outcome_sd
        for name in self.dropped:
            items[f"zero_fraction.{name}"] = self.zero_fraction[name]
        return items


def preprocess(data: Dataset, zero_threshold: float = 0.9, pseudovalue: float = 0.5,
               standardize: bool = True) -> tuple[Dataset, PreprocessLog]:
    """Filter sparse taxa, set the zero pseudovalue and optionally standardize ``y``.

    A taxon is dropped when its fraction of zero counts exceeds
    ``zero_threshold``. The pseudovalue replaces zero counts when initial
    compositions are formed. Standardization uses the sample standard
    deviation (``ddof=1``).
    """
    if not 0.0 <= zero_threshold <= 1.0:
        raise ConfigurationError("zero_threshold must lie in [0, 1]")
    if pseudovalue <= 0:
        raise ConfigurationError("pseudovalue must be positive")
    zf = (data.counts == 0).mean(axis=0)
    keep = zf <= zero_threshold
    kept = [t for t, k in zip(data.taxa, keep) if k]
    dropped = [t for t, k in zip(data.taxa, keep) if not k]
    if keep.sum() < 2:
        raise ConfigurationError(f"only {int(keep.sum())} taxa pass the zero-prevalence filter; "
                                 "need at least two")
    counts = data.counts[:, keep]
    if np.any(counts.sum(axis=1) == 0):
        bad = data.subjects[int(np.flatnonzero(counts.sum(axis=1) == 0)[0])]
        raise ConfigurationError(f"subject {bad!r} has no reads left after filtering")
    y = data.outcome
    mean = sd = None
    if standardize:
        mean = float(y.mean())
        sd = float(y.std(ddof=1))
        if not sd > 0:
            raise DataError("cannot standardize a constant outcome")
        y = (y - mean) / sd
    out = replace(data, counts=counts, outcome=y, taxa=kept, pseudocount=pseudovalue)
    plog = PreprocessLog(kept=kept, dropped=dropped,
                         zero_fraction={t: float(f) for t, f in zip(data.taxa, zf)},
                         zero_threshold=zero_threshold, pseudovalue=pseudovalue,
                         standardized=standardize, outcome_mean=mean, outcome_sd=sd)
    if dropped:
        log.info("dropped %d taxa above %.0f%% zeros: %s", len(dropped), 100 * zero_threshold,
                 ", ".join(dropped))
    return out, plog


# -- manifests -----------------------------------------------------------------------


def _coerce_like(default, text: str, key: str):
    try:
        if isinstance(default, bool):
            low = text.strip().lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
    except ValueError as exc:
        raise ConfigurationError(f"bad value for {key}: {text!r}") from exc
    return text


@dataclass
class RunManifest:
    """Everything that determines the outputs of one CLI run.

    Sections map onto the library configs: ``hp`` onto
    :class:`~cmbvs.model.Hyperparameters`, ``sampler`` onto
    :class:`~cmbvs.sampler.SamplerConfig` (its seed is ``seed``) and
    ``strategy`` onto :class:`~cmbvs.estimands.StrategyConfig`. ``inputs``,
    ``preprocess`` and ``extra`` hold command-specific settings.
    """

    command: str
    seed: int = 0
    inputs: dict = field(default_factory=dict)
    preprocess: dict = field(default_factory=dict)
    hp: dict = field(default_factory=dict)
    sampler: dict = field(default_factory=dict)
    strategy: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)

    SECTIONS = ("inputs", "preprocess", "hp", "sampler", "strategy", "extra")

    def items(self) -> dict:
        out = {"command": self.command, "seed": self.seed}
        for sec in self.SECTIONS:
            for k, v in getattr(self, sec).items():
                out[f"{sec}.{k}"] = v
        return out

    def to_text(self) -> str:
        return format_key_values(self.items(), header="cmbvs run manifest")

    def write(self, path) -> None:
        Path(path).write_text(self.to_text(), encoding="utf-8", newline="\n")

    @classmethod
    def from_text(cls, text: str) -> "RunManifest":
        raw = parse_key_values(text)
        if "command" not in raw:
            raise ConfigurationError("manifest lacks a 'command' entry")
        m = cls(command=raw.pop("command"))
        if "seed" in raw:
            m.seed = _coerce_like(0, raw.pop("seed"), "seed")
        for key, value in raw.items():
            sec, _, name = key.partition(".")
            if sec not in cls.SECTIONS or not name:
                raise ConfigurationError(f"unknown manifest key {key!r}")
            getattr(m, sec)[name] = value
        return m

    @classmethod
    def read(cls, path) -> "RunManifest":
        try:
            return cls.from_text(Path(path).read_text(encoding="utf-8"))
        except OSError as exc:
            raise ConfigurationError(f"cannot read manifest {path}: {exc}") from exc

    def validate_paths(self) -> None:
        for key, value in self.inputs.items():
            if value in (None, "", "none"):
                continue
            if not Path(value).exists():
                raise IngestionError(f"input {key} does not exist: {value}")

    # typed views

    def hyperparameters(self) -> Hyperparameters:
        return _build(Hyperparameters, self.hp, "hp")

    def sampler_config(self):
        from .sampler import SamplerConfig

        return _build(SamplerConfig, {**self.sampler, "seed": self.seed}, "sampler")

    def strategy_config(self):
        from .estimands import StrategyConfig

        return _build(StrategyConfig, self.strategy, "strategy")


def _build(cls, values: dict, section: str):
    defaults = cls()
    kwargs = {}
    names = {f.name for f in fields(cls)}
    for key, value in values.items():
        if key not in names:
            raise ConfigurationError(f"unknown {section} setting {key!r}")
        if isinstance(value, str):
            value = _coerce_like(getattr(defaults, key), value, f"{section}.{key}")
        kwargs[key] = value
    try:
        return cls(**kwargs)
    except (ValueError, UsageError) as exc:
        raise ConfigurationError(f"invalid {section} settings: {exc}") from exc


def config_items(obj, skip=()) -> dict:
    """Dataclass fields as a flat dict, for writing into a manifest section."""
    return {f.name: getattr(obj, f.name) for f in fields(obj) if f.name not in skip}
