"""Command-line interface.

Subcommands: ``fit``, ``mediate``, ``simulate``, ``study`` and ``sweep``.
Settings resolve as built-in defaults, then ``--manifest``, then explicit
flags. Every run writes its resolved ``manifest.txt`` into ``--out``; that
file plus the inputs determine every output byte.

Exit status: 0 success, 1 usage error, 2 data or configuration error,
3 numerical failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np
import pandas as pd

from . import __version__
from .errors import CmbvsError, NumericalError, UsageError
from .estimands import (
    STRATEGIES,
    direct_effect,
    dm_profiles,
    mediate,
    overall_indirect,
    relative_indirect,
)
from .io import (
    RunManifest,
    config_items,
    ingest,
    preprocess,
    write_dataset,
    write_key_values,
    write_table,
)
from .sampler import run_chain
from .simulation import PRESETS, ScenarioSpec, generate, run_study, sensitivity_sweep

log = logging.getLogger("cmbvs")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERICAL = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: {message}")


# flag name -> (manifest section, key, type)
_HP_FLAGS = {
    "h_c": float, "h_beta": float, "h_kappa": float, "a0": float, "b0": float,
    "sigma2_alpha": float, "r2": float, "a_xi": float, "b_xi": float, "a_nu": float,
    "b_nu": float, "a_varphi": float, "b_varphi": float, "a_zeta": float, "b_zeta": float,
}
_SAMPLER_FLAGS = {
    "iterations": int, "burn_in": int, "thin": int, "rw_sd_alpha": float,
    "rw_sd_coef": float,
}
_SAMPLER_SWITCHES = ("full_scan", "collapse_scale", "store_psi")


def _add_sampler(p):
    g = p.add_argument_group("sampler")
    for name, kind in _SAMPLER_FLAGS.items():
        g.add_argument(f"--{name.replace('_', '-')}", dest=f"sampler.{name}", type=kind)
    for name in _SAMPLER_SWITCHES:
        g.add_argument(f"--{name.replace('_', '-')}", dest=f"sampler.{name}",
                       action=argparse.BooleanOptionalAction)
    g.add_argument("--seed", dest="seed", type=int, help="master seed (default 0)")
    g = p.add_argument_group("priors")
    for name, kind in _HP_FLAGS.items():
        g.add_argument(f"--{name.replace('_', '-')}", dest=f"hp.{name}", type=kind)
    g.add_argument("--inclusion", nargs=2, type=float, metavar=("A", "B"),
                   help="Beta(A, B) prior for every inclusion indicator family")


def _add_strategy(p, with_strategy=True):
    g = p.add_argument_group("selection")
    if with_strategy:
        g.add_argument("--strategy", dest="strategy.strategy", choices=STRATEGIES)
    g.add_argument("--mppi-threshold", dest="strategy.mppi_threshold", type=float)
    g.add_argument("--ci-level", dest="strategy.ci_level", type=float)
    g.add_argument("--exhaustive", dest="strategy.exhaustive",
                   action=argparse.BooleanOptionalAction)
    g.add_argument("--workers", dest="strategy.workers", type=int)


def _add_data(p):
    g = p.add_argument_group("data")
    g.add_argument("--counts", dest="inputs.counts")
    g.add_argument("--outcome", dest="inputs.outcome")
    g.add_argument("--covariates", dest="inputs.covariates")
    g.add_argument("--covariates-dm", dest="inputs.covariates_dm")
    g.add_argument("--zero-threshold", dest="preprocess.zero_threshold", type=float)
    g.add_argument("--pseudovalue", dest="preprocess.pseudovalue", type=float)
    g.add_argument("--standardize", dest="preprocess.standardize",
                   action=argparse.BooleanOptionalAction)


def _add_scenario(p):
    g = p.add_argument_group("scenario")
    g.add_argument("--scenario", dest="extra.scenario", type=int, choices=(1, 2, 3, 4))
    g.add_argument("--preset", dest="extra.preset", choices=sorted(PRESETS))
    g.add_argument("--scenario-file", dest="inputs.scenario_file")
    g.add_argument("--n", dest="extra.n", type=int)
    g.add_argument("--J", dest="extra.J", type=int)
    g.add_argument("--p-treat", dest="extra.p_treat", type=float)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="cmbvs", description="Bayesian compositional mediation analysis")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    def common(p):
        p.add_argument("--out", required=True, type=Path, help="output directory")
        p.add_argument("--manifest", type=Path, help="resolved manifest of an earlier run")

    p = sub.add_parser("fit", help="run one chain; write the trace and effect summaries")
    common(p)
    _add_data(p)
    _add_sampler(p)
    p.add_argument("--ci-level", dest="strategy.ci_level", type=float)

    p = sub.add_parser("mediate", help="select mediating taxa with a strategy")
    common(p)
    _add_data(p)
    _add_sampler(p)
    _add_strategy(p)

    p = sub.add_parser("simulate", help="write a simulated dataset")
    common(p)
    _add_scenario(p)
    p.add_argument("--seed", dest="seed", type=int)

    p = sub.add_parser("study", help="replicated simulation study")
    common(p)
    _add_scenario(p)
    _add_sampler(p)
    _add_strategy(p, with_strategy=False)
    p.add_argument("--replicates", dest="extra.replicates", type=int)
    p.add_argument("--methods", dest="extra.methods", nargs="+", choices=STRATEGIES)

    p = sub.add_parser("sweep", help="prior sensitivity grid on one simulated dataset")
    common(p)
    _add_scenario(p)
    _add_sampler(p)
    _add_strategy(p, with_strategy=False)
    p.add_argument("--methods", dest="extra.methods", nargs="+", choices=STRATEGIES)
    return parser


_DEFAULTS = {
    "fit": {"preprocess": {"zero_threshold": 0.9, "pseudovalue": 0.5, "standardize": True}},
    "mediate": {"preprocess": {"zero_threshold": 0.9, "pseudovalue": 0.5, "standardize": True},
                "strategy": {"strategy": "cmbvs1"}},
    "simulate": {"extra": {"preset": "scenario1"}},
    "study": {"extra": {"preset": "scenario1", "replicates": 10, "methods": "cmbvs1"}},
    "sweep": {"extra": {"preset": "scenario4", "methods": "cmbvs1 cmbvs2 cmbvs3"}},
}


def resolve_manifest(args) -> RunManifest:
    """Merge defaults, an optional manifest file and explicit flags."""
    cmd = args.command
    manifest = RunManifest(command=cmd)
    for sec, values in _DEFAULTS.get(cmd, {}).items():
        getattr(manifest, sec).update(values)
    if args.manifest is not None:
        loaded = RunManifest.read(args.manifest)
        if loaded.command != cmd:
            raise UsageError(f"manifest is for '{loaded.command}', not '{cmd}'")
        manifest.seed = loaded.seed
        for sec in RunManifest.SECTIONS:
            getattr(manifest, sec).update(getattr(loaded, sec))
    for dest, value in vars(args).items():
        if value is None or dest in ("command", "out", "manifest", "verbose", "inclusion"):
            continue
        if dest == "seed":
            manifest.seed = value
            continue
        sec, _, key = dest.partition(".")
        if isinstance(value, list):
            value = " ".join(str(v) for v in value)
        getattr(manifest, sec)[key] = value
    if getattr(args, "inclusion", None):
        a, b = args.inclusion
        for fam in ("xi", "nu", "varphi", "zeta"):
            manifest.hp[f"a_{fam}"] = a
            manifest.hp[f"b_{fam}"] = b
    # freeze the typed settings so the manifest lists every resolved value
    if cmd in ("fit", "mediate", "study", "sweep"):
        manifest.hp = config_items(manifest.hyperparameters())
        manifest.sampler = config_items(manifest.sampler_config(), skip=("seed",))
    if cmd in ("mediate", "study", "sweep") or manifest.strategy:
        manifest.strategy = config_items(manifest.strategy_config())
    return manifest


# -- helpers --------------------------------------------------------------------------


def _bool(value) -> bool:
    if isinstance(value, bool):
        return value
    return str(value).strip().lower() in ("1", "true", "yes", "on")


def _load_data(manifest: RunManifest, out: Path):
    inputs = manifest.inputs
    for key in ("counts", "outcome"):
        if not inputs.get(key):
            raise UsageError(f"--{key} is required")
    manifest.validate_paths()
    pre = manifest.preprocess
    data, report = ingest(inputs["counts"], inputs["outcome"], inputs.get("covariates"),
                          inputs.get("covariates_dm"))
    data, plog = preprocess(data, float(pre["zero_threshold"]), float(pre["pseudovalue"]),
                            _bool(pre["standardize"]))
    write_key_values(out / "preprocess.txt", {**report.to_items(), **plog.to_items()},
                     header="preprocessing log")
    return data


def _scenario(manifest: RunManifest) -> ScenarioSpec:
    extra = manifest.extra
    overrides = {}
    for key, kind in (("scenario", int), ("n", int), ("J", int), ("p_treat", float)):
        if extra.get(key) not in (None, ""):
            overrides[key] = kind(extra[key])
    path = manifest.inputs.get("scenario_file")
    if path:
        manifest.validate_paths()
        base = ScenarioSpec.from_file(path)
        spec = replace(base, **overrides)
    else:
        spec = ScenarioSpec.preset(extra.get("preset", "scenario1"), **overrides)
    return replace(spec, seed=int(manifest.seed))


def effects_frame(summaries) -> pd.DataFrame:
    rows = []
    for s in summaries:
        rows.append({
            "estimand": s.name, "taxon": s.taxon if s.taxon is not None else "",
            "profile": "" if s.profile is None else s.profile,
            "mean": s.mean, "lower": s.lower, "upper": s.upper,
            "selected": "" if s.selected is None else int(s.selected),
            "mppi_phi": np.nan if s.mppi_phi is None else s.mppi_phi,
            "mppi_beta": np.nan if s.mppi_beta is None else s.mppi_beta,
        })
    return pd.DataFrame(rows, columns=["estimand", "taxon", "profile", "mean", "lower", "upper",
                                       "selected", "mppi_phi", "mppi_beta"])


def write_trace(path, trace) -> None:
    cols = trace.columns()
    frame = pd.DataFrame({"sample": np.arange(1, len(trace) + 1), **cols})
    write_table(path, frame, "trace")


def write_acceptance(path, trace) -> None:
    items = {}
    for name, (prop, acc) in sorted(trace.acceptance.items()):
        items[f"{name}.proposed"] = prop
        items[f"{name}.accepted"] = acc
        items[f"{name}.rate"] = acc / prop if prop else float("nan")
    write_key_values(path, items, header="acceptance counts per update")


def _profiles_frame(trace) -> pd.DataFrame:
    rows, counts = dm_profiles(trace)
    frame = pd.DataFrame(rows, columns=list(trace.covariate_dm_names))
    frame.insert(0, "profile", np.arange(rows.shape[0]))
    frame["subjects"] = counts
    return frame


# -- commands ----------------------------------------------------------------------------


def cmd_fit(manifest: RunManifest, out: Path) -> None:
    data = _load_data(manifest, out)
    hp, cfg = manifest.hyperparameters(), manifest.sampler_config()
    level = float(manifest.strategy.get("ci_level", 0.95))
    trace = run_chain(data, hp, cfg)
    write_trace(out / "trace.csv", trace)
    write_acceptance(out / "acceptance.txt", trace)
    summaries = [direct_effect(trace, level)]
    ids = [None] if data.P_dm == 0 else list(range(dm_profiles(trace)[0].shape[0]))
    for pid in ids:
        summaries.append(overall_indirect(trace, pid, level))
    for pid in ids:
        summaries.extend(relative_indirect(trace, pid, level))
    write_table(out / "effects.csv", effects_frame(summaries), "effects")
    if data.P_dm:
        write_table(out / "profiles.csv", _profiles_frame(trace), "profiles")


def cmd_mediate(manifest: RunManifest, out: Path) -> None:
    data = _load_data(manifest, out)
    hp, cfg, scfg = (manifest.hyperparameters(), manifest.sampler_config(),
                     manifest.strategy_config())
    res = mediate(data, hp, cfg, scfg)
    write_table(out / "effects.csv", effects_frame(res.summaries()), "effects")
    sel = pd.DataFrame({"taxon": res.taxa, "selected": res.selected.astype(int),
                        "mppi_phi": res.mppi_phi})
    for q in range(res.selected_by_profile.shape[0] if data.P_dm else 0):
        sel[f"selected_profile{q}"] = res.selected_by_profile[q].astype(int)
    write_table(out / "selection.csv", sel, "selection")
    write_trace(out / "trace.csv", res.base_trace)
    write_acceptance(out / "acceptance.txt", res.base_trace)
    if data.P_dm:
        write_table(out / "profiles.csv", _profiles_frame(res.base_trace), "profiles")
    chosen = [t for t, s in zip(res.taxa, res.selected) if s]
    print(f"{scfg.strategy}: {len(chosen)} selected" + (f": {', '.join(chosen)}" if chosen else ""))


def cmd_simulate(manifest: RunManifest, out: Path) -> None:
    spec = _scenario(manifest)
    sim = generate(spec)
    write_dataset(sim.data, out)
    (out / "scenario.txt").write_text(spec.to_text(), encoding="utf-8", newline="\n")
    truth = pd.DataFrame({"taxon": sim.data.taxa, "alpha": sim.truth.alpha,
                          "phi": sim.truth.phi, "beta_log": sim.truth.beta_log,
                          "active": sim.truth.selected.astype(int)})
    write_table(out / "truth.csv", truth, "truth")
    write_key_values(out / "truth.txt", {"direct": sim.truth.direct,
                                         "overall_indirect": sim.truth.overall},
                     header="true effects")


def _report_frame(reports) -> pd.DataFrame:
    rows = []
    for name, rep in reports:
        d = rep.summary()
        if name is not None:
            d = {"cell": name, **d}
        rows.append(d)
    return pd.DataFrame(rows)


def cmd_study(manifest: RunManifest, out: Path) -> None:
    spec = _scenario(manifest)
    methods = str(manifest.extra["methods"]).split()
    reps = int(manifest.extra["replicates"])
    scfg = manifest.strategy_config()
    reports = run_study(spec, reps, methods, manifest.hyperparameters(),
                        manifest.sampler_config(), scfg, workers=scfg.workers)
    (out / "scenario.txt").write_text(spec.to_text(), encoding="utf-8", newline="\n")
    write_table(out / "study_report.csv", _report_frame([(None, r) for r in reports.values()]),
                "study_report")
    detail = pd.concat([pd.DataFrame(r.rows).assign(method=m) for m, r in reports.items()],
                       ignore_index=True)
    write_table(out / "replicates.csv", detail, "replicates")
    for m, r in reports.items():
        print(f"{m}: SENS={r.sens:.3f} SPEC={r.spec:.3f} MCC={r.mcc:.3f} "
              f"({r.n_ok} ok, {r.n_failed} failed)")


def cmd_sweep(manifest: RunManifest, out: Path) -> None:
    spec = _scenario(manifest)
    sim = generate(spec)
    methods = str(manifest.extra["methods"]).split()
    cells = sensitivity_sweep(sim, manifest.hyperparameters(), None, methods,
                              manifest.sampler_config(), manifest.strategy_config())
    (out / "scenario.txt").write_text(spec.to_text(), encoding="utf-8", newline="\n")
    rows = []
    for name, reports in cells:
        for m, rep in reports.items():
            d = rep.summary()
            rows.append({"cell": name, **{k: d[k] for k in ("method", "sens", "spec", "mcc")},
                         "selected": rep.rows[0].get("selected", ""),
                         "error": rep.rows[0].get("error", "")})
    write_table(out / "sweep_report.csv", pd.DataFrame(rows), "sweep_report")


COMMANDS = {"fit": cmd_fit, "mediate": cmd_mediate, "simulate": cmd_simulate,
            "study": cmd_study, "sweep": cmd_sweep}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            parser.print_help(sys.stderr)
            raise UsageError("a subcommand is required")
        logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                            format="%(levelname)s %(name)s: %(message)s")
        manifest = resolve_manifest(args)
        out = args.out
        out.mkdir(parents=True, exist_ok=True)
        manifest.write(out / "manifest.txt")
        COMMANDS[args.command](manifest, out)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except CmbvsError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
