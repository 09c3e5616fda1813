"""Command-line interface: dataset analysis and simulation studies.

``analyze`` ingests a CSV (or the bundled hospital data), runs the
variance-test selection strategy, and writes per-area point estimates with
three uncertainty columns (test-based analytic, parametric bootstrap, and
bias-corrected jackknife, all as root-MSPE).  ``simulate`` drives the named
study presets or a scenario config file and writes relative-bias tables.

Every run echoes its fully resolved configuration (flags, seeds, frozen
covariates) to ``resolved_config.txt``; outputs carry no timestamps, so a
rerun with the same inputs reproduces the files byte for byte.

Exit codes: 0 success, 2 validation error, 3 numeric failure,
4 internal invariant violation.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .datasets import BUILTIN_NAMES, builtin_table
from .errors import (
    ConfigError,
    CsvFormatError,
    DegenerateFit,
    DomainError,
    InsufficientData,
    JackknifeRankError,
    McjackError,
    NoViableModel,
    ScenarioError,
    SingularDesign,
    StructuralError,
)
from .estimation import dhm_uncertainty
from .harness import Scenario, preset_scenarios, run_scenario
from .ingest import AreaTable, build_design, read_area_table
from .jackknife import TruncationConfig, mcjack_estimate
from .model import AreaDataset
from .procedures import DhmThenPredict, PlainEblup
from .selection import CandidateModel, dhm_test

_VALIDATION_ERRORS = (CsvFormatError, ConfigError, StructuralError, DomainError)
_NUMERIC_ERRORS = (
    SingularDesign,
    InsufficientData,
    DegenerateFit,
    NoViableModel,
    JackknifeRankError,
    ScenarioError,
)


@dataclass
class AnalysisReport:
    """Per-area estimates and uncertainty columns plus run metadata.

    Uncertainty columns are root-MSPE values, i.e. exp(log-MSPE / 2).
    ``theta_hat`` is the point estimate of the test-based procedure,
    ``theta_tilde`` the plain EBLUP; ``mj``/``bt`` belong to the former,
    ``mj_eblup``/``bt_eblup`` to the latter.
    """

    area_ids: tuple
    y: np.ndarray
    covariate_names: tuple
    covariates: np.ndarray
    sqrt_d: np.ndarray
    theta_hat: np.ndarray
    theta_tilde: np.ndarray
    dhm: np.ndarray
    bt: np.ndarray
    mj: np.ndarray
    bt_eblup: np.ndarray
    mj_eblup: np.ndarray
    metadata: dict

    def check_invariants(self) -> None:
        for name in ("dhm", "bt", "mj", "bt_eblup", "mj_eblup"):
            col = getattr(self, name)
            if not np.all(col > 0.0):
                raise AssertionError(f"uncertainty column {name} must be strictly positive")
            log_mspe = np.log(col**2)
            if not np.allclose(np.exp(log_mspe / 2.0), col, rtol=0.0, atol=1e-12):
                raise AssertionError(f"exp/log round trip failed for column {name}")

    def _columns(self):
        cols = [("area", list(self.area_ids)), ("y", self.y)]
        cols += [(n, self.covariates[:, i]) for i, n in enumerate(self.covariate_names)]
        cols += [
            ("sqrt_D", self.sqrt_d),
            ("theta_hat", self.theta_hat),
            ("dhm", self.dhm),
            ("bt", self.bt),
            ("mj", self.mj),
            ("theta_tilde", self.theta_tilde),
            ("bt_eblup", self.bt_eblup),
            ("mj_eblup", self.mj_eblup),
        ]
        return cols

    def to_csv(self, path) -> None:
        cols = self._columns()
        lines = [",".join(name for name, _ in cols)]
        n = len(self.area_ids)
        for i in range(n):
            cells = []
            for name, col in cols:
                v = col[i]
                cells.append(str(v) if name == "area" else repr(float(v)))
            lines.append(",".join(cells))
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("\n".join(lines) + "\n")

    def to_json(self, path) -> None:
        payload = {"metadata": self.metadata, "areas": []}
        for i, aid in enumerate(self.area_ids):
            entry = {"area": aid, "y": float(self.y[i]), "sqrt_D": float(self.sqrt_d[i])}
            entry["covariates"] = {
                n: float(self.covariates[i, k]) for k, n in enumerate(self.covariate_names)
            }
            for name in ("theta_hat", "theta_tilde", "dhm", "bt", "mj", "bt_eblup", "mj_eblup"):
                entry[name] = float(getattr(self, name)[i])
            payload["areas"].append(entry)
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, indent=1)


def analyze_table(
    table: AreaTable,
    mean: str = "all",
    intercept: bool = True,
    alpha: float = 0.05,
    K: int = 4000,
    seed: int = 1,
    lam: float = 2.0,
    rho: float = 0.5,
    source: str = "<data>",
) -> AnalysisReport:
    """Full analysis pipeline on a parsed table; see the module docstring."""
    X, design_names = build_design(table, mean=mean, intercept=intercept)
    data = AreaDataset(area_ids=table.area_ids, y=table.y, X_full=X, D=table.D)
    full_mask = (True,) * data.p_full
    cfg = TruncationConfig(lam=lam, rho=rho)

    outcome = dhm_test(data, CandidateModel(full_mask, False), alpha)
    uncertainty = dhm_uncertainty(data, CandidateModel(full_mask, False), alpha)

    test_proc = DhmThenPredict(full_mask, alpha=alpha)
    eblup_proc = PlainEblup(full_mask)
    theta_hat = test_proc.predict(data)
    theta_tilde = eblup_proc.predict(data)

    # One draw set (same seed) serves both procedures: the column-to-column
    # comparison then sees the same Monte-Carlo noise.
    res_test = mcjack_estimate(data, test_proc, K=K, seed=seed, cfg=cfg)
    res_eblup = mcjack_estimate(data, eblup_proc, K=K, seed=seed, cfg=cfg)

    report = AnalysisReport(
        area_ids=table.area_ids,
        y=table.y,
        covariate_names=table.covariate_names,
        covariates=table.covariates,
        sqrt_d=np.sqrt(table.D),
        theta_hat=theta_hat,
        theta_tilde=theta_tilde,
        dhm=np.sqrt(uncertainty.values),
        bt=np.exp(res_test.log_mspe_bootstrap / 2.0),
        mj=np.exp(res_test.log_mspe_mcjack / 2.0),
        bt_eblup=np.exp(res_eblup.log_mspe_bootstrap / 2.0),
        mj_eblup=np.exp(res_eblup.log_mspe_mcjack / 2.0),
        metadata={
            "source": source,
            "mean": mean,
            "intercept": intercept,
            "design_columns": list(design_names),
            "alpha": alpha,
            "K": K,
            "seed": seed,
            "lambda": lam,
            "rho": rho,
            "t_stat": outcome.t_stat,
            "critical_value": outcome.critical_value,
            "random_effect_rejected": outcome.rejected,
            "truncation_hits": res_test.truncation_hits + res_eblup.truncation_hits,
            "zero_mspe_draws": res_test.neg_inf_count + res_eblup.neg_inf_count,
            "version": __version__,
        },
    )
    report.check_invariants()
    return report


def _write_resolved_config(path, entries: dict) -> None:
    lines = [f"{k}={entries[k]}" for k in entries]
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# scenario config files (flat key=value, strict schema)
# ---------------------------------------------------------------------------

_CONFIG_KEYS = {
    "name": str,
    "m": int,
    "beta": "floats",
    "true_a": float,
    "a_known_zero": "bool",
    "procedure": str,
    "d_high": float,
    "d_low": float,
    "include_x2": "bool",
    "x2": "floats",
    "alpha": float,
    "n_sim": int,
    "K": int,
    "truth_n": int,
    "seed": int,
    "lambda": float,
    "rho": float,
}

_CONFIG_TO_FIELD = {"procedure": "procedure_kind", "lambda": "lam"}


def _parse_config_value(key: str, raw: str):
    kind = _CONFIG_KEYS[key]
    raw = raw.strip()
    try:
        if kind == "bool":
            if raw.lower() in ("true", "1", "yes"):
                return True
            if raw.lower() in ("false", "0", "no"):
                return False
            raise ValueError(f"not a boolean: {raw!r}")
        if kind == "floats":
            return tuple(float(v) for v in raw.split(","))
        return kind(raw)
    except ValueError as exc:
        raise ConfigError(f"config key {key!r}: {exc}") from exc


def load_scenario_config(path) -> Scenario:
    """Parse a flat key=value scenario file; unknown keys are rejected."""
    fields = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key=value, got {line!r}")
            key, raw = line.split("=", 1)
            key = key.strip()
            if key not in _CONFIG_KEYS:
                raise ConfigError(
                    f"{path}:{lineno}: unknown config key {key!r}; "
                    f"known: {sorted(_CONFIG_KEYS)}"
                )
            fields[_CONFIG_TO_FIELD.get(key, key)] = _parse_config_value(key, raw)
    required = {"name", "m", "beta", "true_a", "a_known_zero", "procedure_kind"}
    missing = required - set(fields)
    if missing:
        raise ConfigError(f"{path}: missing required config key(s): {sorted(missing)}")
    return Scenario(**fields)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_analyze(args) -> int:
    if (args.data is None) == (args.builtin is None):
        raise ConfigError("provide exactly one of --data FILE or --builtin NAME")
    if args.builtin is not None:
        if args.builtin not in BUILTIN_NAMES:
            raise ConfigError(f"unknown builtin {args.builtin!r}; known: {BUILTIN_NAMES}")
        table = builtin_table(args.builtin)
        source = f"builtin:{args.builtin}"
    else:
        table = read_area_table(args.data)
        source = str(args.data)

    report = analyze_table(
        table,
        mean=args.mean,
        intercept=not args.no_intercept,
        alpha=args.alpha,
        K=args.K,
        seed=args.seed,
        lam=getattr(args, "lambda"),
        rho=args.rho,
        source=source,
    )
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    report.to_csv(out / "report.csv")
    report.to_json(out / "report.json")
    _write_resolved_config(
        out / "resolved_config.txt",
        {k: report.metadata[k] for k in sorted(report.metadata)},
    )
    branch = "rejected" if report.metadata["random_effect_rejected"] else "accepted"
    print(
        f"variance test: T={report.metadata['t_stat']:.4g} vs critical "
        f"{report.metadata['critical_value']:.4g} -> A=0 {branch}"
    )
    print(f"wrote {out / 'report.csv'}, {out / 'report.json'}")
    return 0


def cmd_simulate(args) -> int:
    if (args.preset is None) == (args.config is None):
        raise ConfigError("provide exactly one of --preset NAME or --config FILE")
    quick = args.quick
    if args.preset is not None:
        scenarios = preset_scenarios(args.preset, quick=quick, seed=args.seed)
    else:
        base = load_scenario_config(args.config)
        overrides = {}
        if args.seed is not None:
            overrides["seed"] = args.seed
        if quick:
            overrides.update(n_sim=200, K=500)
        scenarios = [Scenario(**{**_scenario_dict(base), **overrides})]
    if args.K is not None:
        scenarios = [Scenario(**{**_scenario_dict(s), "K": args.K}) for s in scenarios]

    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    config_echo = {"version": __version__, "threads": args.threads}
    single = len(scenarios) == 1
    for sc in scenarios:
        table = run_scenario(sc, threads=args.threads)
        suffix = "" if single else f"_{sc.name}"
        table.to_csv(out / f"rb_table{suffix}.csv")
        table.to_json(out / f"rb_table{suffix}.json")
        table.boxplots_to_json(out / f"boxplots{suffix}.json")
        for key, value in sorted(sc.resolved_config().items()):
            config_echo[f"scenario.{sc.name}.{key}"] = value
        print(f"scenario {sc.name}: wrote rb_table{suffix}.csv ({sc.n_sim} replicates)")
    _write_resolved_config(out / "resolved_config.txt", config_echo)
    return 0


def _scenario_dict(s: Scenario) -> dict:
    from dataclasses import asdict

    return asdict(s)


def cmd_version(_args) -> int:
    print(f"mcjack {__version__}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mcjack",
        description="Log-MSPE estimation for small-area predictors, "
        "including predictors chosen by model selection.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    pa = sub.add_parser("analyze", help="analyze one dataset")
    pa.add_argument("--data", help="input CSV (header: area,y,D|sqrtD,covariates...)")
    pa.add_argument("--builtin", help=f"bundled dataset, one of {BUILTIN_NAMES}")
    pa.add_argument("--mean", default="all", help="mean model: all | cols:a,b | poly:col:deg")
    pa.add_argument("--no-intercept", action="store_true")
    pa.add_argument("--alpha", type=float, default=0.05)
    pa.add_argument("--K", type=int, default=4000, help="Monte-Carlo draws per evaluation")
    pa.add_argument("--seed", type=int, default=1)
    pa.add_argument("--lambda", type=float, default=2.0, help="truncation scale")
    pa.add_argument("--rho", type=float, default=0.5, help="truncation exponent")
    pa.add_argument("--threads", type=int, default=1)
    pa.add_argument("--out-dir", default=".")
    pa.set_defaults(func=cmd_analyze)

    ps = sub.add_parser("simulate", help="run a simulation study")
    ps.add_argument("--preset", help="table2 | table3 | fig2 | fig3 | fig4")
    ps.add_argument("--config", help="scenario config file (key=value lines)")
    scale = ps.add_mutually_exclusive_group()
    scale.add_argument("--quick", action="store_true", help="200 replicates, K=500")
    scale.add_argument("--paper", action="store_true", help="1000 replicates, K=1000 (default)")
    ps.add_argument("--seed", type=int, default=None)
    ps.add_argument("--K", type=int, default=None, help="override Monte-Carlo draws")
    ps.add_argument("--threads", type=int, default=1)
    ps.add_argument("--out-dir", default=".")
    ps.set_defaults(func=cmd_simulate)

    pv = sub.add_parser("version", help="print the version")
    pv.set_defaults(func=cmd_version)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except _VALIDATION_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except _NUMERIC_ERRORS as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3
    except (AssertionError, McjackError) as exc:
        print(f"internal error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
