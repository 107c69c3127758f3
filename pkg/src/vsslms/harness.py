"""Monte Carlo ensembles, theory-vs-simulation reports and experiment I/O."""
from __future__ import annotations

import csv
import json
import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .curves import LearningCurve, to_db
from .errors import ConfigError, DivergenceError
from .filter import _simulate
from .model import (Explicit, SystemModel, ToeplitzAR1, ValueField, White,
                    build_covariance, snr_to_noise_variance, unit_norm_w_o)
from .rules import RuleParams, check_bounds, rule_from_dict, rule_to_dict
from . import theory

log = logging.getLogger(__name__)

CSV_HEADER = ("iter", "msd_db", "emse_db", "mu_mean", "source", "rule")


# -- configuration -------------------------------------------------------------

@dataclass(frozen=True)
class RuleEntry:
    name: str
    params: RuleParams
    mu_initial: float = 0.01
    bounds: Optional[Tuple[float, float]] = None


@dataclass(frozen=True)
class ModelConfig:
    M: int = 4
    covariance: object = field(default_factory=White)
    snr_db: Optional[float] = 20.0
    sigma_v2: Optional[float] = None
    w_o: Optional[Tuple] = None  # None -> normalised all-ones
    value_field: ValueField = ValueField.REAL

    def __post_init__(self):
        object.__setattr__(self, "value_field", ValueField.parse(self.value_field))
        if (self.snr_db is None) == (self.sigma_v2 is None):
            raise ConfigError("model: give exactly one of 'snr_db' and 'sigma_v2'")
        if self.M < 1:
            raise ConfigError(f"model: M must be >= 1, got {self.M}")
        if self.w_o is not None and len(self.w_o) != self.M:
            raise ConfigError(f"model: w_o has {len(self.w_o)} entries, expected M={self.M}")

    def build(self) -> SystemModel:
        w_o = unit_norm_w_o(self.M) if self.w_o is None else np.array(self.w_o)
        if self.sigma_v2 is not None:
            s2 = float(self.sigma_v2)
        else:
            s2 = snr_to_noise_variance(self.snr_db, w_o, build_covariance(self.covariance, self.M))
        return SystemModel(w_o=w_o, sigma_v2=s2, cov_spec=self.covariance,
                           value_field=self.value_field)


@dataclass(frozen=True)
class RunConfig:
    N: int = 20000
    trials: int = 500
    base_seed: int = 0
    tail_fraction: float = 0.1
    record_stride: int = 1
    workers: Optional[int] = None

    def __post_init__(self):
        if self.N < 1:
            raise ConfigError(f"run: N must be >= 1, got {self.N}")
        if self.trials < 1:
            raise ConfigError(f"run: trials must be >= 1, got {self.trials}")
        if not 0.0 < self.tail_fraction <= 0.5:
            raise ConfigError(f"run: tail_fraction must lie in (0, 0.5], got {self.tail_fraction}")
        if self.record_stride < 1:
            raise ConfigError(f"run: record_stride must be >= 1, got {self.record_stride}")


@dataclass(frozen=True)
class TheoryConfig:
    engine: str = "oracle"
    e_mu2_mode: str = "squared-mean"
    steady_mode: Optional[str] = None  # None -> per-rule default
    as_printed: bool = False

    def __post_init__(self):
        if self.engine not in theory.ENGINES:
            raise ConfigError(f"theory: engine must be one of {theory.ENGINES}, got {self.engine!r}")
        if self.e_mu2_mode not in theory.MU2_MODES:
            raise ConfigError(f"theory: e_mu2_mode must be one of {theory.MU2_MODES}, "
                              f"got {self.e_mu2_mode!r}")
        if self.steady_mode is not None and self.steady_mode not in theory.STEADY_MODES:
            raise ConfigError(f"theory: steady_mode must be one of {theory.STEADY_MODES}, "
                              f"got {self.steady_mode!r}")


@dataclass(frozen=True)
class OutputConfig:
    directory: Optional[str] = None
    formats: Tuple[str, ...] = ("csv", "json")

    def __post_init__(self):
        bad = set(self.formats) - {"csv", "json"}
        if bad:
            raise ConfigError(f"outputs: unsupported format(s) {sorted(bad)}")


@dataclass(frozen=True)
class Tolerances:
    steady_db: float = 0.3
    transient_db: float = 1.0
    transient_skip: int = 50


@dataclass(frozen=True)
class ExperimentConfig:
    model: ModelConfig
    rules: Tuple[RuleEntry, ...]
    run: RunConfig = field(default_factory=RunConfig)
    theory: TheoryConfig = field(default_factory=TheoryConfig)
    outputs: OutputConfig = field(default_factory=OutputConfig)
    tolerances: Tolerances = field(default_factory=Tolerances)

    def __post_init__(self):
        if not self.rules:
            raise ConfigError("rules: at least one rule is required")
        names = [r.name for r in self.rules]
        if len(set(names)) != len(names):
            raise ConfigError(f"rules: names must be unique, got {names}")

    @classmethod
    def from_dict(cls, data: Mapping) -> "ExperimentConfig":
        return _config_from_dict(data)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror or exc}") from exc
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
        return cls.from_dict(data)

    def to_dict(self) -> dict:
        return _config_to_dict(self)


def _section(data, key, allowed):
    sec = data.get(key, {})
    if sec is None:
        sec = {}
    if not isinstance(sec, Mapping):
        raise ConfigError(f"{key}: expected an object")
    extra = set(sec) - set(allowed)
    if extra:
        raise ConfigError(f"{key}: unknown key(s) {sorted(extra)}")
    return sec


def _covariance_from_dict(d) -> object:
    if not isinstance(d, Mapping) or "type" not in d:
        raise ConfigError("model.covariance: expected an object with a 'type'")
    kind = str(d["type"]).lower()
    try:
        if kind == "white":
            return White(float(d.get("variance", 1.0)))
        if kind in ("toeplitz_ar1", "ar1", "toeplitzar1"):
            return ToeplitzAR1(float(d["rho"]), float(d.get("variance", 1.0)))
        if kind == "explicit":
            return Explicit(np.array(d["matrix"], dtype=float))
    except KeyError as exc:
        raise ConfigError(f"model.covariance: missing {exc.args[0]!r}") from exc
    raise ConfigError(f"model.covariance: unknown type {d['type']!r}")


def _covariance_to_dict(c) -> dict:
    if isinstance(c, White):
        return {"type": "white", "variance": c.variance}
    if isinstance(c, ToeplitzAR1):
        return {"type": "toeplitz_ar1", "rho": c.rho, "variance": c.variance}
    return {"type": "explicit", "matrix": np.asarray(c.matrix).tolist()}


def _w_o_from_config(raw, M):
    if raw is None or raw == "unit":
        return None
    if isinstance(raw, Mapping):
        re = np.asarray(raw.get("re", np.zeros(M)), dtype=float)
        im = np.asarray(raw.get("im", np.zeros(M)), dtype=float)
        return tuple(re + 1j * im)
    if isinstance(raw, (list, tuple)):
        return tuple(float(x) for x in raw)
    raise ConfigError("model.w_o: expected 'unit', a list, or {'re': [...], 'im': [...]}")


def _config_from_dict(data: Mapping) -> ExperimentConfig:
    if not isinstance(data, Mapping):
        raise ConfigError("config: top level must be an object")
    extra = set(data) - {"model", "rules", "run", "theory", "outputs", "tolerances"}
    if extra:
        raise ConfigError(f"config: unknown section(s) {sorted(extra)}")
    if "model" not in data or "rules" not in data:
        raise ConfigError("config: sections 'model' and 'rules' are required")
    m = _section(data, "model", ("M", "covariance", "snr_db", "sigma_v2", "w_o", "value_field"))
    try:
        M = int(m.get("M", 4))
        model = ModelConfig(
            M=M,
            covariance=_covariance_from_dict(m.get("covariance", {"type": "white"})),
            # 20 dB unless the noise variance is given directly
            snr_db=(None if m.get("snr_db", None if "sigma_v2" in m else 20.0) is None
                    else float(m.get("snr_db", 20.0))),
            sigma_v2=None if m.get("sigma_v2") is None else float(m["sigma_v2"]),
            w_o=_w_o_from_config(m.get("w_o"), M),
            value_field=ValueField.parse(m.get("value_field", "real")),
        )
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"model: {exc}") from exc

    raw_rules = data["rules"]
    if not isinstance(raw_rules, list):
        raise ConfigError("rules: expected a list")
    rules = []
    for k, r in enumerate(raw_rules):
        if not isinstance(r, Mapping) or "type" not in r:
            raise ConfigError(f"rules[{k}]: expected an object with a 'type'")
        extra = set(r) - {"name", "type", "params", "mu_initial", "bounds"}
        if extra:
            raise ConfigError(f"rules[{k}]: unknown key(s) {sorted(extra)}")
        params = rule_from_dict(r["type"], r.get("params", {}))
        bounds = r.get("bounds")
        if bounds is not None:
            if not isinstance(bounds, (list, tuple)) or len(bounds) != 2:
                raise ConfigError(f"rules[{k}]: bounds must be [mu_min, mu_max]")
            bounds = check_bounds(bounds)
        mu_initial = float(r.get("mu_initial", 0.01))
        if not mu_initial > 0:
            raise ConfigError(f"rules[{k}]: mu_initial must be positive")
        rules.append(RuleEntry(str(r.get("name", type(params).__name__)), params, mu_initial, bounds))

    def build(cls, key, allowed, conv):
        sec = _section(data, key, allowed)
        try:
            return cls(**{k: conv[k](v) for k, v in sec.items()})
        except (TypeError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"{key}: {exc}") from exc

    opt_int = lambda v: None if v is None else int(v)
    opt_str = lambda v: None if v is None else str(v)
    run = build(RunConfig, "run", RunConfig.__dataclass_fields__,
                dict(N=int, trials=int, base_seed=int, tail_fraction=float, record_stride=int,
                     workers=opt_int))
    th = build(TheoryConfig, "theory", TheoryConfig.__dataclass_fields__,
               dict(engine=str, e_mu2_mode=str, steady_mode=opt_str, as_printed=bool))
    out = build(OutputConfig, "outputs", OutputConfig.__dataclass_fields__,
                dict(directory=opt_str, formats=lambda v: tuple(str(x) for x in v)))
    tol = build(Tolerances, "tolerances", Tolerances.__dataclass_fields__,
                dict(steady_db=float, transient_db=float, transient_skip=int))
    return ExperimentConfig(model, tuple(rules), run, th, out, tol)


def _config_to_dict(cfg: ExperimentConfig) -> dict:
    m = cfg.model
    if m.w_o is None:
        w_o = "unit"
    elif np.iscomplexobj(np.array(m.w_o)):
        w_o = {"re": np.real(m.w_o).tolist(), "im": np.imag(m.w_o).tolist()}
    else:
        w_o = [float(x) for x in m.w_o]
    rules = []
    for r in cfg.rules:
        d = {"name": r.name, **rule_to_dict(r.params), "mu_initial": r.mu_initial}
        if r.bounds is not None:
            d["bounds"] = list(r.bounds)
        rules.append(d)
    return {
        "model": {"M": m.M, "covariance": _covariance_to_dict(m.covariance), "snr_db": m.snr_db,
                  "sigma_v2": m.sigma_v2, "w_o": w_o, "value_field": m.value_field.value},
        "rules": rules,
        "run": vars(cfg.run).copy(),
        "theory": vars(cfg.theory).copy(),
        "outputs": {"directory": cfg.outputs.directory, "formats": list(cfg.outputs.formats)},
        "tolerances": vars(cfg.tolerances).copy(),
    }


# -- ensembles -----------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class EnsembleResult:
    curve: LearningCurve
    trials: int
    diverged: Tuple[Tuple[int, int], ...] = ()  # (seed, iteration)

    @property
    def n_diverged(self) -> int:
        return len(self.diverged)


def simulate_rule(model: SystemModel, entry: RuleEntry, run: RunConfig) -> EnsembleResult:
    """Average ``run.trials`` independent trials (seeds ``base_seed + t``).

    Diverged trials are dropped with a warning. The reduction runs in trial
    order, so the result does not depend on how trials were scheduled.

    Raises
    ------
    DivergenceError
        If every trial diverged.
    """
    seeds = [run.base_seed + t for t in range(run.trials)]
    workers = run.workers or os.cpu_count() or 1

    def one(seed):
        msd, emse, mu, _, hit = _simulate(model, entry.params, entry.mu_initial, run.N, seed,
                                          bounds=entry.bounds, stride=run.record_stride,
                                          keep_errors=False)
        return seed, msd, emse, mu, hit

    n_rec = -(-run.N // run.record_stride)
    acc = np.zeros((3, n_rec))
    kept = 0
    diverged = []
    with ThreadPoolExecutor(max_workers=workers) if workers > 1 else _Serial() as pool:
        for start in range(0, len(seeds), max(workers, 1) * 4):
            for seed, msd, emse, mu, hit in pool.map(one, seeds[start:start + max(workers, 1) * 4]):
                if hit >= 0:
                    diverged.append((seed, hit))
                    continue
                acc[0] += msd
                acc[1] += emse
                acc[2] += mu
                kept += 1
    if diverged:
        log.warning("rule %s: %d of %d trials diverged and were excluded",
                    entry.name, len(diverged), run.trials)
    if kept == 0:
        raise DivergenceError(f"rule {entry.name}: all {run.trials} trials diverged",
                              iteration=min(h for _, h in diverged))
    acc /= kept
    iters = np.arange(0, run.N, run.record_stride)
    curve = LearningCurve.from_linear(iters, acc[0], acc[1], acc[2], "simulation", entry.name)
    return EnsembleResult(curve=curve, trials=run.trials, diverged=tuple(diverged))


class _Serial:
    def __enter__(self):
        return self

    def __exit__(self, *exc):
        return False

    @staticmethod
    def map(fn, items):
        return map(fn, items)


def run_ensemble(config: ExperimentConfig) -> Dict[str, EnsembleResult]:
    model = config.model.build()
    return {r.name: simulate_rule(model, r, config.run) for r in config.rules}


# -- theory side ---------------------------------------------------------------

def theory_curve(config: ExperimentConfig, entry: RuleEntry, model: Optional[SystemModel] = None):
    model = model or config.model.build()
    return theory.transient_curve(model.spectral, model.w_o, entry.params, entry.mu_initial,
                                  model.sigma_v2, config.run.N, engine=config.theory.engine,
                                  mu2_mode=config.theory.e_mu2_mode, name=entry.name,
                                  as_printed=config.theory.as_printed)


def theory_steady_state(config: ExperimentConfig, entry: RuleEntry,
                        model: Optional[SystemModel] = None) -> theory.SteadyState:
    model = model or config.model.build()
    mu_ss = theory.steady_state_mu(entry.params, model.sigma_v2, config.theory.steady_mode)
    return theory.steady_state_msd_emse(mu_ss, model.spectral.lam, model.sigma_v2)


# -- comparison ----------------------------------------------------------------

def steady_state_estimate(curve: LearningCurve, tail_fraction: float) -> float:
    """Mean of the linear MSD over the last ``tail_fraction`` of the curve, in dB."""
    if not 0.0 < tail_fraction <= 1.0:
        raise ConfigError(f"tail_fraction must lie in (0, 1], got {tail_fraction}")
    n = int(round(len(curve) * tail_fraction))
    if n < 10:
        raise ConfigError(f"steady-state tail has {n} samples; need at least 10")
    tail = curve.msd[-n:]
    if not np.all(np.isfinite(tail)):
        raise DivergenceError(f"curve {curve.rule} is not finite in its tail")
    return float(to_db(np.mean(tail)))


@dataclass(frozen=True)
class ReportRow:
    rule: str
    theory_ss_db: float
    sim_ss_db: float
    difference_db: float
    transient_max_dev_db: float
    steady_pass: bool
    transient_pass: bool
    note: str = ""

    @property
    def status(self) -> str:
        return "PASS" if self.steady_pass else "FAIL"

    @property
    def transient_status(self) -> str:
        if self.transient_pass and math.isnan(self.transient_max_dev_db):
            return "SKIP"
        return "PASS" if self.transient_pass else "FAIL"


@dataclass(frozen=True)
class ComparisonReport:
    rows: Tuple[ReportRow, ...]
    tolerances: Tolerances

    def row(self, rule: str) -> ReportRow:
        for r in self.rows:
            if r.rule == rule:
                return r
        raise KeyError(rule)

    @property
    def all_pass(self) -> bool:
        return all(r.steady_pass for r in self.rows)


def transient_max_deviation(theory_curve: LearningCurve, sim_curve: LearningCurve,
                            skip: int = 0) -> float:
    """Largest |theory - simulation| in dB at the simulation's iterations >= ``skip``."""
    idx = np.asarray(sim_curve.iters)
    th_iters = np.asarray(theory_curve.iters)
    pos = np.searchsorted(th_iters, idx)
    if np.any(pos >= len(th_iters)) or np.any(th_iters[np.minimum(pos, len(th_iters) - 1)] != idx):
        raise ConfigError(f"rule {sim_curve.rule}: theory and simulation iterations differ")
    mask = idx >= skip
    if not mask.any():
        return 0.0
    dev = np.abs(theory_curve.msd_db[pos[mask]] - sim_curve.msd_db[mask])
    return float(np.max(dev)) if np.all(np.isfinite(dev)) else math.inf


def compare_report(theory_curves: Mapping[str, Optional[LearningCurve]],
                   sim_curves: Mapping[str, Optional[LearningCurve]],
                   theory_steady: Optional[Mapping[str, Optional[float]]] = None,
                   tolerances: Tolerances = Tolerances(), tail_fraction: float = 0.1,
                   notes: Optional[Mapping[str, str]] = None,
                   check_transient: bool = True) -> ComparisonReport:
    """Tabulate theory vs simulation per rule and mark PASS/FAIL.

    ``theory_steady`` gives the analytical steady-state MSD in dB per rule;
    without it the tail of the theory curve is used. A ``None`` curve or
    value marks a numerical failure and yields a failing row with NaNs.
    With ``check_transient=False`` theory curves may be ``None`` and the
    transient column is reported as SKIP.
    """
    if set(theory_curves) != set(sim_curves):
        raise ConfigError(f"rule sets differ: theory {sorted(theory_curves)} "
                          f"vs simulation {sorted(sim_curves)}")
    if not check_transient and theory_steady is None:
        raise ConfigError("check_transient=False needs steady-state theory values")
    if theory_steady is not None and set(theory_steady) != set(sim_curves):
        raise ConfigError("steady-state theory values do not cover the same rules")
    notes = notes or {}
    rows = []
    for name in theory_curves:
        th, sim = theory_curves[name], sim_curves[name]
        if theory_steady is not None:
            th_ss = theory_steady[name]
        else:
            th_ss = None if th is None else steady_state_estimate(th, tail_fraction)
        sim_ss = None if sim is None else steady_state_estimate(sim, tail_fraction)
        th_ss = math.nan if th_ss is None else th_ss
        sim_ss = math.nan if sim_ss is None else sim_ss
        diff = th_ss - sim_ss
        dev = (transient_max_deviation(th, sim, tolerances.transient_skip)
               if check_transient and th is not None and sim is not None else math.nan)
        rows.append(ReportRow(
            rule=name, theory_ss_db=th_ss, sim_ss_db=sim_ss, difference_db=diff,
            transient_max_dev_db=dev,
            steady_pass=bool(abs(diff) <= tolerances.steady_db),
            transient_pass=bool(dev <= tolerances.transient_db) if check_transient else True,
            note=notes.get(name, "")))
    return ComparisonReport(tuple(rows), tolerances)


# -- files ---------------------------------------------------------------------

def _fmt(x) -> str:
    # repr() is the shortest string that round-trips and ignores the locale
    return repr(float(x))


def write_curve_csv(path, curve: LearningCurve) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for k in range(len(curve)):
            w.writerow((int(curve.iters[k]), _fmt(curve.msd_db[k]), _fmt(curve.emse_db[k]),
                        _fmt(curve.mu_mean[k]), curve.source, curve.rule))
    return path


def read_curve_csv(path) -> LearningCurve:
    with Path(path).open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = tuple(next(reader))
        if header != CSV_HEADER:
            raise ConfigError(f"{path}: unexpected CSV header {header}")
        rows = list(reader)
    if not rows:
        raise ConfigError(f"{path}: no data rows")
    cols = list(zip(*rows))
    return LearningCurve(np.array(cols[0], dtype=int), np.array(cols[1], dtype=float),
                         np.array(cols[2], dtype=float), np.array(cols[3], dtype=float),
                         cols[4][0], cols[5][0])


def write_table_csv(path, header: Sequence[str], rows: Sequence[Sequence]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(x) if isinstance(x, (float, np.floating)) else x for x in r])
    return path


REPORT_HEADER = ("rule", "theory_ss_db", "sim_ss_db", "difference_db", "transient_max_dev_db",
                 "status", "transient_status", "note")


def report_rows(report: ComparisonReport) -> List[list]:
    return [[r.rule, r.theory_ss_db, r.sim_ss_db, r.difference_db, r.transient_max_dev_db,
             r.status, r.transient_status, r.note] for r in report.rows]


def _json_safe(x):
    if isinstance(x, dict):
        return {k: _json_safe(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_json_safe(v) for v in x]
    if isinstance(x, (float, np.floating)):
        return float(x) if math.isfinite(x) else None
    if isinstance(x, np.integer):
        return int(x)
    return x


def write_json(path, payload) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(_json_safe(payload), indent=2) + "\n", encoding="utf-8")
    return path


def report_to_dict(report: ComparisonReport) -> dict:
    return {"tolerances": vars(report.tolerances).copy(),
            "rows": [dict(zip(REPORT_HEADER, r)) for r in report_rows(report)]}


def check_report(rows: Sequence[Mapping], tolerances: Mapping) -> List[str]:
    """Recompute PASS/FAIL from emitted numbers (as parsed from CSV or JSON)."""
    out = []
    for r in rows:
        diff = float(r["difference_db"]) if r["difference_db"] not in (None, "") else math.nan
        out.append("PASS" if abs(diff) <= float(tolerances["steady_db"]) else "FAIL")
    return out
