"""Replication study driver: population -> field samples -> resampling ->
estimates -> aggregated metric tables.

Replications are the unit of parallelism; each one owns its survey,
resampling chain, and estimator state, seeded from
SeedSequence(master_seed, spawn_key=(design_hash, replication_index)) so that
adding designs never perturbs existing streams and results are bitwise
identical regardless of worker count. Aggregation is an ordered reduce by
replication index.
"""

from __future__ import annotations

import csv
import hashlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import estimators as est
from . import resampler
from .errors import ConfigurationError, DataError
from .fieldsim import DESIGN_NAMES, DesignConfig, run_survey
from .netpop import AttributeTable, PopulationGraph, derived_variable, load_population
from .oracle import SyntheticPopSpec, gen_population, mc_field_inclusion
from .resampler import ResampleConfig

__all__ = [
    "StudyConfig",
    "StudyReport",
    "MetricsRow",
    "ReplicationDiagnostics",
    "ParabolaFit",
    "run_study",
    "expand_complements",
    "fit_parabola",
    "emit_tables",
]

REFERENCE_ESTIMATOR = "adherent"


@dataclass(frozen=True)
class StudyConfig:
    """Everything a replication study needs.

    The population comes either from files (edges_path/attrs_path) or from a
    synthetic spec. Per-design field configs are derived from ``field_base``
    with the design's coupon cap and plus-link setting; ``design_overrides``
    replaces the derived config outright for a named design.
    """

    edges_path: str | None = None
    attrs_path: str | None = None
    synthetic: SyntheticPopSpec | None = None
    synthetic_seed: int = 0
    designs: tuple[str, ...] = ("RDS",)
    replications: int = 1000
    field_base: DesignConfig = field(default_factory=DesignConfig)
    design_overrides: dict[str, DesignConfig] = field(default_factory=dict)
    resample: ResampleConfig = field(default_factory=ResampleConfig)
    variables: tuple[str, ...] = ("degree", "deg2plus")
    estimators: tuple[str, ...] = ("adherent", "vh_current", "sample_mean")
    variance_id: str = "simple_n"
    alpha: float = 0.05
    master_seed: int = 0
    threads: int = 1
    mc_pi_replications: int = 0

    def __post_init__(self):
        if self.replications < 1:
            raise ConfigurationError("replications must be >= 1")
        if not self.variables:
            raise ConfigurationError("variables must be nonempty")
        for d in self.designs:
            if d not in DESIGN_NAMES:
                raise ConfigurationError(f"unknown design {d!r}")
        for e in self.estimators:
            if e not in ("adherent", "brewer_pi", "vh_current", "sample_mean"):
                raise ConfigurationError(
                    f"estimator {e!r} is not available in replication studies"
                )
        if "brewer_pi" in self.estimators and self.mc_pi_replications < 1:
            raise ConfigurationError(
                "brewer_pi needs mc_pi_replications >= 1 for its reference "
                "inclusion probabilities"
            )
        if self.threads < 1:
            raise ConfigurationError("threads must be >= 1")
        if not 0.0 < self.alpha < 1.0:
            raise ConfigurationError("alpha must be in (0, 1)")

    def design_config(self, name: str) -> DesignConfig:
        if name in self.design_overrides:
            return self.design_overrides[name]
        return replace(
            self.field_base,
            coupon_max=15 if name.startswith("SB") else 3,
            plus_links=name.endswith("+"),
        )

    def load_population(self) -> tuple[PopulationGraph, AttributeTable | None]:
        if self.synthetic is not None:
            return gen_population(self.synthetic, self.synthetic_seed)
        if self.edges_path is None:
            raise ConfigurationError("need either population files or a synthetic spec")
        return load_population(self.edges_path, self.attrs_path)


@dataclass(frozen=True)
class MetricsRow:
    """Aggregated metrics for one (design, estimator, variable) cell."""

    design: str
    estimator_id: str
    variable: str
    binary: bool
    actual: float
    e_est: float
    bias: float
    sd: float
    mse: float
    eff: float
    rbias: float
    coverage: float
    mean_half_width: float


@dataclass(frozen=True)
class ReplicationDiagnostics:
    design: str
    replication: int
    zero_frequency_members: int
    stalled_resamples: int
    burn_in_used: int
    variance_clamps: int


@dataclass(frozen=True)
class ParabolaFit:
    """One-parameter weighted least squares fit mse = a * p * (1 - p)."""

    a: float
    p: np.ndarray
    mse: np.ndarray
    weights: np.ndarray
    residual_sum: float


@dataclass
class StudyReport:
    rows: list[MetricsRow]
    diagnostics: list[ReplicationDiagnostics]
    replications: int
    designs: tuple[str, ...]
    estimators: tuple[str, ...]
    variables: tuple[str, ...]

    def row(self, design: str, estimator_id: str, variable: str) -> MetricsRow:
        for r in self.rows:
            if (r.design, r.estimator_id, r.variable) == (design, estimator_id, variable):
                return r
        raise KeyError((design, estimator_id, variable))


def _design_hash(name: str) -> int:
    return int.from_bytes(hashlib.blake2b(name.encode(), digest_size=4).digest(), "big")


def replication_seed(master_seed: int, design: str, index: int) -> np.random.SeedSequence:
    """Stable per-replication seed; adding designs never shifts streams."""
    return np.random.SeedSequence(master_seed, spawn_key=(_design_hash(design), index))


def _population_actuals(
    graph: PopulationGraph, attrs: AttributeTable | None, variables
) -> dict[str, tuple[float, bool]]:
    out = {}
    for name in variables:
        if attrs is not None:
            values = attrs.variable(name, graph)
        else:
            values = derived_variable(graph, name)
        binary = bool(np.all(np.isin(values, (0.0, 1.0))))
        out[name] = (float(values.mean()), binary)
    return out


def _one_replication(
    graph: PopulationGraph,
    attrs: AttributeTable | None,
    cfg: StudyConfig,
    design: str,
    dcfg: DesignConfig,
    rep: int,
    pi_ref: np.ndarray | None,
):
    seed = replication_seed(cfg.master_seed, design, rep)
    survey_seed, resample_seed = seed.spawn(2)
    try:
        sample = run_survey(graph, attrs, dcfg, survey_seed)
        freqs = resampler.run(sample, cfg.resample, resample_seed)
        var_diag = est.VarianceDiagnostics()
        results = {}
        for estimator_id in cfg.estimators:
            kwargs = {}
            if estimator_id == "adherent":
                kwargs["f"] = freqs.f
            elif estimator_id == "vh_current":
                kwargs["degrees"] = sample.degrees
            elif estimator_id == "brewer_pi":
                kwargs["pi"] = pi_ref[sample.members]
            for variable in cfg.variables:
                y = sample.variable(variable)
                r = est.compute_estimate(
                    estimator_id,
                    cfg.variance_id,
                    y,
                    alpha=cfg.alpha,
                    diagnostics=var_diag,
                    **kwargs,
                )
                results[(estimator_id, variable)] = (r.point, r.half_width)
        diag = ReplicationDiagnostics(
            design=design,
            replication=rep,
            zero_frequency_members=freqs.diagnostics.zero_frequency_members,
            stalled_resamples=freqs.diagnostics.stalled_resamples,
            burn_in_used=freqs.diagnostics.burn_in_used,
            variance_clamps=var_diag.negative_clamps,
        )
        return results, diag
    except Exception as exc:
        raise RuntimeError(
            f"replication failed: design={design} replication={rep} "
            f"spawn_key={(_design_hash(design), rep)}: {exc}"
        ) from exc


def run_study(cfg: StudyConfig) -> StudyReport:
    """Run the full replication study described by cfg.

    Deterministic for a fixed master seed regardless of thread count: every
    replication derives its own seed and aggregation reduces in replication
    order.
    """
    graph, attrs = cfg.load_population()
    actuals = _population_actuals(graph, attrs, cfg.variables)

    rows: list[MetricsRow] = []
    diagnostics: list[ReplicationDiagnostics] = []

    for design in cfg.designs:
        dcfg = cfg.design_config(design)
        pi_ref = None
        if "brewer_pi" in cfg.estimators:
            pi_seed = np.random.SeedSequence(
                cfg.master_seed, spawn_key=(_design_hash(design), 1 << 40)
            )
            pi_est = mc_field_inclusion(graph, dcfg, cfg.mc_pi_replications, pi_seed)
            pi_ref = np.maximum(pi_est.pi, 1.0 / (2.0 * cfg.mc_pi_replications))

        def job(rep, _design=design, _dcfg=dcfg, _pi=pi_ref):
            return _one_replication(graph, attrs, cfg, _design, _dcfg, rep, _pi)

        if cfg.threads == 1:
            outcomes = [job(rep) for rep in range(cfg.replications)]
        else:
            with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
                outcomes = list(pool.map(job, range(cfg.replications)))

        points = {
            key: np.array([res[key][0] for res, _ in outcomes])
            for key in outcomes[0][0]
        }
        half_widths = {
            key: np.array([res[key][1] for res, _ in outcomes])
            for key in outcomes[0][0]
        }
        diagnostics.extend(d for _, d in outcomes)

        mse_ref = {}
        bias_ref = {}
        if REFERENCE_ESTIMATOR in cfg.estimators:
            for variable in cfg.variables:
                actual, _ = actuals[variable]
                pts = points[(REFERENCE_ESTIMATOR, variable)]
                mse_ref[variable] = float(np.mean((pts - actual) ** 2))
                bias_ref[variable] = float(np.mean(pts) - actual)

        for estimator_id in cfg.estimators:
            for variable in cfg.variables:
                actual, binary = actuals[variable]
                pts = points[(estimator_id, variable)]
                hws = half_widths[(estimator_id, variable)]
                e_est = float(pts.mean())
                bias = e_est - actual
                sd = float(pts.std(ddof=1)) if len(pts) > 1 else 0.0
                mse = float(np.mean((pts - actual) ** 2))
                covered = (pts - hws <= actual) & (actual <= pts + hws)
                if variable in mse_ref and mse_ref[variable] > 0:
                    eff = mse / mse_ref[variable]
                else:
                    eff = float("nan")
                if variable in bias_ref and bias_ref[variable] != 0:
                    rbias = abs(bias) / abs(bias_ref[variable])
                else:
                    rbias = float("nan")
                rows.append(
                    MetricsRow(
                        design=design,
                        estimator_id=estimator_id,
                        variable=variable,
                        binary=binary,
                        actual=actual,
                        e_est=e_est,
                        bias=bias,
                        sd=sd,
                        mse=mse,
                        eff=eff,
                        rbias=rbias,
                        coverage=float(covered.mean()),
                        mean_half_width=float(hws.mean()),
                    )
                )
    return StudyReport(
        rows=rows,
        diagnostics=diagnostics,
        replications=cfg.replications,
        designs=cfg.designs,
        estimators=cfg.estimators,
        variables=cfg.variables,
    )


def expand_complements(points) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Add the complement (1-p, same mse) of every proportion point.

    Returns (p, mse, is_original); the complement of a proportion has the
    same estimation MSE, so the added points clarify the parabola pattern
    without informing the fit. Only proportions are meaningful here, so any
    p outside [0, 1] is an error.
    """
    pts = [(float(p), float(m)) for p, m in points]
    for p, _ in pts:
        if not 0.0 <= p <= 1.0:
            raise DataError(
                f"complement expansion applies to proportions; got p={p}"
            )
    p = np.array([q for q, _ in pts] + [1.0 - q for q, _ in pts])
    mse = np.array([m for _, m in pts] * 2)
    original = np.array([True] * len(pts) + [False] * len(pts))
    return p, mse, original


def fit_parabola(points, weights=None) -> ParabolaFit:
    """Weighted least squares for the one-parameter law mse = a * p(1-p).

    a = sum(w * mse * x) / sum(w * x^2) with x = p(1-p); default weights are
    1. Points at p in {0, 1} carry no information about a; if all points are
    there the fit is undefined.
    """
    p = np.array([float(q) for q, _ in points])
    mse = np.array([float(m) for _, m in points])
    w = np.ones_like(p) if weights is None else np.asarray(weights, dtype=np.float64)
    if len(w) != len(p):
        raise ConfigurationError("weights must match points")
    x = p * (1.0 - p)
    denom = float(np.sum(w * x**2))
    if denom == 0.0:
        raise DataError("all points at p in {0, 1}; cannot identify the coefficient")
    a = float(np.sum(w * mse * x) / denom)
    residual = float(np.sum(w * (mse - a * x) ** 2))
    return ParabolaFit(a=a, p=p, mse=mse, weights=w, residual_sum=residual)


def _fname(design: str) -> str:
    return design.replace("+", "plus")


def emit_tables(
    report: StudyReport, out_dir, parabola_weights: str = "uniform"
) -> list[Path]:
    """Write per-design metrics and coverage CSVs, a parabola-fit CSV, and a
    diagnostics sidecar. Metrics are printed with 6 decimals, the coverage
    summaries with 2.

    ``parabola_weights`` is 'uniform' or 'inverse_x2' (w = 1/(p(1-p))^2).
    """
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise DataError(f"cannot create output directory {out}: {exc}") from exc
    if parabola_weights not in ("uniform", "inverse_x2"):
        raise ConfigurationError(f"unknown parabola weighting {parabola_weights!r}")
    written: list[Path] = []

    for design in report.designs:
        path = out / f"metrics_{_fname(design)}.csv"
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["estimator", "name", "actual", "E.est", "bias", "sd", "mse", "eff", "rbias"])
            for estimator_id in report.estimators:
                for variable in report.variables:
                    r = report.row(design, estimator_id, variable)
                    w.writerow(
                        [estimator_id, variable]
                        + [f"{v:.6f}" for v in (r.actual, r.e_est, r.bias, r.sd, r.mse, r.eff, r.rbias)]
                    )
        written.append(path)

        path = out / f"coverage_{_fname(design)}.csv"
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["name", "actual", "halfwidth", "coverage"])
            cov_estimator = (
                REFERENCE_ESTIMATOR
                if REFERENCE_ESTIMATOR in report.estimators
                else report.estimators[0]
            )
            for variable in report.variables:
                r = report.row(design, cov_estimator, variable)
                w.writerow(
                    [variable]
                    + [f"{v:.2f}" for v in (r.actual, r.mean_half_width, r.coverage)]
                )
        written.append(path)

    path = out / "parabola.csv"
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["design", "estimator", "a", "n_points", "residual_sum"])
        for design in report.designs:
            for estimator_id in report.estimators:
                pts = [
                    (r.actual, r.mse)
                    for r in report.rows
                    if r.design == design
                    and r.estimator_id == estimator_id
                    and r.binary
                ]
                weights = None
                if parabola_weights == "inverse_x2":
                    pts = [(p, m) for p, m in pts if 0.0 < p < 1.0]
                    weights = [1.0 / (p * (1.0 - p)) ** 2 for p, _ in pts]
                if not pts:
                    continue
                try:
                    fit = fit_parabola(pts, weights)
                except DataError:
                    continue
                w.writerow(
                    [design, estimator_id, f"{fit.a:.6f}", len(pts), f"{fit.residual_sum:.6g}"]
                )
    written.append(path)

    path = out / "diagnostics.csv"
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(
            ["design", "replication", "zero_frequency_members", "stalled_resamples", "burn_in_used", "variance_clamps"]
        )
        for d in report.diagnostics:
            w.writerow(
                [d.design, d.replication, d.zero_frequency_members, d.stalled_resamples, d.burn_in_used, d.variance_clamps]
            )
    written.append(path)
    return written
