"""Monte Carlo comparison of the plain and EL-weighted estimators.

Data follow the two-equation model of :func:`elsem.sem_model.sem22_spec` with
independent exponential covariates and scale-mixture normal errors. Every
replication draws from its own stream
``numpy.random.Generator(PCG64(SeedSequence(seed, spawn_key=(rep,))))``, so a
study is reproducible regardless of how replications are scheduled.
"""
from __future__ import annotations

import csv
import io
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .constraints import SideInfoSpec
from .errors import ConfigError, ElsemError, StudyDegenerate
from .mdf_fit import DiscrepancyKind, fit_el, fit_plain
from .sem_model import DataMatrix, SemParams, SemSpec, sem22_spec

__all__ = [
    "gen_normal_mixture",
    "gen_biexp",
    "McConfig",
    "load_config",
    "RepRecord",
    "ParamSummary",
    "McReport",
    "rep_rng",
    "true_params",
    "simulate_data",
    "run_replication",
    "run_study",
    "render_report",
    "parse_report_csv",
    "render_replications",
    "summarize",
    "write_outputs",
    "REPORT_COLUMNS",
    "MAX_SKIP_RATE",
]

MAX_SKIP_RATE = 0.05

REPORT_COLUMNS = ("scenario", "param", "mean_bias", "mean_bias_el", "median_bias",
                  "median_bias_el", "mean_var", "mean_var_el", "r1", "median_var",
                  "median_var_el", "r2", "reps", "skipped")


# -- generators -----------------------------------------------------------------

def gen_normal_mixture(n: int, rng: np.random.Generator, weights=(0.9, 0.1),
                       variances=(1.0, 5.0), dim: int = 2) -> np.ndarray:
    """Rows from ``sum_k weights[k] N(0, variances[k] I)``.

    The component is drawn once per row, so the coordinates of a row share it.
    """
    weights = np.asarray(weights, dtype=float)
    if weights.min() < 0 or not math.isclose(weights.sum(), 1.0, abs_tol=1e-12):
        raise ValueError("mixture weights must be non-negative and sum to 1")
    comp = rng.choice(weights.size, size=n, p=weights)
    sd = np.sqrt(np.asarray(variances, dtype=float))[comp]
    return rng.standard_normal((n, dim)) * sd[:, None]


def _exp_scale(gamma: float, convention: str) -> float:
    if convention == "scale":
        return float(gamma)
    if convention == "rate":
        return 1.0 / float(gamma)
    raise ValueError(f"unknown exponential convention {convention!r}")


def gen_biexp(n: int, gamma1: float, gamma2: float, rng: np.random.Generator,
              convention: str = "scale") -> np.ndarray:
    """Two independent exponential columns.

    With ``convention="scale"`` column ``k`` has mean ``gamma_k``; with
    ``"rate"`` it has mean ``1/gamma_k``.
    """
    if gamma1 <= 0 or gamma2 <= 0:
        raise ValueError("exponential parameters must be positive")
    s = [_exp_scale(g, convention) for g in (gamma1, gamma2)]
    return np.column_stack([rng.exponential(s[0], n), rng.exponential(s[1], n)])


# -- configuration -------------------------------------------------------------

_MODEL_DEFAULT = {"beta": 1.0, "lambda1": 1.0, "lambda2": -1.0, "lambda3": 0.5}
_X_DEFAULT = {"kind": "biexp", "gamma": [1.0, 3.0], "convention": "scale"}
_EPS_DEFAULT = {"kind": "normal_mixture", "weights": [0.9, 0.1], "variances": [1.0, 5.0],
                "scale": 1.0}


def _merge(name: str, given, default: dict) -> dict:
    if given is None:
        return dict(default)
    if not isinstance(given, dict):
        raise ConfigError(f"{name} must be an object")
    unknown = set(given) - set(default)
    if unknown:
        raise ConfigError(f"unknown keys in {name}: {sorted(unknown)}")
    out = dict(default)
    out.update(given)
    return out


@dataclass(frozen=True)
class McConfig:
    """One simulation scenario.

    ``model`` holds the true coefficients (``beta``, ``lambda1..3``);
    ``x_dist`` the covariate law (``gamma``, ``convention``); ``eps_dist`` the
    error mixture (``weights``, ``variances`` and a ``scale`` multiplying the
    errors); ``side`` and ``discrepancy`` mirror :class:`SideInfoSpec` and
    :class:`DiscrepancyKind`. Known medians default to the exact covariate
    medians.
    """

    n: int = 100
    reps: int = 500
    seed: int = 0
    model: dict = field(default_factory=lambda: dict(_MODEL_DEFAULT))
    x_dist: dict = field(default_factory=lambda: dict(_X_DEFAULT))
    eps_dist: dict = field(default_factory=lambda: dict(_EPS_DEFAULT))
    side: dict = field(default_factory=lambda: {"kind": "medians"})
    discrepancy: dict = field(default_factory=lambda: {"variant": "ML"})
    fix_beta: bool = False

    def __post_init__(self):
        try:
            object.__setattr__(self, "n", int(self.n))
            object.__setattr__(self, "reps", int(self.reps))
            object.__setattr__(self, "seed", int(self.seed))
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"n, reps and seed must be integers: {exc}") from None
        object.__setattr__(self, "model", _merge("model", self.model, _MODEL_DEFAULT))
        object.__setattr__(self, "x_dist", _merge("x_dist", self.x_dist, _X_DEFAULT))
        object.__setattr__(self, "eps_dist", _merge("eps_dist", self.eps_dist, _EPS_DEFAULT))
        object.__setattr__(self, "fix_beta", bool(self.fix_beta))
        if self.reps < 1:
            raise ConfigError("reps must be at least 1")
        if self.n <= 4:
            raise ConfigError("n must exceed the number of variables (4)")
        if self.seed < 0 or self.seed >= 2 ** 64:
            raise ConfigError("seed must be a 64-bit unsigned integer")
        if self.x_dist["kind"] != "biexp" or len(self.x_dist["gamma"]) != 2:
            raise ConfigError("x_dist must be biexp with two parameters")
        if self.x_dist["convention"] not in ("scale", "rate"):
            raise ConfigError("x_dist.convention must be 'scale' or 'rate'")
        if self.eps_dist["kind"] != "normal_mixture":
            raise ConfigError("eps_dist must be normal_mixture")
        w = np.asarray(self.eps_dist["weights"], dtype=float)
        if w.shape != np.asarray(self.eps_dist["variances"]).shape or not math.isclose(
                w.sum(), 1.0, abs_tol=1e-12) or w.min() < 0:
            raise ConfigError("mixture weights must be non-negative, sum to 1 and "
                              "match the variances")
        try:
            side = self.side_spec
            self.discrepancy_kind
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from None
        if side.kind == "independence" and side.m ** 2 >= self.n - 1:
            raise ConfigError(f"m**2 = {side.m ** 2} constraints need n > m**2 + 1")

    @classmethod
    def from_dict(cls, d: dict) -> "McConfig":
        if not isinstance(d, dict):
            raise ConfigError("a scenario must be an object")
        allowed = {f.name for f in fields(cls)}
        unknown = set(d) - allowed
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)

    @property
    def spec(self) -> SemSpec:
        return sem22_spec(fix_beta=self.fix_beta, beta=self.model["beta"])

    @property
    def exp_scales(self) -> tuple:
        return tuple(_exp_scale(g, self.x_dist["convention"]) for g in self.x_dist["gamma"])

    @property
    def side_spec(self) -> SideInfoSpec:
        side = dict(self.side)
        unknown = set(side) - {"kind", "m", "a", "medians"}
        if unknown:
            raise ConfigError(f"unknown keys in side: {sorted(unknown)}")
        if side.get("kind", "independence") == "medians" and side.get("medians") is None:
            side["medians"] = [s * math.log(2.0) for s in self.exp_scales]
        return SideInfoSpec(**side)

    @property
    def discrepancy_kind(self) -> DiscrepancyKind:
        unknown = set(self.discrepancy) - {"variant", "gls_weight"}
        if unknown:
            raise ConfigError(f"unknown keys in discrepancy: {sorted(unknown)}")
        return DiscrepancyKind(**self.discrepancy)

    @property
    def scenario(self) -> str:
        """Label used in reports: ``m=3`` or ``(2,4)``."""
        if self.side.get("kind") == "independence":
            return f"m={int(self.side.get('m', 1))}"
        return "(" + ",".join(f"{g:g}" for g in self.x_dist["gamma"]) + ")"


def load_config(source) -> list[McConfig]:
    """Read scenarios from a JSON file path or JSON text (one object or a list)."""
    try:
        text = source
        if not str(source).lstrip().startswith(("{", "[")):
            text = Path(source).read_text()
        doc = json.loads(text)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config: {exc}") from None
    items = doc if isinstance(doc, list) else [doc]
    if not items:
        raise ConfigError("config holds no scenarios")
    return [McConfig.from_dict(item) for item in items]


# -- replications ---------------------------------------------------------------

def rep_rng(seed: int, rep: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(rep,))))


def true_params(cfg: McConfig) -> SemParams:
    """Parameters implied by the generating design (error and covariate variances included)."""
    spec = cfg.spec
    m = cfg.model
    e = cfg.eps_dist
    var_eps = float(np.dot(e["weights"], e["variances"])) * e["scale"] ** 2
    B = np.array([[0.0, 0.0], [m["beta"], 0.0]])
    G = np.array([[0.0, m["lambda1"]], [m["lambda3"], m["lambda2"]]])
    Phi = np.diag(np.square(cfg.exp_scales))
    return SemParams(spec, spec.pack(B, G, np.diag([var_eps, var_eps]), Phi))


def simulate_data(cfg: McConfig, rng: np.random.Generator) -> DataMatrix:
    """One sample of size ``cfg.n`` from the recursive model."""
    g1, g2 = cfg.x_dist["gamma"]
    X = gen_biexp(cfg.n, g1, g2, rng, cfg.x_dist["convention"])
    e = cfg.eps_dist
    E = gen_normal_mixture(cfg.n, rng, e["weights"], e["variances"]) * e["scale"]
    B, G, _, _ = true_params(cfg).matrices
    Y = np.linalg.solve(np.eye(2) - B, (X @ G.T + E).T).T
    return DataMatrix.from_blocks(Y, X)


@dataclass(frozen=True)
class RepRecord:
    rep: int
    theta_plain: Optional[np.ndarray]
    theta_el: Optional[np.ndarray]
    skipped_reason: Optional[str] = None

    @property
    def skipped(self) -> bool:
        return self.skipped_reason is not None

    def __eq__(self, other):
        if not isinstance(other, RepRecord):
            return NotImplemented
        same = lambda a, b: (a is None and b is None) or (  # noqa: E731
            a is not None and b is not None and np.array_equal(a, b))
        return (self.rep == other.rep and self.skipped_reason == other.skipped_reason
                and same(self.theta_plain, other.theta_plain)
                and same(self.theta_el, other.theta_el))


def run_replication(cfg: McConfig, rep: int) -> RepRecord:
    """Simulate one data set and fit both estimators; failures become skip reasons."""
    data = simulate_data(cfg, rep_rng(cfg.seed, rep))
    spec = cfg.spec
    kind = cfg.discrepancy_kind
    try:
        plain = fit_plain(data, spec, kind)
    except ElsemError as exc:
        return RepRecord(rep, None, None, f"plain: {type(exc).__name__}: {exc}")
    try:
        el = fit_el(data, spec, kind, side=cfg.side_spec)
    except ElsemError as exc:
        return RepRecord(rep, plain.theta_hat.theta, None, f"el: {type(exc).__name__}: {exc}")
    if el.skipped:
        return RepRecord(rep, plain.theta_hat.theta, None, f"el: {el.skipped_reason}")
    return RepRecord(rep, plain.theta_hat.theta, el.theta_hat.theta)


def _run_one(args):
    cfg, rep = args
    return run_replication(cfg, rep)


# -- aggregation ------------------------------------------------------------------

@dataclass(frozen=True)
class ParamSummary:
    param: str
    mean_bias: float
    mean_bias_el: float
    median_bias: float
    median_bias_el: float
    mean_var: float
    mean_var_el: float
    r1: float
    median_var: float
    median_var_el: float
    r2: float


@dataclass(frozen=True)
class McReport:
    """Per-parameter summaries of one scenario.

    ``records`` (not part of equality or the CSV codec) keeps the replications.
    """

    scenario: str
    params: tuple
    reps: int
    skipped: int
    records: tuple = field(default=(), compare=False, repr=False)
    param_names: tuple = field(default=(), compare=False, repr=False)

    def row(self, name: str) -> ParamSummary:
        for p in self.params:
            if p.param == name:
                return p
        raise KeyError(name)

    def r1(self, name: str) -> float:
        return self.row(name).r1


def _per_rep_variance(est: np.ndarray) -> np.ndarray:
    """``(theta_r - mean)^2 R/(R-1)``; their mean is the sample variance."""
    R = est.shape[0]
    if R < 2:
        return np.full(est.shape, np.nan)
    return (est - est.mean(axis=0)) ** 2 * R / (R - 1)


def _ratio(a: float, b: float) -> float:
    return a / b if np.isfinite(a) and np.isfinite(b) and b > 0 else float("nan")


def summarize(cfg: McConfig, records: Sequence[RepRecord]) -> McReport:
    records = sorted(records, key=lambda r: r.rep)
    ok = [r for r in records if not r.skipped]
    skipped = len(records) - len(ok)
    if not ok:
        raise StudyDegenerate(f"all {len(records)} replications were skipped; first reason: "
                              f"{records[0].skipped_reason if records else 'none'}")
    rate = skipped / len(records)
    if rate >= MAX_SKIP_RATE:
        reasons = sorted({r.skipped_reason for r in records if r.skipped})
        raise StudyDegenerate(f"{skipped}/{len(records)} replications skipped "
                              f"({rate:.1%}); reasons: {reasons[:3]}")
    spec = cfg.spec
    truth = true_params(cfg).theta
    P = np.array([r.theta_plain for r in ok])
    E = np.array([r.theta_el for r in ok])
    vp, ve = _per_rep_variance(P), _per_rep_variance(E)
    names = spec.param_names
    rows = []
    for k, f in enumerate(spec.free):
        name = f[3]
        mv, mve = float(np.mean(vp[:, k])), float(np.mean(ve[:, k]))
        dv, dve = float(np.median(vp[:, k])), float(np.median(ve[:, k]))
        rows.append(ParamSummary(
            name,
            float(np.mean(P[:, k] - truth[k])), float(np.mean(E[:, k] - truth[k])),
            float(np.median(P[:, k] - truth[k])), float(np.median(E[:, k] - truth[k])),
            mv, mve, _ratio(mve, mv), dv, dve, _ratio(dve, dv)))
    assert [r.param for r in rows] == names[:len(rows)]
    return McReport(cfg.scenario, tuple(rows), len(records), skipped, tuple(records),
                    tuple(names))


def run_study(cfg: McConfig, threads: int = 1) -> McReport:
    """Run ``cfg.reps`` replications on ``threads`` worker processes and summarise.

    Raises :class:`StudyDegenerate` when every replication, or at least 5% of
    them, had to be skipped.
    """
    jobs = [(cfg, rep) for rep in range(cfg.reps)]
    if threads <= 1:
        records = [_run_one(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            records = list(pool.map(_run_one, jobs, chunksize=max(1, len(jobs) // (4 * threads))))
    return summarize(cfg, records)


# -- output -----------------------------------------------------------------------

def _fmt(x) -> str:
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, str):
        return x
    x = float(x)
    return "NA" if math.isnan(x) else repr(x)


def render_report(reports, fmt: str = "csv") -> str:
    """Render one or more reports as CSV (exact values) or a markdown table."""
    if isinstance(reports, McReport):
        reports = [reports]
    rows = []
    for rep in reports:
        for p in rep.params:
            rows.append([rep.scenario] + [getattr(p, c) for c in REPORT_COLUMNS[1:12]]
                        + [rep.reps, rep.skipped])
    if fmt == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(REPORT_COLUMNS)
        for r in rows:
            w.writerow([_fmt(v) for v in r])
        return buf.getvalue()
    if fmt == "markdown":
        lines = ["| " + " | ".join(REPORT_COLUMNS) + " |",
                 "|" + "|".join("---" for _ in REPORT_COLUMNS) + "|"]
        for r in rows:
            cells = [r[0], r[1]] + [("NA" if math.isnan(v) else f"{v:.4f}") for v in r[2:12]]
            cells += [str(r[12]), str(r[13])]
            lines.append("| " + " | ".join(cells) + " |")
        return "\n".join(lines) + "\n"
    raise ValueError(f"unknown format {fmt!r}")


def parse_report_csv(text: str) -> list[McReport]:
    """Inverse of ``render_report(..., "csv")``."""
    reader = csv.reader(io.StringIO(text))
    header = next(reader, None)
    if header is None or tuple(header) != REPORT_COLUMNS:
        raise ValueError("not a report CSV")
    order: list[str] = []
    groups: dict = {}
    for row in reader:
        if not row:
            continue
        scen = row[0]
        if scen not in groups:
            order.append(scen)
            groups[scen] = {"params": [], "reps": int(row[12]), "skipped": int(row[13])}
        vals = [float("nan") if v == "NA" else float(v) for v in row[2:12]]
        groups[scen]["params"].append(ParamSummary(row[1], *vals))
    return [McReport(s, tuple(groups[s]["params"]), groups[s]["reps"], groups[s]["skipped"])
            for s in order]


def render_replications(reports) -> str:
    """One CSV row per replication, estimator and parameter."""
    if isinstance(reports, McReport):
        reports = [reports]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["scenario", "rep", "estimator", "param", "estimate", "skipped_reason"])
    for rep in reports:
        for rec in rep.records:
            for est, theta in (("plain", rec.theta_plain), ("el", rec.theta_el)):
                if theta is None:
                    w.writerow([rep.scenario, rec.rep, est, "", "NA", rec.skipped_reason or ""])
                    continue
                for name, v in zip(rep.param_names, theta):
                    w.writerow([rep.scenario, rec.rep, est, name, _fmt(v),
                                rec.skipped_reason or ""])
    return buf.getvalue()


def write_outputs(reports, out_dir) -> tuple[Path, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rp = out / "report.csv"
    rp.write_text(render_report(reports, "csv"))
    rr = out / "replications.csv"
    rr.write_text(render_replications(reports))
    return rp, rr
