"""Monte-Carlo data-generating processes and the replication harness.

Random numbers come from numpy's ``Philox`` counter-based generator.  Replicate
``r`` of a run with seed ``s`` uses ``SeedSequence(s, spawn_key=(r,))``, so each
replicate owns an independent stream and results do not depend on execution
order or worker count.
"""

from __future__ import annotations

import csv
import json
import math
import os
import time as _time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.special import expit
from scipy.stats import norm

from .data import COMPETING, SURVIVAL, make_dataset
from .errors import DataError, IVAHError, NegativeHazardError, NumericalError
from .first_stage import LinkKind, fit_first_stage

WORKERS_ENV = "IVAH_WORKERS"
MAX_FAILURE_FRACTION = 0.05
BISECTION_TOL = 1e-12

_COMMON = {"rho0": 1.0, "var_delta": 0.2, "var_eps": 0.1}

DEFAULTS = {
    (SURVIVAL, 1): {"alpha": [1.0, 1.0, 0.5], "beta": [1.0, 0.5, 1.5], "baseline": [10.5, 0.0],
                    "censor_rate": None, "binary": False},
    (SURVIVAL, 2): {"alpha": [0.25, 0.3, 0.2], "beta": [0.5, 0.2, 0.3], "baseline": [5.0, 5.0],
                    "censor_rate": 2.0, "binary": False},
    (SURVIVAL, 3): {"alpha": [1.0, 0.5, 1.0], "beta": [1.0, 0.5, 1.5], "baseline": [10.5, 0.0],
                    "censor_rate": 5.0, "binary": True},
    (COMPETING, 1): {"alpha": [1.5, 1.0, 0.7], "beta": [1.0, 0.5, 0.75], "baseline": [11.0, 0.0],
                     "beta2": [1.2, 1.0, 1.3], "lambda2": 15.0, "t0": 0.095,
                     "censor_rate": None, "binary": False},
    (COMPETING, 2): {"alpha": [1.0, 1.0, 0.5], "beta": [1.0, 0.5, 0.75], "baseline": [10.0, 5.0],
                     "beta2": [1.2, 1.0, 1.3], "lambda2": 15.0, "t0": 0.06,
                     "censor_rate": 1.0, "binary": False},
    (COMPETING, 3): {"alpha": [-1.0, 2.0, 1.0], "beta": [1.0, 0.5, 0.75], "baseline": [10.0, 0.0],
                     "beta2": [1.2, 1.0, 1.3], "lambda2": 15.0, "t0": 0.06,
                     "censor_rate": 25.0, "binary": True},
}


@dataclass(frozen=True)
class ScenarioConfig:
    """One simulation setting.

    ``overrides`` may replace any default parameter: ``alpha``, ``beta``
    (cause 1 in the competing setting), ``beta2``, ``lambda2``, ``baseline``
    as ``[a, b]`` for ``lambda0(t) = a + b t``, ``rho0``, ``var_delta``,
    ``var_eps``, ``censor_rate`` (``None`` for no censoring), ``t0`` and
    ``binary``.
    """

    setting: str
    scenario: int
    n: int
    reps: int = 1
    seed: int = 0
    overrides: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.setting not in (SURVIVAL, COMPETING):
            raise DataError(f"setting must be 'survival' or 'competing', got {self.setting!r}")
        if self.scenario not in (1, 2, 3):
            raise DataError(f"scenario must be 1, 2 or 3, got {self.scenario!r}")
        if int(self.n) < 8:
            raise DataError("n must be at least 8")
        if int(self.reps) < 1:
            raise DataError("reps must be at least 1")
        if not 0 <= int(self.seed) < 2 ** 64:
            raise DataError("seed must be a 64-bit nonnegative integer")
        known = set(_COMMON) | set(DEFAULTS[(self.setting, self.scenario)])
        unknown = set(self.overrides) - known
        if unknown:
            raise DataError(f"unknown override(s): {sorted(unknown)}")
        if self.params()["baseline"][1] < 0:
            raise DataError("baseline slope must be nonnegative")

    def params(self):
        p = dict(_COMMON)
        p.update(DEFAULTS[(self.setting, self.scenario)])
        p.update(self.overrides)
        return p

    @property
    def true_beta_e(self):
        return float(self.params()["beta"][0])

    @property
    def link(self):
        return LinkKind.LOGIT if self.params()["binary"] else LinkKind.IDENTITY

    def rng(self, rep):
        ss = np.random.SeedSequence(int(self.seed), spawn_key=(int(rep),))
        return np.random.Generator(np.random.Philox(ss))


def _covariates(p, n, rng):
    """``(x_i, x_o, x_e, x_u)`` for one sample."""
    a = np.asarray(p["alpha"], dtype=float)
    if p["binary"]:
        x_i = rng.binomial(1, 0.5, n).astype(float)
        x_o = rng.standard_normal(n)
        prob = expit(a[0] + a[1] * x_i + a[2] * x_o)
        x_e = (rng.random(n) < prob).astype(float)
        delta = x_e - prob
    else:
        x_i = rng.standard_normal(n)
        x_o = rng.standard_normal(n)
        delta = rng.normal(0.0, math.sqrt(p["var_delta"]), n)
        x_e = a[0] + a[1] * x_i + a[2] * x_o + delta
    x_u = p["rho0"] * delta + rng.normal(0.0, math.sqrt(p["var_eps"]), n)
    return x_i, x_o, x_e, x_u


def _linear_predictor(beta, x_e, x_o, x_u):
    b = np.asarray(beta, dtype=float)
    return b[0] * x_e + b[1] * x_o + b[2] * x_u


def _negative_hazard(mask, label, x_e, x_o, x_u):
    i = int(np.flatnonzero(mask)[0])
    cov = {"x_e": float(x_e[i]), "x_o": float(x_o[i]), "x_u": float(x_u[i])}
    raise NegativeHazardError(f"{label} is not positive for covariates {cov}", covariates=cov)


def _invert_quadratic(target, slope0, b):
    """Smallest ``t >= 0`` with ``slope0 t + b t^2 / 2 = target`` (cancellation-free form)."""
    return 2.0 * target / (slope0 + np.sqrt(slope0 ** 2 + 2.0 * b * target))


def _censor(t, rate, rng):
    n = t.size
    if rate is None:
        return t, np.ones(n, dtype=int)
    c = rng.exponential(1.0 / rate, n)
    return np.minimum(t, c), (t <= c).astype(int)


def generate_survival(config: ScenarioConfig, rng):
    """One survival sample under ``lambda0(t) + beta'(x_e, x_o, x_u)``."""
    if config.setting != SURVIVAL:
        raise DataError("generate_survival needs a survival config")
    p = config.params()
    n = int(config.n)
    x_i, x_o, x_e, x_u = _covariates(p, n, rng)
    a, b = p["baseline"]
    slope0 = a + _linear_predictor(p["beta"], x_e, x_o, x_u)
    if np.any(slope0 <= 0):
        _negative_hazard(slope0 <= 0, "total hazard at t = 0", x_e, x_o, x_u)
    t = _invert_quadratic(rng.standard_exponential(n), slope0, b)
    obs, status = _censor(t, p["censor_rate"], rng)
    return make_dataset(obs, status, x_e, x_i, x_o[:, None], confounder_names=("x_o",),
                        exposure_name="x_e", instrument_name="x_i")


def cause1_probability(p, eta1):
    """``P(J = 1 | X)`` for cause-1 linear predictor ``eta1``."""
    a, b = p["baseline"]
    t0 = p["t0"]
    return -np.expm1(-(a * t0 + 0.5 * b * t0 ** 2 + eta1 * t0))


def _bisect_cause1(target, slope0, b, t0):
    """Solve ``F(t | J = 1) = v`` on ``[0, t0]`` by bisection.

    ``target`` is ``-log(1 - v P1)``; the residual is measured on the
    ``F`` scale and driven below :data:`BISECTION_TOL`.
    """
    p1 = -np.expm1(-(slope0 * t0 + 0.5 * b * t0 ** 2))
    v = -np.expm1(-target) / p1
    lo = np.zeros_like(target)
    hi = np.full_like(target, t0)
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        f = -np.expm1(-(slope0 * mid + 0.5 * b * mid ** 2)) / p1
        below = f < v
        lo = np.where(below, mid, lo)
        hi = np.where(below, hi, mid)
        if np.all(hi - lo <= 4 * np.finfo(float).eps * t0):
            break
    t = 0.5 * (lo + hi)
    resid = np.abs(-np.expm1(-(slope0 * t + 0.5 * b * t ** 2)) / p1 - v)
    if np.any(resid >= BISECTION_TOL):
        raise NumericalError("bisection for the cause-1 event time did not reach tolerance")
    return t


def cause1_times(v, slope0, b, t0):
    """Inverse of ``F(t | J = 1)`` at ``v`` for hazard ``slope0 + b t`` truncated at ``t0``.

    Closed form for a constant baseline, bisection otherwise.
    """
    v = np.asarray(v, dtype=float)
    slope0 = np.broadcast_to(np.asarray(slope0, dtype=float), v.shape)
    p1 = -np.expm1(-(slope0 * t0 + 0.5 * b * t0 ** 2))
    target = -np.log1p(-v * p1)
    if b == 0:
        return target / slope0
    return _bisect_cause1(target, slope0, b, t0)


def cause2_times(v, a2, t0):
    """Inverse of ``F(t | J = 2)`` for constant hazard ``a2`` truncated at ``t0``."""
    v = np.asarray(v, dtype=float)
    a2 = np.broadcast_to(np.asarray(a2, dtype=float), v.shape)
    small = np.abs(a2 * t0) < 1e-12
    a2s = np.where(small, 1.0, a2)
    return np.where(small, v * t0, -np.log1p(v * np.expm1(-a2s * t0)) / a2s)


def generate_competing(config: ScenarioConfig, rng):
    """One competing-risks sample with both causes truncated at ``t0``."""
    if config.setting != COMPETING:
        raise DataError("generate_competing needs a competing config")
    p = config.params()
    n = int(config.n)
    t0 = float(p["t0"])
    x_i, x_o, x_e, x_u = _covariates(p, n, rng)
    a, b = p["baseline"]
    eta1 = _linear_predictor(p["beta"], x_e, x_o, x_u)
    bad = (a + eta1 <= 0) | (a + b * t0 + eta1 <= 0)
    if np.any(bad):
        _negative_hazard(bad, "cause-1 subdistribution hazard on [0, t0]", x_e, x_o, x_u)
    p1 = cause1_probability(p, eta1)
    if np.any((p1 <= 0) | (p1 >= 1)):
        _negative_hazard((p1 <= 0) | (p1 >= 1), "P(J = 1 | X) inside (0, 1)", x_e, x_o, x_u)
    j1 = rng.random(n) < p1
    v = rng.random(n)
    t1 = cause1_times(v, a + eta1, b, t0)
    t2 = cause2_times(v, p["lambda2"] + _linear_predictor(p["beta2"], x_e, x_o, x_u), t0)
    t = np.minimum(np.where(j1, t1, t2), t0)
    cause = np.where(j1, 1, 2)
    obs, status = _censor(t, p["censor_rate"], rng)
    cause = np.where(status == 1, cause, 0)
    return make_dataset(obs, status, x_e, x_i, x_o[:, None], cause=cause, mode=COMPETING,
                        confounder_names=("x_o",), horizon=t0, exposure_name="x_e",
                        instrument_name="x_i")


def generate(config: ScenarioConfig, rep=0):
    rng = config.rng(rep)
    if config.setting == SURVIVAL:
        return generate_survival(config, rng)
    return generate_competing(config, rng)


def run_replicate(config: ScenarioConfig, rep: int):
    """``(beta_e_hat, var_hat)`` for replicate ``rep``."""
    from .competing import fit_competing
    from .survival import fit_survival

    data = generate(config, rep)
    fs = fit_first_stage(data, config.link)
    if config.setting == SURVIVAL:
        fit = fit_survival(data, fs)
    else:
        fit = fit_competing(data, fs, cause_of_interest=1)
    return float(fit.beta[0]), float(fit.cov[0, 0])


def _run_chunk(args):
    config, reps = args
    out = []
    for r in reps:
        try:
            out.append((r, *run_replicate(config, r), None))
        except IVAHError as exc:
            out.append((r, math.nan, math.nan, f"{type(exc).__name__}: {exc}"))
    return out


@dataclass
class ReplicationReport:
    """Summary of the estimated exposure effect over replicates.

    ``bias`` is relative to the configured exposure coefficient.
    ``est_var`` is the mean of the estimated variances; ``coverage`` is the
    share of nominal 95% intervals containing the true value.  Statistics
    are over successful replicates; ``failures`` counts the others.
    """

    setting: str
    scenario: int
    n: int
    reps: int
    bias: float
    emp_var: float
    est_var: float
    coverage: float
    failures: int
    runtime: float = 0.0
    seed: int = 0
    estimates: list = field(default_factory=list, repr=False)
    variances: list = field(default_factory=list, repr=False)
    errors: list = field(default_factory=list, repr=False)

    CSV_FIELDS = ("setting", "scenario", "n", "reps", "bias", "emp_var", "est_var", "coverage",
                  "failures")

    @property
    def mc_se_bias(self):
        k = len([e for e in self.estimates if math.isfinite(e)])
        return math.sqrt(self.emp_var / k) if k else math.nan

    def csv_row(self):
        return {k: getattr(self, k) for k in self.CSV_FIELDS}

    def to_dict(self):
        d = asdict(self)
        return d


def _worker_count():
    raw = os.environ.get(WORKERS_ENV, "1")
    try:
        w = int(raw)
    except ValueError as exc:
        raise DataError(f"{WORKERS_ENV} must be an integer, got {raw!r}") from exc
    return max(1, w)


def run_replications(config: ScenarioConfig, workers=None, level=0.95) -> ReplicationReport:
    """Run ``config.reps`` independent replicates and summarize them.

    Raises :class:`NumericalError` if more than 5% of replicates fail.
    """
    start = _time.perf_counter()
    reps = list(range(int(config.reps)))
    workers = _worker_count() if workers is None else max(1, int(workers))
    if workers == 1 or len(reps) < 2:
        results = _run_chunk((config, reps))
    else:
        chunks = [(config, reps[i::workers]) for i in range(workers)]
        with ProcessPoolExecutor(max_workers=workers) as ex:
            results = [r for part in ex.map(_run_chunk, chunks) for r in part]
    results.sort(key=lambda r: r[0])
    est = np.array([r[1] for r in results])
    var = np.array([r[2] for r in results])
    errors = [(r[0], r[3]) for r in results if r[3] is not None]
    failures = len(errors)
    if failures > MAX_FAILURE_FRACTION * len(reps):
        detail = "; ".join(f"rep {i}: {msg}" for i, msg in errors[:5])
        raise NumericalError(f"{failures} of {len(reps)} replicates failed ({detail})")
    ok = np.isfinite(est)
    e, v = est[ok], var[ok]
    zq = norm.ppf(0.5 + level / 2.0)
    half = zq * np.sqrt(np.clip(v, 0.0, None))
    truth = config.true_beta_e
    covered = (e - half <= truth) & (truth <= e + half)
    return ReplicationReport(
        setting=config.setting, scenario=int(config.scenario), n=int(config.n),
        reps=int(config.reps),
        bias=float(np.mean(e) - truth),
        emp_var=float(np.var(e, ddof=1)) if e.size > 1 else 0.0,
        est_var=float(np.mean(v)),
        coverage=float(np.mean(covered)),
        failures=failures, runtime=_time.perf_counter() - start, seed=int(config.seed),
        estimates=est.tolist(), variances=var.tolist(), errors=[list(x) for x in errors],
    )


def write_report_csv(reports, path):
    """Table-style CSV; floats are written with ``repr`` so reruns are byte-identical."""
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=ReplicationReport.CSV_FIELDS)
        w.writeheader()
        for rep in reports:
            row = rep.csv_row()
            w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})


def write_report_json(reports, path):
    with open(path, "w") as fh:
        json.dump([r.to_dict() for r in reports], fh, indent=2)
        fh.write("\n")
