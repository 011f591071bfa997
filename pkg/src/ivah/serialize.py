"""JSON form of second-stage fits.

Floats are written by :mod:`json`, which uses ``repr`` and therefore
round-trips every value exactly; a fit restored with :func:`fit_from_dict`
predicts bit-identically to the in-memory fit.
"""

from __future__ import annotations

import json
import math

import numpy as np

from . import __version__
from .additive import SecondStageFit
from .competing import CompetingFit
from .data import COMPETING
from .errors import DataError
from .stepfun import StepFunction

FORMAT = "ivah-fit/1"
_MATRICES = ("omega", "omega_inv", "sigma1", "sigma2", "psi", "theta", "sandwich")


def _num(x):
    x = float(x)
    return x if math.isfinite(x) else None


def coefficient_table(fit: SecondStageFit):
    """Rows of name, estimate, SE, z statistic and two-sided normal p-value."""
    rows = []
    for name, b, se, z, p in zip(fit.names, fit.beta, fit.se, fit.zstat, fit.pvalues):
        rows.append({"name": name, "estimate": float(b), "se": float(se), "z": _num(z), "p_value": _num(p)})
    return rows


def fit_to_dict(fit: SecondStageFit) -> dict:
    jump = fit.curves["jump"]
    increments = np.diff(np.concatenate([[0.0], jump.values]))
    keep = increments != 0
    d = {
        "format": FORMAT,
        "version": __version__,
        "mode": fit.mode,
        "cause_of_interest": fit.cause_of_interest,
        "n": int(fit.n),
        "n_events": int(fit.n_events),
        "horizon": float(fit.horizon),
        "coefficients": coefficient_table(fit),
        "names": list(fit.names),
        "beta": fit.beta.tolist(),
        "cov": fit.cov.tolist(),
        "matrices": {k: np.asarray(getattr(fit, k)).tolist() for k in _MATRICES},
        "score_max_abs": float(np.max(np.abs(fit.score))) if fit.score is not None else None,
        "first_stage": fit.first_stage,
        "knots": fit.knots.tolist(),
        "baseline_jumps": {"times": jump.breaks[keep].tolist(), "jumps": increments[keep].tolist()},
        "curves": {k: v.to_dict() for k, v in fit.curves.items()},
    }
    if fit.sigma3 is not None:
        d["matrices"]["sigma3"] = fit.sigma3.tolist()
        d["sigma3_trace"] = float(np.trace(fit.sigma3))
        d["censoring"] = fit.censoring
        km = getattr(fit, "km", None)
        if km is not None:
            d["censoring_km"] = km.summary()
    return d


def fit_from_dict(d: dict) -> SecondStageFit:
    if d.get("format") != FORMAT:
        raise DataError(f"unsupported fit format {d.get('format')!r}; expected {FORMAT!r}")
    m = {k: np.asarray(v, dtype=float) for k, v in d["matrices"].items()}
    q = len(d["beta"])
    for k in ("psi", "theta"):
        if m[k].size == 0:
            m[k] = m[k].reshape((q, 0) if k == "psi" else (0, 0))
    kwargs = dict(
        names=tuple(d["names"]), beta=np.asarray(d["beta"], dtype=float),
        cov=np.asarray(d["cov"], dtype=float), omega=m["omega"], omega_inv=m["omega_inv"],
        sigma1=m["sigma1"], sigma2=m["sigma2"], psi=m["psi"], theta=m["theta"],
        sandwich=m["sandwich"], n=int(d["n"]), horizon=float(d["horizon"]),
        knots=np.asarray(d["knots"], dtype=float),
        curves={k: StepFunction.from_dict(v) for k, v in d["curves"].items()},
        first_stage=d.get("first_stage"), mode=d["mode"], n_events=int(d["n_events"]),
        sigma3=m.get("sigma3"), censoring=d.get("censoring"),
        cause_of_interest=d.get("cause_of_interest"),
    )
    cls = CompetingFit if d["mode"] == COMPETING else SecondStageFit
    return cls(**kwargs)


def dump_fit(fit: SecondStageFit, path):
    with open(path, "w") as fh:
        json.dump(fit_to_dict(fit), fh, indent=1)
        fh.write("\n")


def load_fit(path) -> SecondStageFit:
    try:
        with open(path) as fh:
            d = json.load(fh)
    except FileNotFoundError:
        raise DataError(f"file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: not valid JSON ({exc})") from None
    try:
        return fit_from_dict(d)
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, DataError):
            raise
        raise DataError(f"{path}: malformed fit file ({exc})") from None
