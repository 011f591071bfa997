import numpy as np
import pytest

import ivah.additive
import ivah.competing
import ivah.survival
from ivah.data import COMPETING, SURVIVAL, make_dataset

SCORE_TOL = 1e-8
EIG_TOL = 1e-10
# running totals over every second-stage fit made in this session
FIT_AUDIT = {"fits": 0, "max_score": 0.0, "min_eig": np.inf}


def check_fit(fit):
    """Score at the solution is zero and every sandwich piece is symmetric PSD."""
    score = float(np.max(np.abs(fit.score)))
    assert score < SCORE_TOL, f"estimating function not solved: {score:.3g}"
    mats = [fit.sigma1, fit.sigma2, fit.sandwich, fit.cov]
    if fit.sigma3 is not None:
        mats.append(fit.sigma3)
    eig = np.inf
    for m in mats:
        scale = max(1.0, float(np.max(np.abs(m))))
        assert np.max(np.abs(m - m.T)) <= 1e-12 * scale, "covariance piece is not symmetric"
        eig = min(eig, float(np.min(np.linalg.eigvalsh(m))))
    assert eig >= -EIG_TOL, f"covariance piece has eigenvalue {eig:.3g}"
    FIT_AUDIT["fits"] += 1
    FIT_AUDIT["max_score"] = max(FIT_AUDIT["max_score"], score)
    FIT_AUDIT["min_eig"] = min(FIT_AUDIT["min_eig"], eig)


@pytest.fixture(autouse=True, scope="session")
def _audit_every_fit():
    original = ivah.additive.estimate

    def audited(*args, **kwargs):
        fit = original(*args, **kwargs)
        check_fit(fit)
        return fit

    with pytest.MonkeyPatch.context() as mp:
        mp.setattr(ivah.survival, "estimate", audited)
        mp.setattr(ivah.competing, "estimate", audited)
        yield


def small_dataset(seed, competing=False, n=None, ties=True, extra_horizon=0.0):
    """Random small sample with optional tied times; always has a cause-1 event."""
    rng = np.random.default_rng(seed)
    n = int(rng.integers(6, 9)) if n is None else n
    t = rng.exponential(1.0, n) + 0.1
    if ties:
        t = np.round(t, 1) + 0.1
    status = (rng.random(n) < 0.7).astype(int)
    status[0] = 1
    cause = np.where(status == 1, rng.integers(1, 3, n), 0)
    cause[0] = 1
    x_i = rng.normal(size=n)
    x_o = rng.normal(size=n)
    x_e = x_i + 0.3 * x_o + rng.normal(size=n)
    return make_dataset(
        t, status, x_e, x_i, x_o, cause=cause if competing else None,
        mode=COMPETING if competing else SURVIVAL,
        horizon=float(t.max()) + extra_horizon,
    )


def medium_dataset(seed, competing=False, n=150, censor_rate=1.0, binary=False):
    rng = np.random.default_rng(seed)
    x_i = rng.normal(size=n)
    x_o = rng.normal(size=n)
    if binary:
        x_e = (rng.random(n) < 1 / (1 + np.exp(-(0.3 + x_i + 0.5 * x_o)))).astype(float)
        delta = x_e - 1 / (1 + np.exp(-(0.3 + x_i + 0.5 * x_o)))
    else:
        delta = rng.normal(0, 0.5, n)
        x_e = 1 + x_i + 0.5 * x_o + delta
    hz = 6 + 0.5 * x_e + 0.3 * x_o + delta + rng.normal(0, 0.2, n)
    t = rng.exponential(1 / np.clip(hz, 0.5, None))
    c = rng.exponential(1 / censor_rate, n) if censor_rate else np.full(n, np.inf)
    status = (t <= c).astype(int)
    cause = np.where(status == 1, rng.integers(1, 3, n), 0)
    return make_dataset(
        np.minimum(t, c), status, x_e, x_i, x_o, cause=cause if competing else None,
        mode=COMPETING if competing else SURVIVAL,
    )


@pytest.fixture
def survival_data():
    return medium_dataset(11)


@pytest.fixture
def competing_data():
    return medium_dataset(12, competing=True)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
