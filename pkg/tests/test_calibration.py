"""Estimated variances of baseline and prediction curves against Monte-Carlo spread."""

import numpy as np
import pytest

from ivah.competing import baseline_subdist_cov, fit_competing, predict_cif
from ivah.first_stage import fit_first_stage
from ivah.simulation import ScenarioConfig, generate
from ivah.survival import baseline_cumhaz_cov, fit_survival, predict_survival, regressor_row

REPS, N, SEED, TOL = 1000, 400, 5, 0.20
PROFILE = (1.5, 0.3, 0.2)


@pytest.mark.parametrize("setting,scenario", [
    ("survival", 1), ("survival", 2), ("competing", 1), ("competing", 2)])
def test_curve_variances_track_empirical_spread(setting, scenario):
    cfg = ScenarioConfig(setting, scenario, N, reps=REPS, seed=SEED)
    t = 0.05 if setting == "survival" else 0.04
    fit_fn, pred_fn, cov_fn = ((fit_survival, predict_survival, baseline_cumhaz_cov)
                               if setting == "survival" else
                               (fit_competing, predict_cif, baseline_subdist_cov))
    est, var, var_flip, base, bvar, bvar_flip = ([] for _ in range(6))
    for r in range(REPS):
        d = generate(cfg, r)
        f = fit_fn(d, fit_first_stage(d, cfg.link))
        xe, xi, xo = PROFILE
        curve = pred_fn(f, xe, xi, [xo], times=[t])
        z = regressor_row(f, xe, xi, [xo])
        C = f.zbar_integral(t)
        cross = 2.0 * (z * t - C) @ f.omega_inv @ f.D(t)
        s_raw = np.exp(-f.cumulative_hazard(t, z))
        est.append(curve.estimate[0])
        var.append(curve.variance[0])
        var_flip.append(curve.variance[0] - 2.0 * s_raw ** 2 * cross / f.n)
        bc = cov_fn(f, t, t)
        base.append(f.baseline(t))
        bvar.append(bc / f.n)
        bvar_flip.append((bc + 4.0 * C @ f.omega_inv @ f.D(t)) / f.n)
    emp_p, emp_b = np.var(est, ddof=1), np.var(base, ddof=1)
    print(f"{setting} {scenario} prediction: empirical {emp_p:.4g} implemented {np.mean(var):.4g} "
          f"flipped-cross {np.mean(var_flip):.4g}")
    print(f"{setting} {scenario} baseline: empirical {emp_b:.4g} implemented {np.mean(bvar):.4g} "
          f"flipped-cross {np.mean(bvar_flip):.4g}")
    assert abs(np.mean(var) / emp_p - 1) < TOL
    assert abs(np.mean(bvar) / emp_b - 1) < TOL
