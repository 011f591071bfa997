"""Brute-force reference implementations used by the tests.

Everything here loops over subjects and partition segments explicitly and
evaluates left-continuous processes at segment midpoints.  Nothing is shared
with the package's cumulative-sum formulas.
"""

import numpy as np


def km_censoring(time, status):
    """``G(t) = P(C >= t)`` as a Python closure (events leave before censorings at ties)."""
    time = np.asarray(time, float)
    status = np.asarray(status)
    ctimes = sorted(set(time[status == 0].tolist()))
    factors = []
    for s in ctimes:
        d = np.sum((time == s) & (status == 0))
        r = np.sum(time > s) + d
        factors.append((s, 1.0 - d / r))

    def G(t):
        out = 1.0
        for s, f in factors:
            if s < t:
                out *= f
        return out

    return G


class Oracle:
    """Second-stage quantities by explicit summation.

    Parameters
    ----------
    time, status, cause : arrays
    Z : (n, q) regressors
    xd : (n, r) first-stage rows times inverse-link derivative, or None
    theta : (r, r) first-stage covariance (sqrt-n scale), or None
    competing : bool
    cause_of_interest : int
    horizon : float or None
    """

    def __init__(self, time, status, Z, *, cause=None, xd=None, theta=None, competing=False,
                 cause_of_interest=1, horizon=None):
        self.time = np.asarray(time, float)
        self.status = np.asarray(status, int)
        self.Z = np.asarray(Z, float)
        self.n, self.q = self.Z.shape
        self.cause = self.status.copy() if cause is None else np.asarray(cause, int)
        self.competing = competing
        if competing:
            self.event = (self.status == 1) & (self.cause == cause_of_interest)
            self.G = km_censoring(self.time, self.status)
        else:
            self.event = self.status == 1
            self.G = lambda t: 1.0
        self.xd = None if xd is None else np.asarray(xd, float)
        self.theta = None if theta is None else np.asarray(theta, float)
        pts = sorted(set(self.time.tolist()))
        tau = max(pts) if horizon is None else float(horizon)
        if tau > pts[-1]:
            pts.append(tau)
        self.tau = tau
        self.edges = [0.0] + pts
        self.segs = [(self.edges[k], self.edges[k + 1]) for k in range(len(pts))]
        self._solve()

    # -- processes ------------------------------------------------------
    def Y(self, i, t):
        if self.competing:
            return 0.0 if (self.event[i] and self.time[i] < t) else 1.0
        return 1.0 if self.time[i] >= t else 0.0

    def w(self, i, t):
        if not self.competing or t <= self.time[i]:
            return 1.0
        if self.status[i] == 0:
            return 0.0
        return self.G(t) / self.G(self.time[i])

    def h(self, i, t):
        return self.w(i, t) * self.Y(i, t)

    def S0(self, t):
        return sum(self.h(i, t) for i in range(self.n))

    def zbar(self, t):
        """Left-continuous weighted mean; ``t`` must not be 0."""
        s0 = self.S0(t)
        if s0 > 0:
            return sum(self.h(i, t) * self.Z[i] for i in range(self.n)) / s0
        # carry the last defined value
        for a, b in reversed(self.segs):
            if b < t:
                mid = 0.5 * (a + b)
                if self.S0(mid) > 0:
                    return self.zbar(mid)
        return np.zeros(self.q)

    def _mid(self, a, b):
        return 0.5 * (a + b)

    def _segments_upto(self, t):
        for a, b in self.segs:
            if a >= t:
                break
            yield a, min(b, t)

    def event_points(self):
        return [i for i in range(self.n) if self.event[i]]

    # -- estimator ------------------------------------------------------
    def _solve(self):
        n, q = self.n, self.q
        omega = np.zeros((q, q))
        for a, b in self.segs:
            m = self._mid(a, b)
            zb = self.zbar(m)
            for i in range(n):
                d = self.Z[i] - zb
                omega += (b - a) * self.h(i, m) * np.outer(d, d)
        self.omega = omega / n
        num = np.zeros(q)
        sig1 = np.zeros((q, q))
        for i in self.event_points():
            d = self.Z[i] - self.zbar(self.time[i])
            num += d
            sig1 += np.outer(d, d)
        self.numerator = num
        self.sigma1 = sig1 / n
        self.beta = np.linalg.solve(self.omega * n, num)
        self.omega_inv = np.linalg.inv(self.omega)
        self.A = np.zeros((n, q))
        for i in range(n):
            for a, b in self.segs:
                m = self._mid(a, b)
                self.A[i] += (b - a) * self.h(i, m) * (self.Z[i] - self.zbar(m))
        if self.xd is not None:
            rho = self.beta[-1]
            self.psi = rho / n * sum(np.outer(self.A[i], self.xd[i]) for i in range(n))
            self.sigma2 = self.psi @ self.theta @ self.psi.T
        else:
            self.psi = None
            self.sigma2 = np.zeros((q, q))
        if self.competing:
            self.ctimes = [self.time[i] for i in range(n) if self.status[i] == 0]
            s3 = np.zeros((q, q))
            for c in self.ctimes:
                v = self.q_hat(c) / self.pi(c)
                s3 += np.outer(v, v)
            self.sigma3 = s3 / n
        else:
            self.ctimes = []
            self.sigma3 = np.zeros((q, q))
        mid = self.sigma1 + self.sigma2 + self.sigma3
        self.sandwich = self.omega_inv @ mid @ self.omega_inv
        self.cov = self.sandwich / n

    def U(self, beta):
        out = np.zeros(self.q)
        for i in self.event_points():
            out += self.Z[i] - self.zbar(self.time[i])
        for i in range(self.n):
            for a, b in self.segs:
                m = self._mid(a, b)
                out -= (b - a) * self.h(i, m) * (self.Z[i] - self.zbar(m)) * (self.Z[i] @ beta)
        return out / self.n

    def pi(self, t):
        return np.sum(self.time >= t) / self.n

    # -- baseline and its pieces ---------------------------------------
    def jump_part(self, t):
        return sum(1.0 / self.S0(self.time[i]) for i in self.event_points() if self.time[i] <= t)

    def C(self, t):
        out = np.zeros(self.q)
        for a, b in self._segments_upto(t):
            out += (b - a) * self.zbar(self._mid(a, b))
        return out

    def baseline(self, t):
        return self.jump_part(t) - self.beta @ self.C(t)

    def D(self, t):
        out = np.zeros(self.q)
        for i in self.event_points():
            if self.time[i] <= t:
                ti = self.time[i]
                out += (self.Z[i] - self.zbar(ti)) / self.S0(ti)
        return out

    def E(self, t):
        if self.xd is None:
            return np.zeros(0)
        out = np.zeros(self.xd.shape[1])
        for i in range(self.n):
            integ = 0.0
            for a, b in self._segments_upto(t):
                m = self._mid(a, b)
                s0 = self.S0(m)
                if s0 > 0:
                    integ += (b - a) * self.h(i, m) / s0
            out += self.xd[i] * integ
        return self.beta[-1] * out

    def mart(self, s):
        return self.n * sum(self.w(i, self.time[i]) ** 2 / self.S0(self.time[i]) ** 2
                            for i in self.event_points() if self.time[i] <= s)

    # -- residual processes --------------------------------------------
    def _dM_integral(self, i, lo, hi, weight, lo_closed=True):
        """``int weight(v) w_i(v) dM_i(v)`` over ``[lo, hi]`` (``(lo, hi]`` if not lo_closed)."""
        total = np.zeros(np.shape(weight(self._mid(*self.segs[0]))))
        jump_times = sorted(set(self.time[self.event].tolist()))
        for u in jump_times:
            inside = (u >= lo if lo_closed else u > lo) and u <= hi
            if not inside:
                continue
            hu = self.h(i, u)
            dn_i = 1.0 if (self.event[i] and self.time[i] == u) else 0.0
            dLam = sum(1.0 for j in self.event_points() if self.time[j] == u) / self.S0(u)
            total = total + weight(u) * self.w(i, u) * (dn_i - self.Y(i, u) * dLam)
            _ = hu
        for a, b in self.segs:
            a2, b2 = max(a, lo), min(b, hi)
            if b2 <= a2:
                continue
            m = self._mid(a2, b2)
            drift = self.beta @ self.Z[i] - self.beta @ self.zbar(m)
            total = total - (b2 - a2) * weight(m) * self.h(i, m) * drift
        return total

    def q_hat(self, c):
        out = np.zeros(self.q)
        for i in range(self.n):
            if self.time[i] < c:
                out += self._dM_integral(i, c, self.tau, lambda u, i=i: self.Z[i] - self.zbar(u))
        return -out / self.n

    def q_t(self, t, u):
        if u > t:
            return 0.0
        out = 0.0
        for i in range(self.n):
            if self.time[i] < u:
                out += self._dM_integral(i, u, t, lambda v: 1.0 / self.S0(v))
        return out / self.n

    def cens_term(self, t, s):
        return self.n * sum(self.q_t(t, c) * self.q_t(s, c) / self.pi(c) ** 2 for c in self.ctimes)

    def weighted_residual_total(self):
        return sum(self._dM_integral(i, 0.0, self.tau, lambda u: 1.0, lo_closed=False)
                   for i in range(self.n))

    # -- covariances ----------------------------------------------------
    def _eterm(self, t, s):
        if self.xd is None:
            return 0.0
        return self.E(t) @ self.theta @ self.E(s)

    def baseline_cov(self, t, s):
        Ct, Cs = self.C(t), self.C(s)
        Oi = self.omega_inv
        return (self.mart(min(s, t)) + Ct @ self.sandwich @ Cs + self._eterm(t, s)
                - Ct @ Oi @ self.D(s) - Cs @ Oi @ self.D(t) + self.cens_term(t, s))

    def predict(self, z, t):
        """``(S*(t), Var)`` with the prediction covariance as displayed (plus cross terms)."""
        z = np.asarray(z, float)

        def H(u):
            return self.baseline(u) + (self.beta @ z) * u

        def H_left(u):
            jumps = sum(1.0 / self.S0(self.time[i]) for i in self.event_points() if self.time[i] == u)
            return H(u) - jumps

        cands = [0.0, H(t)]
        for k in sorted(set(self.time.tolist())):
            if k <= t:
                cands += [H(k), H_left(k)]
        Hstar = max(cands)
        Gt = z * t - self.C(t)
        Oi = self.omega_inv
        brace = (self.mart(t) + Gt @ self.sandwich @ Gt + self._eterm(t, t)
                 + 2.0 * Gt @ Oi @ self.D(t) + self.cens_term(t, t))
        S = np.exp(-H(t))
        return np.exp(-Hstar), S ** 2 * brace / self.n, brace


def lin_ying(time, status, Z):
    """Classical additive hazards closed form by dense time loops (no weights, no IV)."""
    time = np.asarray(time, float)
    status = np.asarray(status)
    Z = np.asarray(Z, float)
    n, q = Z.shape
    pts = [0.0] + sorted(set(time.tolist()))
    A = np.zeros((q, q))
    b = np.zeros(q)
    for a, c in zip(pts[:-1], pts[1:]):
        risk = time >= c
        zb = Z[risk].mean(axis=0)
        for i in np.flatnonzero(risk):
            A += (c - a) * np.outer(Z[i] - zb, Z[i] - zb)
    for i in np.flatnonzero(status == 1):
        risk = time >= time[i]
        b += Z[i] - Z[risk].mean(axis=0)
    return np.linalg.solve(A, b)


def newton_logistic(X, y, iters=200):
    """Plain Newton-Raphson on the logistic log-likelihood with step halving."""
    X = np.asarray(X, float)
    y = np.asarray(y, float)
    beta = np.zeros(X.shape[1])

    def loglik(b):
        eta = X @ b
        return float(np.sum(y * eta - np.logaddexp(0.0, eta)))

    for _ in range(iters):
        mu = 1.0 / (1.0 + np.exp(-(X @ beta)))
        g = X.T @ (y - mu)
        Hm = X.T @ ((mu * (1 - mu))[:, None] * X)
        step = np.linalg.solve(Hm, g)
        t = 1.0
        while loglik(beta + t * step) < loglik(beta) - 1e-14 and t > 1e-8:
            t /= 2
        beta = beta + t * step
        if np.max(np.abs(g)) < 1e-13:
            break
    return beta
