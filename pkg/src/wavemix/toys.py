"""Exact finite-dimensional ground-truth models.

Gradient diffusions du = -b(u) dt + sqrt(eps) dW carry a closed-form
stationary density proportional to exp(-2A/eps) with A the potential of the
drift; the Ornstein-Uhlenbeck process and finite-state chains add exactly
solvable moments and eigenproblems.  Everything downstream that needs an
independent oracle anchors on these.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class GradientSDE:
    """Scalar gradient diffusion with polynomial drift b = A'.

    ``drift_coeffs`` are the coefficients of b in ascending powers of u,
    starting at u^0.
    """

    drift_coeffs: tuple[float, ...]
    name: str = "gradient_sde"

    def __post_init__(self):
        # potential consistency: A' = b checked on a dense grid
        u = np.linspace(-10, 10, 1000)
        dA = np.polyval(np.polyder(np.poly1d(self._poly_A())), u)
        if np.max(np.abs(dA - self.drift(u))) > 1e-10 * max(np.abs(self.drift(u)).max(), 1.0):
            raise AssertionError("potential is not an antiderivative of the drift")

    def _poly_A(self):
        b = list(self.drift_coeffs)
        A = [0.0] + [c / (k + 1) for k, c in enumerate(b)]
        return list(reversed(A))

    def drift(self, u):
        return np.polyval(list(reversed(self.drift_coeffs)), u)

    def potential(self, u):
        return np.polyval(self._poly_A(), u)

    def equilibria(self) -> tuple[np.ndarray, np.ndarray]:
        """Real roots of the drift with stability flags (b' > 0 is stable)."""
        roots = np.roots(list(reversed(self.drift_coeffs)))
        real = np.sort(roots[np.abs(roots.imag) < 1e-9].real)
        dedup = []
        for r in real:
            if not dedup or abs(r - dedup[-1]) > 1e-8:
                dedup.append(r)
        pts = np.array(dedup)
        dcoef = list(reversed([k * c for k, c in enumerate(self.drift_coeffs)][1:] or [0.0]))
        stable = np.polyval(dcoef, pts) > 0
        return pts, stable


@dataclass(frozen=True)
class OrnsteinUhlenbeck:
    """du = -theta u dt + sigma dW; stationary variance sigma^2/(2 theta)."""

    theta: float = 1.0
    sigma: float = 1.0
    name: str = "ou"

    def drift(self, u):
        return self.theta * np.asarray(u, float)

    def potential(self, u):
        return 0.5 * self.theta * np.asarray(u, float) ** 2

    @property
    def eps(self) -> float:
        return self.sigma ** 2

    @property
    def stationary_var(self) -> float:
        return self.sigma ** 2 / (2 * self.theta)

    def clt_variance(self, coeff: float = 1.0) -> float:
        """Green-Kubo variance of t^{-1/2} int psi(u) ds for psi(u) = coeff*u."""
        return coeff ** 2 * self.sigma ** 2 / self.theta ** 2

    def pressure(self, beta: float) -> float:
        """Exact growth rate of E exp(beta int u ds): beta^2 sigma^2 / (2 theta^2)."""
        return beta ** 2 * self.sigma ** 2 / (2 * self.theta ** 2)

    def rate_function(self, p: float) -> float:
        return self.theta ** 2 * p ** 2 / (2 * self.sigma ** 2)


def builtin_cubic() -> GradientSDE:
    """b(u) = u(u-1)(u-3): equilibria {0, 1, 3}, stable {0, 3}."""
    return GradientSDE((0.0, 3.0, -4.0, 1.0), name="cubic")


def builtin_doublewell() -> GradientSDE:
    """b(u) = u(u-1)(u-2): symmetric wells at 0 and 2, barrier 1/2 both ways."""
    return GradientSDE((0.0, 2.0, -3.0, 1.0), name="doublewell")


@dataclass
class ExactDensity:
    """Normalized small-noise stationary density  exp(-2A/eps) / Z.

    Measures of sets are also available in log space, which stays finite far
    below double-precision underflow of the density itself.
    """

    model: GradientSDE | OrnsteinUhlenbeck
    eps: float
    grid: np.ndarray
    density: np.ndarray
    log_weight: np.ndarray
    log_z: float

    def log_measure(self, lo: float, hi: float) -> float:
        """log of the probability of [lo, hi], evaluated stably."""
        lo = max(lo, float(self.grid[0]))
        hi = min(hi, float(self.grid[-1]))
        if hi <= lo:
            return -math.inf
        inner = (self.grid > lo) & (self.grid < hi)
        xs = np.concatenate([[lo], self.grid[inner], [hi]])
        ys = np.concatenate([[np.interp(lo, self.grid, self.log_weight)],
                             self.log_weight[inner],
                             [np.interp(hi, self.grid, self.log_weight)]])
        # trapezoid in log space: logsumexp of node values with cell weights
        w = np.zeros(xs.size)
        dx = np.diff(xs)
        w[:-1] += 0.5 * dx
        w[1:] += 0.5 * dx
        peak = ys.max()
        return float(peak + math.log(np.sum(w * np.exp(ys - peak))) - self.log_z)

    def measure(self, lo: float, hi: float) -> float:
        """Probability of [lo, hi] by quadrature, with interpolated endpoints."""
        lm = self.log_measure(lo, hi)
        return 0.0 if lm == -math.inf else math.exp(lm)

    def mass_near(self, points, eta: float) -> float:
        return float(sum(self.measure(p - eta, p + eta) for p in np.atleast_1d(points)))


def gradient_sde_exact_density(model, eps: float, n_grid: int = 200001) -> ExactDensity:
    """Quadrature-normalized density; rejects non-integrable potentials.

    The grid extends until the potential exceeds its minimum by 60*eps on
    both sides, which bounds the truncated mass by e^-120.
    """
    span = 1.0
    lo, hi = -span, span
    for _ in range(60):
        u = np.linspace(lo, hi, 20001)
        A = model.potential(u)
        amin = A.min()
        target = amin + 60.0 * eps + 10.0
        ok_lo = A[0] > target and model.drift(lo) < 0
        ok_hi = A[-1] > target and model.drift(hi) > 0
        if ok_lo and ok_hi:
            break
        if not ok_lo:
            lo *= 1.6
        if not ok_hi:
            hi *= 1.6
        if abs(lo) > 1e6 or hi > 1e6:
            raise ValueError("exp(-2A/eps) is not integrable on the real line")
    u = np.linspace(lo, hi, n_grid)
    logw = -2.0 * model.potential(u) / eps
    logw -= logw.max()
    w = np.exp(logw)
    Z = np.trapezoid(w, u)
    return ExactDensity(model, eps, u, w / Z, logw, math.log(Z))


def simulate_toy(model, eps: float | None, dt: float, horizon: float, seed: int,
                 n_traj: int = 1, u0: float | np.ndarray | None = None,
                 record_stride: int = 1,
                 integrand=None) -> tuple[np.ndarray, np.ndarray, np.ndarray | None]:
    """Euler-Maruyama paths of du = -b(u) dt + sqrt(eps) dW.

    Returns (times, paths, integrals) where paths has shape (n_traj, n_rec)
    and integrals is the running trapezoid integral of ``integrand(u)`` when
    one is supplied.
    """
    if eps is None:
        if not isinstance(model, OrnsteinUhlenbeck):
            raise ValueError("eps is required for gradient toys")
        eps = model.eps
    n_steps = max(int(round(horizon / dt)), 1)
    rec = list(range(0, n_steps + 1, record_stride))
    if rec[-1] != n_steps:
        rec.append(n_steps)
    rec_set = {s: i for i, s in enumerate(rec)}
    t = np.array(rec) * dt

    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy=seed)))
    if u0 is None:
        u = np.zeros(n_traj)
    else:
        u = np.broadcast_to(np.asarray(u0, float), (n_traj,)).copy()
    out = np.empty((n_traj, len(rec)))
    out[:, 0] = u
    acc = np.zeros(n_traj)
    prev = integrand(u) if integrand is not None else None
    out_int = np.empty((n_traj, len(rec))) if integrand is not None else None
    if out_int is not None:
        out_int[:, 0] = 0.0
    root_eps_dt = math.sqrt(eps * dt)
    chunk = 4096
    step = 0
    while step < n_steps:
        k = min(chunk, n_steps - step)
        xi = rng.standard_normal((k, n_traj))
        for s in range(k):
            u = u - model.drift(u) * dt + root_eps_dt * xi[s]
            if integrand is not None:
                cur = integrand(u)
                acc += 0.5 * dt * (prev + cur)
                prev = cur
            idx = rec_set.get(step + s + 1)
            if idx is not None:
                out[:, idx] = u
                if out_int is not None:
                    out_int[:, idx] = acc
        step += k
    if not np.isfinite(u).all():
        raise FloatingPointError("toy trajectory blew up; decrease dt")
    return t, out, out_int


def autocorrelation_time(path: np.ndarray, dt: float, max_lag: int = 2000) -> float:
    """Integrated autocorrelation time of a scalar series (in time units)."""
    x = np.asarray(path, float)
    x = x - x.mean()
    n = x.size
    max_lag = min(max_lag, n // 4)
    var = float(np.dot(x, x) / n)
    if var == 0:
        return dt
    tau = 0.5
    for lag in range(1, max_lag):
        c = float(np.dot(x[:-lag], x[lag:]) / (n - lag)) / var
        if c < 0.05:
            break
        tau += c
    return 2.0 * tau * dt


@dataclass
class DetailedBalanceReport:
    bins: np.ndarray
    log_ratio: np.ndarray
    expected: np.ndarray
    stderr: np.ndarray
    ok: bool


def detailed_balance_check(model, eps: float, path: np.ndarray,
                           n_bins: int = 8) -> DetailedBalanceReport:
    """Coarse-bin transition asymmetry against exp(-2 dA / eps).

    In stationarity, the conditional jump frequencies between adjacent bins
    satisfy P(i->j)/P(j->i) ~ pi_j/pi_i.
    """
    lo, hi = np.quantile(path, [0.01, 0.99])
    edges = np.linspace(lo, hi, n_bins + 1)
    idx = np.digitize(path, edges) - 1
    centers = 0.5 * (edges[1:] + edges[:-1])
    logr, expect, errs, bins = [], [], [], []
    for i in range(n_bins - 1):
        j = i + 1
        up = np.sum((idx[:-1] == i) & (idx[1:] == j))
        dn = np.sum((idx[:-1] == j) & (idx[1:] == i))
        ni = np.sum(idx == i)
        nj = np.sum(idx == j)
        if min(up, dn, ni, nj) < 25:
            continue
        val = math.log((up / ni) / (dn / nj))
        se = math.sqrt(1.0 / up + 1.0 / dn)
        target = -2.0 * (model.potential(centers[j]) - model.potential(centers[i])) / eps
        bins.append(centers[i])
        logr.append(val)
        expect.append(target)
        errs.append(se)
    bins, logr, expect, errs = map(np.array, (bins, logr, expect, errs))
    ok = bool(np.all(np.abs(logr - expect) <= 3 * errs + 0.05)) if bins.size else False
    return DetailedBalanceReport(bins, logr, expect, errs, ok)
