"""Time integration of the damped nonlinear wave equation with white noise.

The flow of  d^2u/dt^2 + gamma du/dt - Lap u + f(u) = h + noise  is advanced
by Strang splitting: each Fourier mode carries an exact half-step of the
damped-oscillator SDE (matrix exponential plus an exactly sampled Gaussian
stochastic convolution), the nonlinearity kicks the velocity explicitly over
the full step, and a second exact linear half-step closes the update.
Trajectories are deterministic functions of (seed, config); ensembles split
the master seed into per-trajectory counter-based streams.
"""

from __future__ import annotations

import hashlib
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.linalg import expm

from wavemix import stats
from wavemix.spectral import (
    Field,
    PhaseState,
    SpectralBasis,
    phase_norm_sq_arr,
    sobolev_phase_norm_sq_arr,
)


class BlowupError(RuntimeError):
    """A trajectory left the space of finite states; nothing is clamped."""


class Nonlinearity:
    """Pointwise nonlinear term f with primitive F normalized by F(0) = 0.

    Supported kinds: ``klein_gordon`` (f = |u|^rho u - lam u, rho in (0,2)),
    ``sine_gordon`` (f = sin u), and ``polynomial`` (coefficients of powers
    u^1..u^d).  ``nu`` is the dissipativity margin used in the configuration
    checks; it must stay below (lambda_1 ^ gamma)/8.
    """

    def __init__(self, kind: str, *, rho: float | None = None, lam: float = 0.0,
                 coeffs: Sequence[float] | None = None, nu: float = 0.01):
        self.kind = kind
        self.nu = float(nu)
        if nu < 0:
            raise ValueError("nu must be nonnegative")
        if kind == "klein_gordon":
            if rho is None or not 0.0 < rho < 2.0:
                raise ValueError(f"klein_gordon requires rho in (0, 2), got {rho}")
            self.rho = float(rho)
            self.lam = float(lam)
        elif kind == "sine_gordon":
            self.rho = 1.0
        elif kind == "polynomial":
            c = np.asarray(coeffs if coeffs is not None else [], dtype=float)
            self.coeffs = c
            self.rho = max(float(len(c)) - 1.0, 0.5)
        else:
            raise ValueError(f"unknown nonlinearity kind {kind!r}")

    @staticmethod
    def klein_gordon(rho: float, lam: float = 0.0, nu: float = 0.01) -> "Nonlinearity":
        return Nonlinearity("klein_gordon", rho=rho, lam=lam, nu=nu)

    @staticmethod
    def sine_gordon(nu: float = 0.01) -> "Nonlinearity":
        return Nonlinearity("sine_gordon", nu=nu)

    @staticmethod
    def polynomial(coeffs: Sequence[float], nu: float = 0.01) -> "Nonlinearity":
        return Nonlinearity("polynomial", coeffs=coeffs, nu=nu)

    @staticmethod
    def zero() -> "Nonlinearity":
        return Nonlinearity("polynomial", coeffs=[], nu=0.0)

    def f(self, u):
        u = np.asarray(u, float)
        if self.kind == "klein_gordon":
            return np.abs(u) ** self.rho * u - self.lam * u
        if self.kind == "sine_gordon":
            return np.sin(u)
        out = np.zeros_like(u)
        for k, c in enumerate(self.coeffs, start=1):
            out += c * u ** k
        return out

    def F(self, u):
        u = np.asarray(u, float)
        if self.kind == "klein_gordon":
            return np.abs(u) ** (self.rho + 2) / (self.rho + 2) - self.lam * u ** 2 / 2
        if self.kind == "sine_gordon":
            return 1.0 - np.cos(u)
        out = np.zeros_like(u)
        for k, c in enumerate(self.coeffs, start=1):
            out += c * u ** (k + 1) / (k + 1)
        return out

    def fprime(self, u):
        u = np.asarray(u, float)
        if self.kind == "klein_gordon":
            return (self.rho + 1) * np.abs(u) ** self.rho - self.lam
        if self.kind == "sine_gordon":
            return np.cos(u)
        out = np.zeros_like(u)
        for k, c in enumerate(self.coeffs, start=1):
            out += k * c * u ** (k - 1)
        return out

    def describe(self) -> str:
        if self.kind == "klein_gordon":
            return f"klein_gordon(rho={self.rho}, lam={self.lam})"
        if self.kind == "sine_gordon":
            return "sine_gordon"
        return f"polynomial({list(self.coeffs)})"


@dataclass(frozen=True)
class DissipativityReport:
    """Smallest admissible constants for the three lower bounds on (f, F).

    ``c_lower``:    F(u) >= -nu u^2 - C
    ``c_balance``:  f(u) u - F(u) >= -nu u^2 - C
    ``c_gradient``: F(u) >= C^{-1} |f'(u)|^{(rho+2)/rho} - nu u^2 - C
    A condition is violated when the needed constant keeps growing at the
    edge of the scan range (the certificate records where).
    """

    c_lower: float
    c_balance: float
    c_gradient: float
    ok: bool
    violations: tuple[str, ...]
    u_range: tuple[float, float]

    @property
    def c_max(self) -> float:
        return max(self.c_lower, self.c_balance, self.c_gradient)


def check_dissipativity(nl: Nonlinearity, u_max: float = 1e4,
                        n_points: int = 4001) -> DissipativityReport:
    """Scan the dissipativity inequalities on a symmetric log-spaced grid."""
    mags = np.logspace(-4, math.log10(u_max), n_points // 2)
    u = np.concatenate([-mags[::-1], [0.0], mags])
    f = nl.f(u)
    F = nl.F(u)
    nu = nl.nu

    need1 = -F - nu * u ** 2
    need2 = F - u * f - nu * u ** 2
    expo = (nl.rho + 2.0) / nl.rho
    g = np.abs(nl.fprime(u)) ** expo
    base = F + nu * u ** 2
    need3 = 0.5 * (-base + np.sqrt(base ** 2 + 4.0 * g))

    violations = []
    consts = []
    inner = np.abs(u) <= u_max / 10.0
    for name, need in (("lower", need1), ("balance", need2), ("gradient", need3)):
        c = float(max(need.max(), 0.0))
        consts.append(c)
        # A constant still growing through the last decade of the scan cannot
        # be certified finite.
        c_inner = float(max(need[inner].max(), 0.0))
        if c > 1.2 * max(c_inner, 1e-9):
            violations.append(name)
    return DissipativityReport(consts[0], consts[1], consts[2],
                               ok=not violations, violations=tuple(violations),
                               u_range=(float(u.min()), float(u.max())))


class NoiseModel:
    """Mode coefficients of the additive white-in-time noise.

    ``coeffs[j]`` multiplies the Brownian motion acting on the velocity of
    mode j+1.  The derived sums B = sum b_j^2 and B1 = sum lambda_j b_j^2
    enter every moment bound downstream.
    """

    def __init__(self, basis: SpectralBasis, coeffs, nondegenerate: bool = True):
        c = np.asarray(coeffs, dtype=float)
        if c.shape != (basis.mode_count,):
            raise ValueError("need one coefficient per retained mode")
        if np.any(c < 0):
            raise ValueError("noise coefficients must be nonnegative")
        if nondegenerate and np.any(c == 0):
            raise ValueError("non-degenerate noise requires all b_j > 0")
        self.basis = basis
        self.coeffs = c
        self.nondegenerate = bool(nondegenerate)

    @staticmethod
    def power_law(basis: SpectralBasis, amplitude: float = 0.25, q: float = 2.0,
                  cutoff: int | None = None) -> "NoiseModel":
        """b_j = amplitude * j^-q, optionally zeroed beyond ``cutoff`` modes.

        The decay rate must satisfy q > (d+2)/2 so that B1 stays summable as
        the truncation grows.
        """
        if q <= (basis.dim + 2) / 2:
            raise ValueError(
                f"decay q={q} too slow in dimension {basis.dim}: "
                f"B1 diverges unless q > {(basis.dim + 2) / 2}")
        j = np.arange(1, basis.mode_count + 1, dtype=float)
        c = amplitude * j ** (-q)
        if cutoff is not None:
            c[cutoff:] = 0.0
        return NoiseModel(basis, c, nondegenerate=cutoff is None)

    @property
    def B(self) -> float:
        return float(np.sum(self.coeffs ** 2))

    @property
    def B1(self) -> float:
        return float(np.sum(self.basis.eigenvalues * self.coeffs ** 2))

    @property
    def sup_b2(self) -> float:
        return float(np.max(self.coeffs ** 2))

    def cameron_martin_norm_sq(self, coeffs: np.ndarray) -> np.ndarray:
        """|v|^2 in the noise-weighted norm sum b_j^-2 (v, e_j)^2; inf if the
        control touches a degenerate mode."""
        c2 = np.asarray(coeffs, float) ** 2
        b2 = self.coeffs ** 2
        dead = b2 == 0
        out = np.sum(np.divide(c2, b2, out=np.zeros_like(c2), where=~dead), axis=-1)
        touched = np.any(c2[..., dead] > 0, axis=-1) if dead.any() else np.zeros(out.shape, bool)
        return np.where(touched, np.inf, out)


def default_alpha(gamma: float, lambda1: float) -> float:
    """Damping weight making d|y|^2/dt <= -alpha |y|^2 hold with margin."""
    return min(gamma / 4.0, lambda1 / (4.0 * gamma))


@dataclass(frozen=True)
class SimConfig:
    """Integration parameters; dt must respect the explicit-kick rule
    dt <= 0.5/sqrt(lambda_M) unless explicitly overridden."""

    basis: SpectralBasis
    gamma: float
    dt: float
    horizon: float
    seed: int
    eps: float = 1.0
    alpha: float | None = None
    h: Field | None = None
    stride: int = 1
    allow_large_dt: bool = False

    def __post_init__(self):
        if self.gamma <= 0:
            raise ValueError("gamma must be positive")
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.eps < 0:
            raise ValueError("eps must be nonnegative")
        limit = 0.5 / math.sqrt(self.basis.eigenvalues[-1])
        if self.dt > limit * (1 + 1e-12) and not self.allow_large_dt:
            raise ValueError(f"dt={self.dt} exceeds stability rule {limit:.3e}")
        if self.alpha is None:
            object.__setattr__(self, "alpha", default_alpha(
                self.gamma, float(self.basis.eigenvalues[0])))
        if self.h is not None and self.h.basis != self.basis:
            raise ValueError("forcing h lives on a different basis")

    @property
    def n_steps(self) -> int:
        return max(int(round(self.horizon / self.dt)), 1)

    def h_coeffs(self) -> np.ndarray:
        if self.h is None:
            return np.zeros(self.basis.mode_count)
        return self.h.coeffs

    def fingerprint(self) -> str:
        parts = [repr(self.basis.lengths), str(self.basis.mode_count),
                 f"{self.gamma!r}", f"{self.dt!r}", f"{self.horizon!r}",
                 str(self.seed), f"{self.eps!r}", f"{self.alpha!r}",
                 self.h_coeffs().tobytes().hex(), str(self.stride)]
        return hashlib.sha256("|".join(parts).encode()).hexdigest()[:16]


# --------------------------------------------------------------------------
# Exact linear step operators


def _van_loan_covariance(A: np.ndarray, tau: float) -> np.ndarray:
    """int_0^tau e^{As} Q e^{A^T s} ds for Q = diag(0, 1), batched over modes."""
    m = A.shape[0]
    Q = np.zeros((m, 2, 2))
    Q[:, 1, 1] = 1.0
    C = np.zeros((m, 4, 4))
    C[:, :2, :2] = -A
    C[:, :2, 2:] = Q
    C[:, 2:, 2:] = np.transpose(A, (0, 2, 1))
    E = expm(C * tau)
    F2 = E[:, 2:, 2:]
    G = E[:, :2, 2:]
    return np.transpose(F2, (0, 2, 1)) @ G


def _chol2x2(S: np.ndarray) -> np.ndarray:
    """Cholesky factors of stacked SPD 2x2 matrices; zero blocks stay zero."""
    a = S[:, 0, 0]
    c = S[:, 1, 0]
    b = S[:, 1, 1]
    L = np.zeros_like(S)
    pos = a > 0
    ra = np.sqrt(a[pos])
    L[pos, 0, 0] = ra
    L[pos, 1, 0] = c[pos] / ra
    L[pos, 1, 1] = np.sqrt(np.maximum(b[pos] - (c[pos] / ra) ** 2, 0.0))
    only_vel = (~pos) & (b > 0)
    L[only_vel, 1, 1] = np.sqrt(b[only_vel])
    return L


class LinearOps:
    """Per-mode half-step propagator and noise convolution factors."""

    def __init__(self, basis: SpectralBasis, gamma: float, eps: float,
                 noise: NoiseModel, dt: float):
        lam = basis.eigenvalues
        m = lam.size
        A = np.zeros((m, 2, 2))
        A[:, 0, 1] = 1.0
        A[:, 1, 0] = -lam
        A[:, 1, 1] = -gamma
        self.A = A
        self.P_half = expm(A * (dt / 2.0))
        sig2 = eps * noise.coeffs ** 2
        self.cov_half = sig2[:, None, None] * _van_loan_covariance(A, dt / 2.0)
        self.chol_half = _chol2x2(self.cov_half)
        self.sig2 = sig2
        self.dt = dt
        self.noisy = sig2 > 0

    def cov_inverse(self, j: int) -> np.ndarray:
        S = self.cov_half[j]
        det = S[0, 0] * S[1, 1] - S[0, 1] * S[1, 0]
        return np.array([[S[1, 1], -S[0, 1]], [-S[1, 0], S[0, 0]]]) / det


_OPS_CACHE: dict = {}


def linear_ops(cfg: SimConfig, noise: NoiseModel) -> LinearOps:
    key = (cfg.basis, cfg.gamma, cfg.eps, cfg.dt, noise.coeffs.tobytes())
    ops = _OPS_CACHE.get(key)
    if ops is None:
        ops = LinearOps(cfg.basis, cfg.gamma, cfg.eps, noise, cfg.dt)
        if len(_OPS_CACHE) > 32:
            _OPS_CACHE.clear()
        _OPS_CACHE[key] = ops
    return ops


def apply_modewise(mats: np.ndarray, states: np.ndarray) -> np.ndarray:
    """Apply per-mode 2x2 matrices to stacked states of shape (..., 2, M)."""
    return np.einsum("jab,...bj->...aj", mats, states)


def trajectory_streams(seed: int, n: int, offset: int = 0):
    """Counter-based per-trajectory generators split from the master seed."""
    return [np.random.Generator(np.random.Philox(
        np.random.SeedSequence(entropy=seed, spawn_key=(offset + i,))))
        for i in range(n)]


# --------------------------------------------------------------------------
# Batched trajectory engine


@dataclass
class FlowResult:
    """Recorded output of a batch of trajectories on a common time grid."""

    t: np.ndarray
    probes: dict[str, np.ndarray]      # name -> (n_traj, n_rec)
    integrals: dict[str, np.ndarray]   # running trapezoid integrals
    final_states: np.ndarray           # (n_traj, 2, M)
    states: np.ndarray | None          # (n_traj, n_rec, 2, M) when requested
    seed: int
    config_hash: str


@dataclass
class Trajectory:
    """Single sampled trajectory with enough metadata to replay its noise."""

    t: np.ndarray
    states: np.ndarray                 # (n_rec, 2, M)
    energy: np.ndarray
    cfg: SimConfig
    nl: Nonlinearity
    noise: NoiseModel
    y0: PhaseState
    integrals: dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def basis(self) -> SpectralBasis:
        return self.cfg.basis

    @property
    def alpha(self) -> float:
        return self.cfg.alpha

    def state_at(self, k: int) -> PhaseState:
        return PhaseState.from_coeffs(self.basis, self.states[k, 0], self.states[k, 1],
                                      self.cfg.alpha)

    def norm_h(self) -> np.ndarray:
        return np.sqrt(phase_norm_sq_arr(self.states, self.basis.eigenvalues,
                                         self.cfg.alpha))

    def norm_hs(self, s: float) -> np.ndarray:
        return np.sqrt(sobolev_phase_norm_sq_arr(self.states, self.basis.eigenvalues,
                                                 self.cfg.alpha, s))


def make_energy_fn(basis: SpectralBasis, nl: Nonlinearity, alpha: float) -> Callable:
    lam = basis.eigenvalues
    w = basis.weights
    E = basis.eigenfunctions

    def fn(states: np.ndarray) -> np.ndarray:
        pot = (nl.F(states[..., 0, :] @ E.T)) @ w
        return phase_norm_sq_arr(states, lam, alpha) + 2.0 * pot
    return fn


def make_kick_fn(basis: SpectralBasis, nl: Nonlinearity, h_coeffs: np.ndarray) -> Callable:
    """Velocity increment coefficients of -f(u)+h, evaluated pseudo-spectrally."""
    w = basis.weights
    E = basis.eigenfunctions

    def fn(pos_coeffs: np.ndarray) -> np.ndarray:
        vals = nl.f(pos_coeffs @ E.T)
        return -(vals * w) @ E + h_coeffs
    return fn


_CHUNK_STEPS = 256


def run_flow(cfg: SimConfig, nl: Nonlinearity, noise: NoiseModel, y0: PhaseState,
             *, n_traj: int = 1, probes: dict[str, Callable] | None = None,
             integrands: dict[str, Callable] | None = None,
             return_states: bool = False, seed_offset: int = 0,
             block_size: int = 128, threads: int = 1) -> FlowResult:
    """Advance ``n_traj`` independent trajectories from ``y0``.

    ``probes`` are evaluated at recorded times; ``integrands`` are accumulated
    by the trapezoid rule at every step and reported at recorded times.
    """
    probes = dict(probes or {})
    integrands = dict(integrands or {})
    ops = linear_ops(cfg, noise)
    kick = make_kick_fn(cfg.basis, nl, cfg.h_coeffs())
    n_steps = cfg.n_steps
    rec_steps = list(range(0, n_steps + 1, cfg.stride))
    if rec_steps[-1] != n_steps:
        rec_steps.append(n_steps)
    rec_set = {s: i for i, s in enumerate(rec_steps)}
    t_rec = np.array(rec_steps) * cfg.dt

    out_probes = {k: np.empty((n_traj, len(rec_steps))) for k in probes}
    out_ints = {k: np.empty((n_traj, len(rec_steps))) for k in integrands}
    finals = np.empty((n_traj, 2, cfg.basis.mode_count))
    all_states = (np.empty((n_traj, len(rec_steps), 2, cfg.basis.mode_count))
                  if return_states else None)

    y0_arr = y0.as_array()

    def run_block(lo: int, hi: int):
        nb = hi - lo
        states = np.broadcast_to(y0_arr, (nb,) + y0_arr.shape).copy()
        rngs = trajectory_streams(cfg.seed, nb, offset=seed_offset + lo)
        acc = {k: np.zeros(nb) for k in integrands}
        prev = {k: fn(states) for k, fn in integrands.items()}

        def record(step_idx: int):
            i = rec_set[step_idx]
            for k, fn in probes.items():
                out_probes[k][lo:hi, i] = fn(states)
            for k in integrands:
                out_ints[k][lo:hi, i] = acc[k]
            if all_states is not None:
                all_states[lo:hi, i] = states

        record(0)
        step = 0
        while step < n_steps:
            chunk = min(_CHUNK_STEPS, n_steps - step)
            normals = np.stack([r.standard_normal((chunk, 2, 2, cfg.basis.mode_count))
                                for r in rngs])
            for s in range(chunk):
                states = apply_modewise(ops.P_half, states)
                states += apply_modewise(ops.chol_half, normals[:, s, 0])
                states[:, 1, :] += cfg.dt * kick(states[:, 0, :])
                states = apply_modewise(ops.P_half, states)
                states += apply_modewise(ops.chol_half, normals[:, s, 1])
                step_now = step + s + 1
                for k, fn in integrands.items():
                    cur = fn(states)
                    acc[k] += 0.5 * cfg.dt * (prev[k] + cur)
                    prev[k] = cur
                if step_now in rec_set:
                    record(step_now)
            step += chunk
            if not np.isfinite(states).all():
                bad = np.where(~np.isfinite(states).reshape(nb, -1).any(axis=1))[0]
                raise BlowupError(
                    f"nonfinite state near t={step * cfg.dt:.4g} "
                    f"(trajectory offset {lo}, local index {bad[:4]})")
        finals[lo:hi] = states

    blocks = [(lo, min(lo + block_size, n_traj)) for lo in range(0, n_traj, block_size)]
    if threads > 1 and len(blocks) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(lambda b: run_block(*b), blocks))
    else:
        for b in blocks:
            run_block(*b)

    return FlowResult(t_rec, out_probes, out_ints, finals, all_states,
                      cfg.seed, cfg.fingerprint())


def simulate(cfg: SimConfig, nl: Nonlinearity, noise: NoiseModel,
             y0: PhaseState) -> Trajectory:
    """Single trajectory with recorded states, energies, and |y|_H^2 integral."""
    energy_fn = make_energy_fn(cfg.basis, nl, cfg.alpha)
    lam = cfg.basis.eigenvalues
    res = run_flow(cfg, nl, noise, y0, n_traj=1,
                   probes={"energy": energy_fn},
                   integrands={"normH2": lambda s: phase_norm_sq_arr(s, lam, cfg.alpha)},
                   return_states=True)
    return Trajectory(res.t, res.states[0], res.probes["energy"][0], cfg, nl, noise,
                      y0, integrals={k: v[0] for k, v in res.integrals.items()})


def step_stochastic(y: PhaseState, cfg: SimConfig, nl: Nonlinearity,
                    noise: NoiseModel, rng: np.random.Generator) -> PhaseState:
    """One Strang step; the two half-step convolutions are drawn from ``rng``."""
    ops = linear_ops(cfg, noise)
    kick = make_kick_fn(cfg.basis, nl, cfg.h_coeffs())
    s = y.as_array()[None]
    s = apply_modewise(ops.P_half, s)
    s += apply_modewise(ops.chol_half, rng.standard_normal(s.shape))
    s[:, 1, :] += cfg.dt * kick(s[:, 0, :])
    s = apply_modewise(ops.P_half, s)
    s += apply_modewise(ops.chol_half, rng.standard_normal(s.shape))
    if not np.isfinite(s).all():
        raise BlowupError("nonfinite state after one step")
    return PhaseState.from_coeffs(cfg.basis, s[0, 0], s[0, 1], cfg.alpha)


# --------------------------------------------------------------------------
# Diagnostics


@dataclass
class EnergyAudit:
    """Decay audit of an energy series against E(0) e^{-alpha t} + C."""

    t: np.ndarray
    series: np.ndarray
    c_fit: float
    decay: stats.LineFit | None
    k_fit: float

    @property
    def decay_rate(self) -> float:
        return -self.decay.slope if self.decay is not None else math.nan


def energy_audit(traj: Trajectory | Sequence[Trajectory], nl: Nonlinearity | None = None,
                 alpha: float | None = None) -> EnergyAudit:
    """Audit pathwise (single trajectory) or in the mean (list of trajectories)."""
    if isinstance(traj, Trajectory):
        t = traj.t
        series = traj.energy
        alpha = traj.cfg.alpha if alpha is None else alpha
        int_norm = traj.integrals.get("normH2")
    else:
        t = traj[0].t
        series = np.mean([tr.energy for tr in traj], axis=0)
        alpha = traj[0].cfg.alpha if alpha is None else alpha
        int_norm = np.mean([tr.integrals["normH2"] for tr in traj], axis=0)

    envelope = series[0] * np.exp(-alpha * t)
    c_fit = float(max(np.max(series - envelope), 0.0))
    resid = series - c_fit
    decay = None
    floor = max(abs(series).max() * 1e-12, 1e-300)
    try:
        decay = stats.log_decay_fit(t, resid, floor=floor)
    except ValueError:
        pass
    k_fit = 0.0
    if int_norm is not None and t.size > 1:
        with np.errstate(divide="ignore", invalid="ignore"):
            ratios = (series + 0.5 * alpha * int_norm - series[0]) / t
        k_fit = float(np.max(ratios[1:]))
    return EnergyAudit(t, series, c_fit, decay, k_fit)


@dataclass
class RegularitySplit:
    """u = v + z with v the linear flow on the same noise and z = u - v."""

    t: np.ndarray
    traj_u: np.ndarray        # (n_rec, 2, M)
    traj_v: np.ndarray
    v_norm_h: np.ndarray
    z_norm_hs: np.ndarray
    s: float


def regularity_split(cfg: SimConfig, nl: Nonlinearity, noise: NoiseModel,
                     y0: PhaseState, s: float | None = None) -> RegularitySplit:
    """Replay one noise path through the nonlinear and the linear equations."""
    if s is None:
        s = 0.5 * (1.0 - nl.rho / 2.0)
    ops = linear_ops(cfg, noise)
    kick_u = make_kick_fn(cfg.basis, nl, cfg.h_coeffs())
    h = cfg.h_coeffs()
    n_steps = cfg.n_steps
    rec = list(range(0, n_steps + 1, cfg.stride))
    if rec[-1] != n_steps:
        rec.append(n_steps)
    rec_set = {st: i for i, st in enumerate(rec)}
    lam = cfg.basis.eigenvalues

    states = np.broadcast_to(y0.as_array(), (2,) + y0.as_array().shape).copy()
    rng = trajectory_streams(cfg.seed, 1)[0]
    out_u = np.empty((len(rec), 2, cfg.basis.mode_count))
    out_v = np.empty_like(out_u)
    out_u[0], out_v[0] = states[0], states[1]
    for step in range(1, n_steps + 1):
        normals = rng.standard_normal((2, 2, cfg.basis.mode_count))
        states = apply_modewise(ops.P_half, states)
        states += apply_modewise(ops.chol_half, np.broadcast_to(normals[0], states.shape))
        states[0, 1, :] += cfg.dt * kick_u(states[0, 0, :][None])[0]
        states[1, 1, :] += cfg.dt * h
        states = apply_modewise(ops.P_half, states)
        states += apply_modewise(ops.chol_half, np.broadcast_to(normals[1], states.shape))
        if step in rec_set:
            i = rec_set[step]
            out_u[i], out_v[i] = states[0], states[1]
    if not np.isfinite(states).all():
        raise BlowupError("nonfinite state in regularity split")
    t = np.array(rec) * cfg.dt
    z = out_u - out_v
    return RegularitySplit(
        t, out_u, out_v,
        np.sqrt(phase_norm_sq_arr(out_v, lam, cfg.alpha)),
        np.sqrt(sobolev_phase_norm_sq_arr(z, lam, cfg.alpha, s)), s)


@dataclass
class ExpMomentReport:
    t: np.ndarray
    estimate: np.ndarray
    stderr: np.ndarray
    kappa: float
    c_fit: float
    bounded: bool
    tail_warning: bool


def exp_moment_probe(cfg: SimConfig, nl: Nonlinearity, noise: NoiseModel,
                     y0: PhaseState, kappa: float, n_traj: int = 200,
                     threads: int = 1) -> ExpMomentReport:
    """Monte Carlo estimate of E exp(kappa * E(y(t))) on the recording grid."""
    alpha = cfg.alpha
    b_eff = cfg.eps * noise.B
    if b_eff > 0 and kappa > alpha / (2.0 * b_eff) * (1 + 1e-9):
        raise ValueError(f"kappa={kappa} violates the smallness rule "
                         f"kappa <= alpha/(2 eps B) = {alpha / (2 * b_eff):.4g}")
    energy_fn = make_energy_fn(cfg.basis, nl, cfg.alpha)
    res = run_flow(cfg, nl, noise, y0, n_traj=n_traj,
                   probes={"energy": energy_fn}, threads=threads)
    weights = np.exp(kappa * res.probes["energy"])
    est, se = stats.mean_se(weights, axis=0)
    tail = any(stats.tail_dominated(weights[:, i]) for i in range(weights.shape[1]))
    envelope = est[0] * np.exp(-alpha * res.t)
    c_fit = float(max(np.max(est - envelope), 0.0))
    half = est[res.t > res.t[-1] / 2]
    bounded = bool(half.max() <= est.max() + 3 * se.max())
    return ExpMomentReport(res.t, est, se, kappa, c_fit, bounded, tail)


@dataclass(frozen=True)
class GrowthMonitor:
    """Thresholds of the growth functional F(t) = |E| + alpha int |E| ds.

    The stopping time triggers at the first sampled t with
    F(t) >= F(0) + (L + M) t + r.
    """

    L: float
    M_rate: float
    r: float
    alpha: float

    @staticmethod
    def from_constants(alpha: float, beta: float, k_fit: float,
                       c_diss: float) -> "GrowthMonitor":
        L = k_fit + 4.0 * alpha * c_diss
        return GrowthMonitor(L=L, M_rate=2.0 / beta, r=5.0 / beta + 4.0 * c_diss,
                             alpha=alpha)


def supermartingale_beta(alpha: float, eps: float, noise: NoiseModel) -> float:
    """Tail exponent beta = alpha / (8 sup_j (eps b_j^2))."""
    s = eps * noise.sup_b2
    return math.inf if s == 0 else alpha / (8.0 * s)


def growth_functional(t: np.ndarray, energy: np.ndarray, alpha: float) -> np.ndarray:
    """F(t) = |E(t)| + alpha * int_0^t |E(s)| ds along the last axis."""
    absE = np.abs(energy)
    return absE + alpha * stats.running_trapezoid(t, absE)


def stopping_time(t: np.ndarray, growth: np.ndarray, L: float, M_rate: float,
                  r: float) -> float:
    """First grid crossing of the growth threshold; inf when never crossed."""
    thresh = growth[..., :1] + (L + M_rate) * t + r
    hits = np.nonzero(growth >= thresh)[0]
    return float(t[hits[0]]) if hits.size else math.inf


@dataclass
class GrowthReport:
    t: np.ndarray
    taus: np.ndarray
    r_grid: np.ndarray
    exceedance: np.ndarray
    beta: float
    tail_fit: stats.LineFit | None


def growth_monitor(trajs_energy: np.ndarray, t: np.ndarray, monitor: GrowthMonitor,
                   beta: float, r_grid: np.ndarray | None = None) -> GrowthReport:
    """Exceedance statistics of the growth functional over an ensemble.

    ``trajs_energy`` has shape (n_traj, n_rec).  The exceedance frequency of
    sup_t (F(t) - L t) >= F(0) + r is tabulated on ``r_grid`` and its log is
    fitted against r; the slope estimates the supermartingale tail exponent.
    """
    F = growth_functional(t, trajs_energy, monitor.alpha)
    taus = np.array([stopping_time(t, F[i], monitor.L, monitor.M_rate, monitor.r)
                     for i in range(F.shape[0])])
    peaks = np.max(F - monitor.L * t - F[:, :1], axis=1)
    if r_grid is None:
        pos = peaks[peaks > 0]
        if pos.size >= 20:
            lo, hi = np.quantile(pos, [0.05, 0.95])
        else:
            lo, hi = 1e-3, 1.0
        if hi <= lo:
            hi = lo * 2 + 1e-6
        r_grid = np.linspace(lo, hi, 12)
    freq = np.array([(peaks >= r).mean() for r in r_grid])
    fit = None
    mask = freq * F.shape[0] >= 5
    if mask.sum() >= 3:
        fit = stats.line_fit(r_grid[mask], np.log(freq[mask]))
    return GrowthReport(t, taus, r_grid, freq, beta, fit)
