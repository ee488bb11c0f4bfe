"""Dirichlet-Laplacian eigenbasis on boxes, spectral fields, and phase-space norms.

Everything downstream works in the coordinates of this basis: a scalar field
is a coefficient vector, a phase-space point is a pair of coefficient vectors
(position, velocity), and nonlinear terms are evaluated pseudo-spectrally on
an oversampled collocation grid.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from functools import cached_property

import numpy as np

# Oversampling factor of the collocation grid relative to the retained modes.
# A factor 4 keeps products up to degree 7 of retained modes alias-free under
# the trapezoid rule in the sine basis.
GRID_FACTOR = 4


class BasisMismatchError(ValueError):
    """Two spectral objects built on different bases were combined."""


@dataclass(frozen=True)
class SpectralBasis:
    """Sine eigenbasis of the Dirichlet Laplacian on (0, L) or (0, L1) x (0, L2).

    Attributes
    ----------
    lengths : tuple of float
        Side lengths; one entry for an interval, two for a rectangle.
    mode_count : int
        Total number of retained modes M, sorted by ascending eigenvalue.
    """

    lengths: tuple[float, ...]
    mode_count: int

    def __post_init__(self):
        if self.mode_count < 1:
            raise ValueError("mode_count must be >= 1")
        if len(self.lengths) not in (1, 2):
            raise ValueError("only 1D intervals and 2D rectangles are supported")
        if any(L <= 0 for L in self.lengths):
            raise ValueError("domain lengths must be positive")

    @property
    def dim(self) -> int:
        return len(self.lengths)

    @property
    def volume(self) -> float:
        return float(np.prod(self.lengths))

    @cached_property
    def _mode_indices(self) -> np.ndarray:
        """Integer index tuples of the retained modes, ascending eigenvalue."""
        if self.dim == 1:
            return np.arange(1, self.mode_count + 1)[:, None]
        k = int(np.ceil(np.sqrt(self.mode_count)))
        # Enlarge until the k x k tensor block certainly contains the M
        # smallest eigenvalues (anisotropic domains can push low modes out).
        while True:
            jj = np.stack(np.meshgrid(np.arange(1, k + 1), np.arange(1, k + 1),
                                      indexing="ij"), axis=-1).reshape(-1, 2)
            lams = ((jj[:, 0] * np.pi / self.lengths[0]) ** 2
                    + (jj[:, 1] * np.pi / self.lengths[1]) ** 2)
            order = np.lexsort((jj[:, 1], jj[:, 0], lams))
            edge = (np.pi * min(self.lengths) / max(self.lengths)) ** 2
            if lams[order[self.mode_count - 1]] <= ((k + 1) * np.pi / max(self.lengths)) ** 2 + edge:
                return jj[order[:self.mode_count]]
            k += 2

    @cached_property
    def eigenvalues(self) -> np.ndarray:
        """Dirichlet eigenvalues lambda_j, ascending, shape (M,)."""
        jj = self._mode_indices
        lam = np.zeros(self.mode_count)
        for d, L in enumerate(self.lengths):
            lam += (jj[:, d] * np.pi / L) ** 2
        return lam

    @cached_property
    def _grid_1d(self) -> list[np.ndarray]:
        n = GRID_FACTOR * self._modes_per_dim
        return [np.linspace(0.0, L, n + 1) for L in self.lengths]

    @property
    def _modes_per_dim(self) -> int:
        if self.dim == 1:
            return self.mode_count
        return int(self._mode_indices.max())

    @cached_property
    def nodes(self) -> np.ndarray:
        """Collocation nodes, shape (n_nodes, dim); includes the boundary."""
        grids = np.meshgrid(*self._grid_1d, indexing="ij")
        return np.stack([g.ravel() for g in grids], axis=-1)

    @cached_property
    def weights(self) -> np.ndarray:
        """Composite-trapezoid quadrature weights matching ``nodes``."""
        ws = []
        for x in self._grid_1d:
            h = x[1] - x[0]
            w = np.full(x.size, h)
            w[0] = w[-1] = h / 2
            ws.append(w)
        if self.dim == 1:
            return ws[0]
        return np.multiply.outer(ws[0], ws[1]).ravel()

    @cached_property
    def eigenfunctions(self) -> np.ndarray:
        """Sampled orthonormal eigenfunctions, shape (n_nodes, M)."""
        cols = []
        for j in self._mode_indices:
            vals = np.ones(len(self.nodes))
            for d, L in enumerate(self.lengths):
                vals = vals * np.sqrt(2.0 / L) * np.sin(j[d] * np.pi * self.nodes[:, d] / L)
            cols.append(vals)
        return np.stack(cols, axis=-1)

    def synthesize(self, coeffs: np.ndarray) -> np.ndarray:
        """Grid values of the field with the given coefficients (batched on the left)."""
        return coeffs @ self.eigenfunctions.T

    def analyze(self, values: np.ndarray) -> np.ndarray:
        """Coefficients of grid values, projected onto the retained modes."""
        return (values * self.weights) @ self.eigenfunctions

    def quadrature(self, values: np.ndarray) -> np.ndarray:
        """Integral over the domain of grid values (batched on the left)."""
        return values @ self.weights


def eigenpairs(basis: SpectralBasis) -> tuple[np.ndarray, np.ndarray]:
    """Eigenvalues and sampled eigenfunctions of the Dirichlet Laplacian."""
    return basis.eigenvalues, basis.eigenfunctions


@dataclass(frozen=True)
class Field:
    """Scalar field in spectral coordinates.

    ``sobolev_exponent`` records the semantic smoothness of the slot the field
    occupies (1 for positions, 0 for velocities); norms always take the
    exponent explicitly.
    """

    basis: SpectralBasis
    coeffs: np.ndarray
    sobolev_exponent: float = 0.0

    def __post_init__(self):
        c = np.asarray(self.coeffs, dtype=float)
        if c.shape != (self.basis.mode_count,):
            raise ValueError(f"expected {self.basis.mode_count} coefficients, got {c.shape}")
        object.__setattr__(self, "coeffs", c)

    @staticmethod
    def zero(basis: SpectralBasis, sobolev_exponent: float = 0.0) -> "Field":
        return Field(basis, np.zeros(basis.mode_count), sobolev_exponent)

    @staticmethod
    def from_mode(basis: SpectralBasis, mode: int, amplitude: float = 1.0,
                  sobolev_exponent: float = 0.0) -> "Field":
        """Multiple of the ``mode``-th eigenfunction (1-based index)."""
        c = np.zeros(basis.mode_count)
        c[mode - 1] = amplitude
        return Field(basis, c, sobolev_exponent)

    def values(self) -> np.ndarray:
        return self.basis.synthesize(self.coeffs)

    def __add__(self, other: "Field") -> "Field":
        _check_same_basis(self.basis, other.basis)
        return replace(self, coeffs=self.coeffs + other.coeffs)

    def __sub__(self, other: "Field") -> "Field":
        _check_same_basis(self.basis, other.basis)
        return replace(self, coeffs=self.coeffs - other.coeffs)

    def __mul__(self, a: float) -> "Field":
        return replace(self, coeffs=a * self.coeffs)

    __rmul__ = __mul__


def _check_same_basis(b1: SpectralBasis, b2: SpectralBasis):
    if b1 != b2:
        raise BasisMismatchError("fields live on different spectral bases")


def sobolev_norm(f: Field, s: float) -> float:
    """Spectral Sobolev norm sqrt(sum lambda_j^s c_j^2); s=0 is the L2 norm."""
    return float(np.sqrt(np.sum(f.basis.eigenvalues ** s * f.coeffs ** 2)))


@dataclass(frozen=True)
class PhaseState:
    """Point [u1, u2] of the second-order flow with the damping-weighted norm.

    ``alpha`` is the small weight in |y|^2 = ||grad u1||^2 + ||u2 + alpha*u1||^2.
    """

    u1: Field
    u2: Field
    alpha: float

    def __post_init__(self):
        _check_same_basis(self.u1.basis, self.u2.basis)
        if self.alpha < 0:
            raise ValueError("alpha must be nonnegative")

    @property
    def basis(self) -> SpectralBasis:
        return self.u1.basis

    @staticmethod
    def zero(basis: SpectralBasis, alpha: float) -> "PhaseState":
        return PhaseState(Field.zero(basis, 1.0), Field.zero(basis, 0.0), alpha)

    @staticmethod
    def from_coeffs(basis: SpectralBasis, c1: np.ndarray, c2: np.ndarray,
                    alpha: float) -> "PhaseState":
        return PhaseState(Field(basis, np.asarray(c1, float), 1.0),
                          Field(basis, np.asarray(c2, float), 0.0), alpha)

    def as_array(self) -> np.ndarray:
        """Stacked coefficients, shape (2, M): row 0 position, row 1 velocity."""
        return np.stack([self.u1.coeffs, self.u2.coeffs])


def phase_norm(y: PhaseState) -> float:
    """The alpha-weighted phase-space norm |y|_H."""
    return float(np.sqrt(phase_norm_sq_arr(y.as_array(), y.basis.eigenvalues, y.alpha)))


def phase_norm_sq_arr(states: np.ndarray, eigenvalues: np.ndarray, alpha: float) -> np.ndarray:
    """|y|_H^2 for stacked coefficient arrays of shape (..., 2, M)."""
    c1 = states[..., 0, :]
    c2 = states[..., 1, :]
    return np.sum(eigenvalues * c1 ** 2 + (c2 + alpha * c1) ** 2, axis=-1)


def sobolev_phase_norm(y: PhaseState, s: float) -> float:
    """|y|_{H^s} = sqrt(||u1||_{s+1}^2 + ||u2 + alpha*u1||_s^2)."""
    return float(np.sqrt(sobolev_phase_norm_sq_arr(
        y.as_array(), y.basis.eigenvalues, y.alpha, s)))


def sobolev_phase_norm_sq_arr(states: np.ndarray, eigenvalues: np.ndarray,
                              alpha: float, s: float) -> np.ndarray:
    c1 = states[..., 0, :]
    c2 = states[..., 1, :]
    return np.sum(eigenvalues ** (s + 1) * c1 ** 2
                  + eigenvalues ** s * (c2 + alpha * c1) ** 2, axis=-1)


def project_low(f: Field, n: int) -> Field:
    """Zero every coefficient beyond the first ``n`` modes."""
    if not 0 <= n <= f.basis.mode_count:
        raise ValueError(f"projection cutoff {n} outside [0, {f.basis.mode_count}]")
    c = f.coeffs.copy()
    c[n:] = 0.0
    return replace(f, coeffs=c)


def project_state_low(y: PhaseState, n: int) -> PhaseState:
    return PhaseState(project_low(y.u1, n), project_low(y.u2, n), y.alpha)


def evaluate_nonlinearity(f: Field, nl) -> Field:
    """Pseudo-spectral evaluation of a pointwise nonlinearity.

    ``nl`` is any object with a vectorized ``f`` method (or a plain callable).
    The field is synthesized on the oversampled grid, the nonlinearity applied
    pointwise, and the result projected back onto the retained modes.
    """
    func = nl.f if hasattr(nl, "f") else nl
    vals = func(f.values())
    return Field(f.basis, f.basis.analyze(vals), f.sobolev_exponent)


def energy(y: PhaseState, nl) -> float:
    """Energy functional |y|_H^2 + 2 * integral of F(u1), with F(0) = 0."""
    primitive = nl.F if hasattr(nl, "F") else nl
    pot = y.basis.quadrature(primitive(y.u1.values()))
    return float(phase_norm(y) ** 2 + 2.0 * pot)
