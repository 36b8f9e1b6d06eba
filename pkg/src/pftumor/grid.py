"""Cell-centred finite differences on a rectangle with homogeneous Neumann
boundary conditions (mirrored ghost cells).

Fields are plain numpy arrays of shape ``grid.shape``: ``(n_x,)`` in 1D and
``(n_y, n_x)`` in 2D, so the flattened values are row-major with ``x``
varying fastest.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy import fft
from scipy.sparse.linalg import LinearOperator, cg


class IterativeSolverError(RuntimeError):
    def __init__(self, message, residual):
        super().__init__(f"{message} (relative residual {residual:.3e})")
        self.residual = residual


class SolvabilityError(ValueError):
    """Pure Neumann problem with a right-hand side of nonzero mean."""


@dataclass(frozen=True)
class Grid:
    n_x: int
    n_y: int = 1
    h_x: float = 1.0
    h_y: float = 1.0
    dim: int = 2

    def __post_init__(self):
        if self.dim not in (1, 2):
            raise ValueError("dim must be 1 or 2")
        if self.n_x < 4 or (self.dim == 2 and self.n_y < 4):
            raise ValueError("a grid needs at least 4 cells per direction")
        if self.dim == 1 and self.n_y != 1:
            raise ValueError("a 1D grid has n_y = 1")
        if self.h_x <= 0 or self.h_y <= 0:
            raise ValueError("cell widths must be positive")

    @classmethod
    def uniform(cls, lengths, n) -> "Grid":
        """Grid covering ``[0, L_x] x [0, L_y]`` (or ``[0, L_x]``) with ``n`` cells per axis."""
        lengths = tuple(lengths)
        if len(lengths) == 1:
            return cls(int(n), 1, lengths[0] / int(n), 1.0, dim=1)
        nx, ny = (n, n) if np.isscalar(n) else n
        return cls(int(nx), int(ny), lengths[0] / int(nx), lengths[1] / int(ny), dim=2)

    @property
    def shape(self):
        return (self.n_x,) if self.dim == 1 else (self.n_y, self.n_x)

    @property
    def lengths(self):
        return (self.n_x * self.h_x,) if self.dim == 1 else (self.n_x * self.h_x, self.n_y * self.h_y)

    @property
    def cell_volume(self) -> float:
        return self.h_x if self.dim == 1 else self.h_x * self.h_y

    @property
    def measure(self) -> float:
        return float(np.prod(self.lengths))

    @cached_property
    def x(self) -> np.ndarray:
        return (np.arange(self.n_x) + 0.5) * self.h_x

    @cached_property
    def y(self) -> np.ndarray:
        return (np.arange(self.n_y) + 0.5) * self.h_y

    def coords(self):
        """Cell-centre coordinates broadcast to ``shape`` (``x`` only in 1D)."""
        if self.dim == 1:
            return self.x
        return np.meshgrid(self.x, self.y)

    def zeros(self):
        return np.zeros(self.shape)

    def full(self, value):
        return np.full(self.shape, float(value))

    # --- differential operators -------------------------------------------

    def _axes(self):
        # (array axis, spacing)
        return [(0, self.h_x)] if self.dim == 1 else [(1, self.h_x), (0, self.h_y)]

    def laplacian(self, f):
        f = np.asarray(f, dtype=float)
        out = np.zeros_like(f)
        for ax, h in self._axes():
            flux = np.diff(f, axis=ax) / (h * h)
            pad = [(0, 0)] * f.ndim
            pad[ax] = (1, 1)
            # ghost cells mirror the boundary value, so boundary fluxes vanish
            flux = np.pad(flux, pad)
            out += np.diff(flux, axis=ax)
        return out

    def gradient(self, f):
        """Centred differences; returns ``[d/dx]`` (1D) or ``[d/dx, d/dy]`` (2D)."""
        f = np.asarray(f, dtype=float)
        comps = []
        for ax, h in self._axes():
            pad = [(0, 0)] * f.ndim
            pad[ax] = (1, 1)
            g = np.pad(f, pad, mode="edge")
            n = f.shape[ax]
            hi = np.take(g, np.arange(2, n + 2), axis=ax)
            lo = np.take(g, np.arange(0, n), axis=ax)
            comps.append((hi - lo) / (2 * h))
        return comps

    def gradient_sq(self, f):
        """``|∇f|^2`` from centred differences."""
        return sum(g * g for g in self.gradient(f))

    def dirichlet(self, f, g=None) -> float:
        """``(∇f, ∇g)`` with face differences; equals ``-(Δf, g)`` exactly."""
        f = np.asarray(f, dtype=float)
        g = f if g is None else np.asarray(g, dtype=float)
        total = 0.0
        for ax, h in self._axes():
            total += float(np.sum(np.diff(f, axis=ax) * np.diff(g, axis=ax))) / (h * h)
        return total * self.cell_volume

    def integrate(self, f) -> float:
        return float(np.sum(f)) * self.cell_volume

    def average(self, f) -> float:
        return self.integrate(f) / self.measure

    def inner(self, f, g) -> float:
        return float(np.sum(np.asarray(f) * np.asarray(g))) * self.cell_volume

    def norm(self, f) -> float:
        """L2 norm under midpoint quadrature."""
        return float(np.sqrt(self.inner(f, f)))

    # --- spectral (even-symmetric) solves ---------------------------------

    @cached_property
    def eigenvalues(self) -> np.ndarray:
        """Eigenvalues of ``-laplacian`` in DCT-II ordering (shape ``shape``)."""
        lam_x = (2.0 / self.h_x ** 2) * (1.0 - np.cos(np.pi * np.arange(self.n_x) / self.n_x))
        if self.dim == 1:
            return lam_x
        lam_y = (2.0 / self.h_y ** 2) * (1.0 - np.cos(np.pi * np.arange(self.n_y) / self.n_y))
        return lam_y[:, None] + lam_x[None, :]

    def dct(self, f):
        return fft.dctn(f, type=2, norm="ortho")

    def idct(self, f):
        return fft.idctn(f, type=2, norm="ortho")

    def _spectral_solve(self, shift, rhs):
        lam = shift + self.eigenvalues
        rhat = self.dct(rhs)
        if shift == 0:
            lam = lam.copy()
            lam.flat[0] = 1.0
            rhat.flat[0] = 0.0
        return self.idct(rhat / lam)

    def solve_helmholtz(self, a: float, b_field, rhs, tol: float = 1e-10,
                        maxiter: int = 500):
        """Solve ``a u + b u - Δu = rhs`` with homogeneous Neumann conditions.

        ``b_field`` may be a scalar or a nonnegative field.  A spatially
        constant ``b`` is solved directly by the cosine transform; otherwise
        conjugate gradients preconditioned by the constant-coefficient solve
        is used.  For ``a = b = 0`` the zero-mean solution is returned.
        """
        rhs = np.asarray(rhs, dtype=float)
        b = np.asarray(b_field, dtype=float)
        if a < 0 or np.any(b < 0):
            raise ValueError("solve_helmholtz needs a >= 0 and b >= 0")
        rnorm = float(np.linalg.norm(rhs))
        if b.ndim == 0 or np.ptp(b) == 0:
            shift = a + (float(b) if b.ndim == 0 else float(b.flat[0]))
            if shift == 0:
                mean = self.average(rhs)
                if abs(mean) > tol * max(rnorm / np.sqrt(rhs.size), 1e-300):
                    raise SolvabilityError(
                        f"pure Neumann problem needs a zero-mean right-hand side (mean {mean:.3e})")
            return self._spectral_solve(shift, rhs)

        if rnorm == 0:
            return np.zeros_like(rhs)
        shape, n = rhs.shape, rhs.size
        pre_shift = a + float(b.mean())

        def matvec(v):
            u = v.reshape(shape)
            return (a * u + b * u - self.laplacian(u)).ravel()

        def psolve(v):
            return self._spectral_solve(pre_shift, v.reshape(shape)).ravel()

        A = LinearOperator((n, n), matvec=matvec, dtype=float)
        M = LinearOperator((n, n), matvec=psolve, dtype=float)
        x0 = psolve(rhs.ravel())
        u, info = cg(A, rhs.ravel(), x0=x0, rtol=0.1 * tol, atol=0.0, maxiter=maxiter, M=M)
        res = float(np.linalg.norm(matvec(u) - rhs.ravel())) / rnorm
        if res > tol:
            raise IterativeSolverError("conjugate gradients did not converge", res)
        return u.reshape(shape)
