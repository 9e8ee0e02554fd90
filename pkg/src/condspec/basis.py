"""Reproducing-kernel bases and the tensor-product design matrix.

Both smoothness domains use the second-order spline kernel

    k(s, t) = integral of (s - v)+ (t - v)+ dv  =  a^2 b / 2 - a^3 / 6,

with a = min(s, t), b = max(s, t); frequencies live on [0, 1/2], unit-scaled
outcomes on [0, 1].  A basis is the matrix of leading scaled eigenvectors
V D^(1/2) of the kernel Gram matrix, next to the linear columns (1 | x).
The bivariate design stacks Kronecker products of the two bases row-ordered
so that row (j, m) pairs subject j with frequency m.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError

# Cumulative eigenvalue fraction targeted by the generic rank rule.
FVE_THRESHOLD = 0.97975

# Published rank table for the frequency basis, keyed by smallest series
# length in each bin.  Lengths above the last bin keep rank 10.
_FREQ_RANK_BINS = ((15, 7), (19, 8), (23, 9), (41, 10))


def kernel_j(w1, w2):
    """Spline kernel on the frequency domain [0, 1/2]; symmetric, PSD."""
    w1 = np.asarray(w1, dtype=float)
    w2 = np.asarray(w2, dtype=float)
    if np.any(w1 < 0) or np.any(w1 > 0.5) or np.any(w2 < 0) or np.any(w2 > 0.5):
        raise ValidationError("kernel_j arguments must lie in [0, 1/2]")
    return _spline_kernel(w1, w2)


def kernel_h(u1, u2):
    """Spline kernel on the outcome domain [0, 1]; symmetric, PSD."""
    u1 = np.asarray(u1, dtype=float)
    u2 = np.asarray(u2, dtype=float)
    if np.any(u1 < 0) or np.any(u1 > 1) or np.any(u2 < 0) or np.any(u2 > 1):
        raise ValidationError("kernel_h arguments must lie in [0, 1]")
    return _spline_kernel(u1, u2)


def _spline_kernel(x, y):
    lo = np.minimum(x, y)
    hi = np.maximum(x, y)
    return lo * lo * hi / 2.0 - lo ** 3 / 6.0


def kernel_gram(points, kernel):
    """Gram matrix of `kernel` on a 1-d point set."""
    pts = np.asarray(points, dtype=float)
    return kernel(pts[:, None], pts[None, :])


def select_rank_fve(eigenvalues, threshold=FVE_THRESHOLD):
    """Smallest k whose leading eigenvalues reach `threshold` of the total.

    `eigenvalues` must be nonincreasing with a positive sum.
    """
    ev = np.asarray(eigenvalues, dtype=float)
    if ev.size == 0:
        raise ValidationError("empty eigenvalue vector")
    if not 0.0 < threshold < 1.0:
        raise ValidationError("threshold must lie in (0, 1)")
    if np.any(np.diff(ev) > 1e-12 * max(abs(ev[0]), 1.0)):
        raise ValidationError("eigenvalues must be sorted nonincreasing")
    total = ev.sum()
    if total <= 0:
        raise ValidationError("eigenvalue sum must be positive")
    frac = np.cumsum(ev) / total
    return int(np.searchsorted(frac, threshold - 1e-12) + 1)


def frequency_rank_for_length(n):
    """Recommended frequency-basis rank for a series of length n.

    Piecewise-constant in n: 7 for n in [15,18], 8 for [19,22], 9 for
    [23,40], 10 for n >= 41; always capped at M = floor((n-1)/2).
    """
    if n < 3:
        raise ValidationError("series too short for any Fourier frequency")
    rank = 7
    for lo, r in _FREQ_RANK_BINS:
        if n >= lo:
            rank = r
    m = (n - 1) // 2
    return min(rank, m)


@dataclass(frozen=True)
class FrequencyGrid:
    """Fourier frequencies omega_m = m/n for m = 1..M, M = floor((n-1)/2)."""

    n: int
    M: int
    omegas: np.ndarray

    @classmethod
    def for_length(cls, n: int) -> "FrequencyGrid":
        n = int(n)
        m = (n - 1) // 2
        if m < 1:
            raise ValidationError(f"series length {n} yields no Fourier frequencies")
        return cls(n=n, M=m, omegas=np.arange(1, m + 1) / n)


@dataclass(frozen=True)
class KernelBasis:
    """Linear columns plus leading scaled eigenvectors of a kernel Gram matrix.

    Holds the full eigensystem so the basis can be evaluated off the training
    points by the Nystrom extension.
    """

    points: np.ndarray          # training abscissae
    L: np.ndarray               # (len(points), 2): columns 1, x
    Q: np.ndarray               # (len(points), rank): V D^(1/2), leading columns
    eigenvalues: np.ndarray     # selected eigenvalues, nonincreasing
    vectors: np.ndarray         # corresponding eigenvectors (columns)
    kernel: object = field(repr=False, compare=False, default=None)

    @property
    def rank(self) -> int:
        return self.Q.shape[1]

    def rows_at(self, x):
        """(L, Q) rows at arbitrary points via the Nystrom extension.

        At a new point x the nonlinear basis value is
        sum_m k(x, points_m) V[m, k] / sqrt(lambda_k); at training points this
        reproduces the stored Q columns exactly.
        """
        x = np.atleast_1d(np.asarray(x, dtype=float))
        l_new = np.column_stack([np.ones_like(x), x])
        kx = self.kernel(x[:, None], self.points[None, :])
        with np.errstate(divide="ignore", invalid="ignore"):
            inv_sqrt = np.where(self.eigenvalues > 0, 1.0 / np.sqrt(self.eigenvalues), 0.0)
        q_new = (kx @ self.vectors) * inv_sqrt[None, :]
        return l_new, q_new


def _eigenbasis(points, kernel, rank):
    pts = np.asarray(points, dtype=float)
    npts = pts.size
    if not 1 <= rank <= npts:
        raise ValidationError(f"rank {rank} outside [1, {npts}]")
    gram = kernel_gram(pts, kernel)
    eigvals, eigvecs = np.linalg.eigh(gram)
    order = np.argsort(eigvals)[::-1]
    eigvals = eigvals[order]
    eigvecs = eigvecs[:, order]
    # kernel Gram matrices are numerically rank-deficient on large grids
    eigvals[eigvals < 1e-12 * max(eigvals[0], 0.0)] = 0.0
    # reproducible sign: first entry of nonnegligible magnitude made positive
    for k in range(eigvecs.shape[1]):
        col = eigvecs[:, k]
        nz = np.flatnonzero(np.abs(col) > 1e-12 * np.abs(col).max())
        if nz.size and col[nz[0]] < 0:
            eigvecs[:, k] = -col
    eigvals = eigvals[:rank]
    eigvecs = eigvecs[:, :rank]
    q = eigvecs * np.sqrt(eigvals)[None, :]
    l = np.column_stack([np.ones(npts), pts])
    return KernelBasis(points=pts, L=l, Q=q, eigenvalues=eigvals,
                       vectors=eigvecs, kernel=kernel)


def build_frequency_basis(grid: FrequencyGrid, rank=None) -> KernelBasis:
    """Basis on the Fourier grid; rank=None applies the length-based rule."""
    if rank is None or rank == "auto":
        rank = frequency_rank_for_length(grid.n)
    elif rank == "fve":
        ev = np.clip(np.sort(np.linalg.eigvalsh(kernel_gram(grid.omegas, kernel_j)))[::-1], 0.0, None)
        rank = select_rank_fve(ev)
    return _eigenbasis(grid.omegas, kernel_j, int(rank))


def build_outcome_basis(outcomes, rank) -> KernelBasis:
    """Basis on the observed unit-scaled outcomes."""
    u = np.asarray(outcomes, dtype=float)
    if rank == "fve":
        ev = np.clip(np.sort(np.linalg.eigvalsh(kernel_gram(u, kernel_h)))[::-1], 0.0, None)
        rank = select_rank_fve(ev)
    return _eigenbasis(u, kernel_h, int(rank))


@dataclass(frozen=True)
class BlockMap:
    """Column ranges of the coefficient blocks in the stacked design."""

    a: slice
    b: slice
    c: slice
    d: slice
    n_h: int
    n_j: int

    @property
    def total(self) -> int:
        return self.d.stop

    @classmethod
    def for_ranks(cls, n_h: int, n_j: int) -> "BlockMap":
        na, nb, nc, nd = 4, 2 * n_h, 2 * n_j, n_h * n_j
        return cls(a=slice(0, na),
                   b=slice(na, na + nb),
                   c=slice(na + nb, na + nb + nc),
                   d=slice(na + nb + nc, na + nb + nc + nd),
                   n_h=n_h, n_j=n_j)


@dataclass(frozen=True)
class TensorBasis:
    """Bivariate design: Q = (L_H x L_J | Q_H x L_J | L_H x Q_J | Q_H x Q_J).

    Row (j, m) is at index j*M + m, pairing subject j with frequency m;
    `x` denotes the Kronecker product.
    """

    Q: np.ndarray
    block_map: BlockMap
    freq_basis: KernelBasis
    outcome_basis: KernelBasis

    @property
    def n_subjects(self) -> int:
        return self.outcome_basis.points.size

    @property
    def n_freq(self) -> int:
        return self.freq_basis.points.size

    def row_index(self, j: int, m: int) -> int:
        """Row of Q holding subject j (0-based) at frequency index m (0-based)."""
        return j * self.n_freq + m

    def rows_at(self, omegas, us):
        """Design rows at arbitrary (omega, u) pairs (broadcast elementwise)."""
        omegas = np.atleast_1d(np.asarray(omegas, dtype=float))
        us = np.atleast_1d(np.asarray(us, dtype=float))
        omegas, us = np.broadcast_arrays(omegas, us)
        l_j, q_j = self.freq_basis.rows_at(omegas.ravel())
        l_h, q_h = self.outcome_basis.rows_at(us.ravel())
        return _combine_rows(l_h, q_h, l_j, q_j)


def _combine_rows(l_h, q_h, l_j, q_j):
    def rowkron(a, b):
        return (a[:, :, None] * b[:, None, :]).reshape(a.shape[0], -1)

    return np.hstack([rowkron(l_h, l_j), rowkron(q_h, l_j),
                      rowkron(l_h, q_j), rowkron(q_h, q_j)])


def tensor_design(outcome_basis: KernelBasis, freq_basis: KernelBasis) -> TensorBasis:
    """Assemble the full design over all (subject, frequency) pairs."""
    q = np.hstack([
        np.kron(outcome_basis.L, freq_basis.L),
        np.kron(outcome_basis.Q, freq_basis.L),
        np.kron(outcome_basis.L, freq_basis.Q),
        np.kron(outcome_basis.Q, freq_basis.Q),
    ])
    bmap = BlockMap.for_ranks(outcome_basis.rank, freq_basis.rank)
    return TensorBasis(Q=q, block_map=bmap,
                       freq_basis=freq_basis, outcome_basis=outcome_basis)


def build_tensor_basis(n: int, outcomes, n_j=None, n_h=10) -> TensorBasis:
    """Convenience constructor from series length and unit outcomes."""
    grid = FrequencyGrid.for_length(n)
    fb = build_frequency_basis(grid, rank=n_j)
    ob = build_outcome_basis(outcomes, rank=n_h)
    return tensor_design(ob, fb)
