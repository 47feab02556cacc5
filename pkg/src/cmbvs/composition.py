"""Compositional algebra: closure, zero replacement and sequential balances.

Compositions are handled as plain float arrays whose last axis indexes the
parts. Balances follow a sequential binary partition (SBP): balance ``k``
contrasts the ``k``-th taxon of the ordering against every taxon after it.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .errors import ConfigurationError, DegenerateInputError, DimensionError, DomainError

__all__ = [
    "PartitionScheme",
    "balance",
    "balances_all",
    "close",
    "ilr_basis",
    "sbp",
    "zero_replace",
]


def close(raw):
    """Rescale a nonnegative vector (or the rows of a matrix) to sum to one.

    Parameters
    ----------
    raw : array_like
        Nonnegative values; the last axis holds the parts.

    Returns
    -------
    numpy.ndarray
        Array of the same shape whose last axis sums to one.

    Raises
    ------
    DegenerateInputError
        If a row has no positive entry.
    DomainError
        If any entry is negative or not finite.
    """
    mat = np.asarray(raw, dtype=float)
    if mat.ndim == 0 or mat.shape[-1] == 0:
        raise DegenerateInputError("cannot close an empty composition")
    if not np.all(np.isfinite(mat)) or np.any(mat < 0):
        raise DomainError("compositions must be finite and nonnegative")
    total = mat.sum(axis=-1, keepdims=True)
    if np.any(total <= 0):
        raise DegenerateInputError("composition has no positive entry")
    return mat / total


def zero_replace(psi, delta):
    """Multiplicative replacement of zeros.

    Zeros become ``delta``; every nonzero part ``x`` in a row with ``c`` zeros
    becomes ``x * (1 - c * delta)``, so rows still sum to one and ratios
    between nonzero parts are untouched.

    Parameters
    ----------
    psi : array_like
        Closed composition(s), possibly containing zeros.
    delta : float or array_like
        Replacement proportion. An array is broadcast per row, which is how a
        per-sample pseudocount (``0.5 / total_reads``) is expressed.
    """
    psi = np.asarray(psi, dtype=float)
    delta = np.asarray(delta, dtype=float)
    if np.any(delta <= 0):
        raise ConfigurationError("zero replacement delta must be positive")
    zeros = psi == 0
    n_zero = zeros.sum(axis=-1, keepdims=True)
    if delta.ndim == psi.ndim - 1 and delta.ndim > 0:
        delta = delta[..., None]
    shrink = 1.0 - n_zero * delta
    if np.any(shrink[n_zero > 0] <= 0):
        raise ConfigurationError(
            "zero replacement delta too large: replaced parts would consume the whole simplex"
        )
    return np.where(zeros, delta, psi * shrink)


@dataclass(frozen=True, eq=False)
class PartitionScheme:
    """Sequential binary partition over ``J`` taxa.

    ``taxon_order[k]`` is the (0-based) original index of the taxon sitting at
    ordered position ``k``. Row ``k`` of :attr:`eta` puts ``+1`` on that taxon,
    ``-1`` on every taxon at a later position, and ``0`` elsewhere.
    """

    eta: np.ndarray
    taxon_order: np.ndarray = field(repr=False)

    @property
    def n_taxa(self) -> int:
        return self.eta.shape[1]

    @cached_property
    def scales(self) -> np.ndarray:
        """``sqrt((J-k)/(J-k+1))`` for 1-based row ``k``."""
        J = self.n_taxa
        k = np.arange(1, J)
        return np.sqrt((J - k) / (J - k + 1.0))

    @cached_property
    def basis(self) -> np.ndarray:
        """ILR coefficient matrix ``A`` with balances ``= A @ log(psi)``."""
        return ilr_basis(self)


def sbp(J, taxon_order=None) -> PartitionScheme:
    """Build the sequential binary partition for ``J`` taxa.

    Parameters
    ----------
    J : int
        Number of taxa, at least 2.
    taxon_order : sequence of int, optional
        0-based permutation of ``range(J)``; identity when omitted.
    """
    if J < 2:
        raise DimensionError(f"a partition needs at least 2 taxa, got J={J}")
    if taxon_order is None:
        order = np.arange(J)
    else:
        order = np.asarray(taxon_order, dtype=np.int64)
        if order.shape != (J,) or not np.array_equal(np.sort(order), np.arange(J)):
            raise DimensionError(f"taxon_order must be a permutation of 0..{J - 1}")
    ordered = np.zeros((J - 1, J), dtype=np.int8)
    for k in range(J - 1):
        ordered[k, k] = 1
        ordered[k, k + 1:] = -1
    eta = np.zeros_like(ordered)
    eta[:, order] = ordered
    eta.setflags(write=False)
    order = order.copy()
    order.setflags(write=False)
    return PartitionScheme(eta=eta, taxon_order=order)


def ilr_basis(scheme: PartitionScheme) -> np.ndarray:
    """Orthonormal contrast rows ``a_k`` for a partition scheme.

    ``a_k`` holds ``sqrt(r s / (r + s))`` times ``1/r`` on the ``r`` positive
    parts and ``-1/s`` on the ``s`` negative parts, which reproduces the
    ratio-of-geometric-means balance when applied to ``log(psi)``.
    """
    eta = scheme.eta
    pos = (eta == 1).sum(axis=1).astype(float)
    neg = (eta == -1).sum(axis=1).astype(float)
    norm = np.sqrt(pos * neg / (pos + neg))
    A = np.where(eta == 1, 1.0 / pos[:, None], 0.0) - np.where(eta == -1, 1.0 / neg[:, None], 0.0)
    return A * norm[:, None]


def balance(eta_k, psi) -> float:
    """Normalised log-ratio of geometric means for one partition row.

    This is the direct ratio form; :func:`balances_all` uses the equivalent
    log-linear form.
    """
    eta_k = np.asarray(eta_k)
    psi = np.asarray(psi, dtype=float)
    if eta_k.shape != psi.shape:
        raise DimensionError("partition row and composition differ in length")
    plus = psi[eta_k == 1]
    minus = psi[eta_k == -1]
    if plus.size == 0 or minus.size == 0:
        raise DimensionError("partition row needs both a + and a - group")
    if np.any(plus <= 0) or np.any(minus <= 0):
        raise DomainError("balance undefined for zero parts; zero-replace first")
    r, s = plus.size, minus.size
    gplus = np.exp(np.mean(np.log(plus)))
    gminus = np.exp(np.mean(np.log(minus)))
    return float(np.sqrt(r * s / (r + s)) * np.log(gplus / gminus))


def balances_all(scheme: PartitionScheme, psi) -> np.ndarray:
    """All ``J-1`` balances of ``psi`` (a vector or one composition per row)."""
    psi = np.asarray(psi, dtype=float)
    if psi.shape[-1] != scheme.n_taxa:
        raise DimensionError(f"expected {scheme.n_taxa} parts, got {psi.shape[-1]}")
    if np.any(psi <= 0):
        raise DomainError("balances undefined for zero parts; zero-replace first")
    return np.log(psi) @ scheme.basis.T
