"""Closed-form minimization of the precision-matrix subproblems.

Each subproblem has the form

    minimize    tr(Sigma S) - c log|Sigma|
    subject to  l I <= Sigma <= u I

with S symmetric PSD (S = W Sigma2 W^T with c = m for the feature block,
S = W^T Sigma1 W with c = d for the task block). Diagonalizing S = V N V^T
reduces the matrix problem to independent scalar problems whose solution
is the clamp lambda_i = T_[l,u](c / nu_i), with nu_i = 0 sent to u. The
reduction rests on the fact that the minimum of lambda^T P nu over doubly
stochastic P is attained at a permutation, and for sorted inputs at the
identity pairing; :func:`brute_force_min_matching` enumerates permutations
to certify that combinatorial step at small sizes, and
:func:`oracle_cov_minimize` is an independent projected-gradient check of
the whole minimizer.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .datatypes import as_weight_array
from .exceptions import CapacityError, DomainError
from .linalg import clip_spectrum, sym_eig, symmetrize


def cov_subobjective(sigma: np.ndarray, s: np.ndarray, c: float) -> float:
    """tr(Sigma S) - c log|Sigma|, log-determinant via eigenvalues.

    Raises ``DomainError`` when sigma is not positive definite.
    """
    sigma = np.asarray(sigma, dtype=float)
    eigs = sym_eig(sigma).values
    if eigs[0] <= 0.0:
        raise DomainError(f"sigma is not positive definite (min eigenvalue {eigs[0]:.3e})")
    return float(np.sum(sigma * np.asarray(s, dtype=float))) - c * float(np.sum(np.log(eigs)))


def _minimize_bounded_cov(s: np.ndarray, c: float, l: float, u: float) -> np.ndarray:
    decomp = sym_eig(s)
    nu = np.maximum(decomp.values, 0.0)  # PSD up to eigensolver roundoff
    ratio = np.divide(c, nu, out=np.full_like(nu, np.inf), where=nu > 0)
    lam = clip_spectrum(ratio, l, u)
    return symmetrize((decomp.vectors * lam) @ decomp.vectors.T)


def minimize_sigma1(w, sigma2: np.ndarray, l: float, u: float) -> np.ndarray:
    """Exact minimizer of tr(Sigma1 W Sigma2 W^T) - m log|Sigma1| over the box.

    Eigendirections of W Sigma2 W^T with eigenvalue nu get lambda =
    T_[l,u](m / nu); nu = 0 (rank-deficient W) maps to u, where the scalar
    objective is decreasing.
    """
    w = as_weight_array(w)
    m = w.shape[1]
    return _minimize_bounded_cov(w @ sigma2 @ w.T, float(m), l, u)


def minimize_sigma2(w, sigma1: np.ndarray, l: float, u: float) -> np.ndarray:
    """Mirror of :func:`minimize_sigma1` with S = W^T Sigma1 W and constant d."""
    w = as_weight_array(w)
    d = w.shape[0]
    return _minimize_bounded_cov(w.T @ sigma1 @ w, float(d), l, u)


def matching_weight(lam, nu, permutation) -> float:
    """Weight sum_i lam_i * nu_{pi(i)} of a perfect matching."""
    lam = np.asarray(lam, dtype=float)
    nu = np.asarray(nu, dtype=float)
    return float(np.sum(lam * nu[np.asarray(permutation, dtype=int)]))


@dataclass(frozen=True)
class MatchingInstance:
    """A perfect matching between sorted weight vectors.

    ``lam`` is positive and sorted descending, ``nu`` nonnegative sorted
    ascending; ``permutation`` maps lam-index to nu-index and ``weight`` is
    the resulting sum, recomputable from the fields.
    """

    lam: tuple[float, ...]
    nu: tuple[float, ...]
    permutation: tuple[int, ...]
    weight: float

    def __post_init__(self):
        k = len(self.lam)
        if sorted(self.permutation) != list(range(k)):
            raise DomainError(f"permutation {self.permutation} is not a bijection on [{k}]")
        recomputed = matching_weight(self.lam, self.nu, self.permutation)
        if abs(recomputed - self.weight) > 1e-12 * (1.0 + abs(recomputed)):
            raise DomainError(
                f"stored weight {self.weight!r} does not match recomputed {recomputed!r}"
            )


def brute_force_min_matching(lam, nu) -> MatchingInstance:
    """Minimum-weight perfect matching by enumerating all k! permutations.

    ``lam`` must be positive sorted descending and ``nu`` nonnegative
    sorted ascending, both of length k <= 8. Ties are broken by the
    lexicographically smallest permutation.
    """
    lam = np.asarray(lam, dtype=float)
    nu = np.asarray(nu, dtype=float)
    if lam.shape != nu.shape or lam.ndim != 1:
        raise DomainError(f"expected equal-length vectors, got {lam.shape} and {nu.shape}")
    k = lam.shape[0]
    if k > 8:
        raise CapacityError(f"brute-force matching limited to k <= 8, got k={k}")
    if np.any(lam <= 0) or np.any(np.diff(lam) > 0):
        raise DomainError("lam must be positive and sorted descending")
    if np.any(nu < 0) or np.any(np.diff(nu) < 0):
        raise DomainError("nu must be nonnegative and sorted ascending")

    best_perm = None
    best_weight = np.inf
    for perm in itertools.permutations(range(k)):
        weight = matching_weight(lam, nu, perm)
        if weight < best_weight:
            best_weight = weight
            best_perm = perm
    return MatchingInstance(
        lam=tuple(lam), nu=tuple(nu), permutation=best_perm, weight=best_weight
    )


def oracle_cov_minimize(
    s: np.ndarray,
    c: float,
    l: float,
    u: float,
    iters: int = 20_000,
    step: float | None = None,
) -> np.ndarray:
    """Projected gradient descent on tr(Sigma S) - c log|Sigma|.

    A slow independent check of the closed-form minimizers: starting from
    ((l+u)/2) I, repeatedly step along -(S - c Sigma^{-1}) and project back
    onto {l I <= Sigma <= u I}. Intended as a test fixture for k <= 6.
    """
    s = symmetrize(np.asarray(s, dtype=float))
    k = s.shape[0]
    if k > 6:
        raise CapacityError(f"oracle limited to k <= 6, got k={k}")
    if step is None:
        # c/u floors the denominator so that S = 0 still converges to u I.
        step = 1e-3 * c / max(float(np.linalg.norm(s, 2)), c / u)
    # every iterate is V clip(w) V^T from its own projection, so its inverse
    # reuses that decomposition and each iteration costs a single eigh
    vals = np.full(k, (l + u) / 2.0)
    vecs = np.eye(k)
    for _ in range(iters):
        clipped = clip_spectrum(vals, l, u)
        sigma = (vecs * clipped) @ vecs.T
        inv = (vecs / clipped) @ vecs.T
        vals, vecs = np.linalg.eigh(symmetrize(sigma - step * (s - c * inv)))
    return symmetrize((vecs * clip_spectrum(vals, l, u)) @ vecs.T)
