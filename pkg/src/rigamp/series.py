"""Matrix power series shared by the AMP engine and the state evolution.

All matrices are square and indexed so that row/column 0 belongs to the
signal (or ``g``) slot and ``1..t`` to the iterations.  ``Psi`` is lower
triangular and ``Phi`` strictly lower triangular, so every product
``Psi Phi`` is nilpotent and the series below are finite sums.
"""

from __future__ import annotations

import numpy as np

from .errors import InvalidParameterError


def _kappa(kappa, n_terms):
    k = np.asarray(kappa, dtype=float)
    if k.shape[0] < n_terms:
        raise InvalidParameterError(
            f"need free cumulants up to order {2 * n_terms}, have {2 * k.shape[0]}", field="kappa"
        )
    return k


def _powers(P, jmax):
    out = [np.eye(P.shape[0])]
    for _ in range(jmax):
        out.append(out[-1] @ P)
    return out


def onsager_matrices(Psi, Phi, kappa, delta, jmax=None):
    """``M_alpha = sum_j k_{2(j+1)} Psi (Phi Psi)^j`` and
    ``M_beta = delta sum_j k_{2(j+1)} Phi (Psi Phi)^j`` for ``j = 0..jmax``.

    ``jmax`` defaults to the matrix size, past which every term vanishes.
    """
    Psi = np.asarray(Psi, dtype=float)
    Phi = np.asarray(Phi, dtype=float)
    if jmax is None:
        jmax = Psi.shape[0]
    k = _kappa(kappa, jmax + 1)
    pa = _powers(Phi @ Psi, jmax)
    pb = _powers(Psi @ Phi, jmax)
    M_alpha = sum(k[j] * (Psi @ pa[j]) for j in range(jmax + 1))
    M_beta = delta * sum(k[j] * (Phi @ pb[j]) for j in range(jmax + 1))
    return M_alpha, M_beta


def _sandwich_terms(P, A, B, jmax):
    """``T^{(j)} = sum_{i=0}^{j} P^i A P'^{j-i} + sum_{i=0}^{j-1} P^i B P'^{j-1-i}``."""
    pw = _powers(P, jmax)
    pwT = [p.T for p in pw]
    terms = []
    for j in range(jmax + 1):
        T = sum(pw[i] @ A @ pwT[j - i] for i in range(j + 1))
        if j > 0:
            T = T + sum(pw[i] @ B @ pwT[j - 1 - i] for i in range(j))
        terms.append(T)
    return terms


def xi_terms(Psi, Phi, Gamma, Delta, jmax):
    """``Xi^{(j)}`` with ``P = Psi Phi``: the G/R covariance building blocks."""
    Psi, Phi = np.asarray(Psi, dtype=float), np.asarray(Phi, dtype=float)
    return _sandwich_terms(Psi @ Phi, np.asarray(Gamma, dtype=float), Psi @ Delta @ Psi.T, jmax)


def theta_terms(Psi, Phi, Gamma, Delta, jmax):
    """``Theta^{(j)}`` with ``P = Phi Psi``: the X-noise covariance building blocks."""
    Psi, Phi = np.asarray(Psi, dtype=float), np.asarray(Phi, dtype=float)
    return _sandwich_terms(Phi @ Psi, np.asarray(Delta, dtype=float), Phi @ Gamma @ Phi.T, jmax)


def sigma_series(Psi, Phi, Gamma, Delta, kappa):
    """``sum_{j=0}^{2n-1} kappa_{2(j+1)} Xi^{(j)}`` for ``n x n`` blocks."""
    jmax = 2 * np.shape(Psi)[0] - 1
    k = _kappa(kappa, jmax + 1)
    return sum(k[j] * X for j, X in enumerate(xi_terms(Psi, Phi, Gamma, Delta, jmax)))


def omega_series(Psi, Phi, Gamma, Delta, kappa, delta):
    """``delta sum_{j=0}^{2n-2} kappa_{2(j+1)} Theta^{(j)}`` for ``n x n`` blocks."""
    jmax = 2 * np.shape(Psi)[0] - 2
    k = _kappa(kappa, jmax + 1)
    return delta * sum(k[j] * X for j, X in enumerate(theta_terms(Psi, Phi, Gamma, Delta, jmax)))
