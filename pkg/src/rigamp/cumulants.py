"""Spectral moments of ``A A^T`` and rectangular free cumulants.

Moments are normalized by ``n_out``: ``m_{2k} = tr((A A^T)^k) / n_out``.  When
``n_out > n_in`` this automatically mixes in the zero eigenvalues.

The moment-to-cumulant map is the truncated power-series recursion

    kappa_{2k} = m_{2k} - [z^k] sum_{j<k} kappa_{2j} (z (delta M(z) + 1)(M(z) + 1))^j

with ``M(z) = sum_{k>=1} m_{2k} z^k``.  It works for floats and for
``fractions.Fraction`` alike, which is how the analytic tables are built.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Optional, Sequence

import numpy as np

from .ensemble import DesignMatrix
from .errors import InvalidParameterError


@dataclass(frozen=True)
class MomentTable:
    """``m[k-1] = m_{2k}`` for ``k = 1..K``."""

    m: tuple
    delta: float
    source: str
    stderr: Optional[tuple] = None

    @property
    def K(self) -> int:
        return len(self.m)


@dataclass(frozen=True)
class FreeCumulantTable:
    """``kappa[k-1] = kappa_{2k}`` for ``k = 1..K``."""

    kappa: tuple
    delta: float

    @property
    def K(self) -> int:
        return len(self.kappa)

    def as_array(self, K: Optional[int] = None) -> np.ndarray:
        """Cumulants as floats, zero-extended or cut to length ``K``."""
        arr = np.array([float(k) for k in self.kappa])
        if K is None:
            return arr
        out = np.zeros(K)
        n = min(K, arr.shape[0])
        out[:n] = arr[:n]
        return out


def default_order(T: int) -> int:
    """Cumulant half-order needed to run ``T`` iterations."""
    return 2 * T + 4


def _check_order(K):
    if int(K) != K or K < 1:
        raise InvalidParameterError("K must be a positive integer", field="K")


def exact_moments(lam, n_out: int, K: int) -> MomentTable:
    """Moments from known singular values (implicit zero padding to ``n_out``)."""
    _check_order(K)
    lam = np.asarray(lam, dtype=float)
    if lam.shape[0] > n_out:
        raise InvalidParameterError("more singular values than rows", field="lambda")
    sq = lam * lam
    m, p = [], np.ones_like(sq)
    for _ in range(K):
        p = p * sq
        m.append(float(p.sum() / n_out))
    # delta is unknown from lambda alone; callers who need it use the design
    return MomentTable(m=tuple(m), delta=float("nan"), source="exact-spectrum")


def estimate_moments_hutchinson(A: DesignMatrix, K: int, probes: int, rng) -> MomentTable:
    """Hutchinson estimate of ``tr((A A^T)^k) / n_out`` with Rademacher probes.

    One pass of alternating ``A^T`` and ``A`` products serves every order.
    The returned ``stderr`` is the standard error over probes.
    """
    _check_order(K)
    if int(probes) != probes or probes < 1:
        raise InvalidParameterError("probes must be a positive integer", field="probes")
    v = rng.choice(np.array([-1.0, 1.0]), size=(A.n_out, probes))
    w = v
    samples = np.empty((K, probes))
    for k in range(K):
        w = A.matvec(A.rmatvec(w))
        samples[k] = np.einsum("ij,ij->j", v, w) / A.n_out
    mean = samples.mean(axis=1)
    if probes > 1:
        se = samples.std(axis=1, ddof=1) / np.sqrt(probes)
    else:
        se = np.full(K, np.nan)
    return MomentTable(m=tuple(mean.tolist()), delta=A.delta, source="hutchinson", stderr=tuple(se.tolist()))


def _as_fraction(x):
    if isinstance(x, Fraction):
        return x
    if isinstance(x, int):
        return Fraction(x)
    # decimal reading: 1.3 -> 13/10 rather than the binary expansion
    return Fraction(repr(float(x)))


def analytic_moments_beta(delta, K: int, exact: bool = False) -> MomentTable:
    """Limiting moments for singular values ``sqrt(6) * Beta(1, 2)``.

    ``m_{2k} = 6^k / ((k+1)(2k+1))``, divided by ``delta`` when ``delta >= 1``.
    With ``exact=True`` the entries are ``Fraction`` objects.
    """
    _check_order(K)
    if not delta > 0:
        raise InvalidParameterError("delta must be positive", field="delta")
    d = _as_fraction(delta)
    scale = Fraction(1) if d < 1 else 1 / d
    m = tuple(scale * Fraction(6**k, (k + 1) * (2 * k + 1)) for k in range(1, K + 1))
    if not exact:
        m = tuple(float(v) for v in m)
    return MomentTable(m=m, delta=float(delta), source="analytic")


def analytic_moments_gaussian(delta, K: int, exact: bool = False) -> MomentTable:
    """Limiting moments of an i.i.d. Gaussian design (entry variance ``1/max(n_out, n_in)``).

    These are Narayana polynomials in the aspect ratio, scaled to unit mean
    square of the nonzero singular values.
    """
    _check_order(K)
    if not delta > 0:
        raise InvalidParameterError("delta must be positive", field="delta")
    d = _as_fraction(delta)
    # for delta <= 1: eigenvalues of A A^T follow Marchenko-Pastur with ratio c = delta
    # for delta > 1: (1/delta) weight on the law with ratio 1/delta
    c, w = (d, Fraction(1)) if d <= 1 else (1 / d, 1 / d)
    m = []
    for k in range(1, K + 1):
        nar = sum(Fraction(_binom(k, j) * _binom(k, j - 1), k) * c ** (j - 1) for j in range(1, k + 1))
        m.append(w * nar)
    if not exact:
        m = [float(v) for v in m]
    return MomentTable(m=tuple(m), delta=float(delta), source="analytic")


def _binom(n, k):
    from math import comb

    return comb(n, k)


def _poly_mul(a, b, deg):
    out = [a[0] * 0] * (deg + 1)
    for i, ai in enumerate(a):
        if ai == 0:
            continue
        for j in range(0, deg + 1 - i):
            if j >= len(b):
                break
            out[i + j] += ai * b[j]
    return out


def moments_to_cumulants(m, delta, K: Optional[int] = None) -> FreeCumulantTable:
    """Rectangular free cumulants from the moments of ``A A^T / n_out``.

    ``m`` is a :class:`MomentTable` or a sequence ``(m_2, m_4, ...)``.  Works
    over any field-like number type; pass ``Fraction`` entries (and delta) for
    an exact result.  Float input is converted exactly to rationals and the
    result rounded once, since the recursion cancels heavily for wide spectra.
    """
    vals = list(m.m) if isinstance(m, MomentTable) else list(m)
    if K is None:
        K = len(vals)
    _check_order(K)
    if K > len(vals):
        raise InvalidParameterError(f"K={K} exceeds the {len(vals)} available moments", field="K")
    exact = isinstance(delta, Fraction) or (vals and isinstance(vals[0], Fraction))
    if exact:
        d = _as_fraction(delta)
        vals = [_as_fraction(v) for v in vals]
    else:
        if not np.all(np.isfinite(np.asarray(vals[:K], dtype=float))) or not np.isfinite(float(delta)):
            raise InvalidParameterError("moments and delta must be finite", field="m")
        d = Fraction(float(delta))
        vals = [Fraction(float(v)) for v in vals]
    if not d > 0:
        raise InvalidParameterError("delta must be positive", field="delta")
    one = Fraction(1)
    zero = Fraction(0)
    M = [zero] + vals[:K]
    a = [one] + [d * v for v in vals[:K]]  # delta M + 1
    b = [one] + vals[:K]  # M + 1
    P = [zero] + _poly_mul(a, b, K - 1)  # z (delta M + 1)(M + 1), degree <= K
    powers = [None, P]
    for _ in range(2, K):
        powers.append(_poly_mul(powers[-1], P, K))
    kappa = []
    for k in range(1, K + 1):
        acc = M[k]
        for j in range(1, k):
            acc -= kappa[j - 1] * powers[j][k]
        kappa.append(acc)
    if not exact:
        kappa = [float(v) for v in kappa]
    return FreeCumulantTable(kappa=tuple(kappa), delta=float(d))


def analytic_cumulants(variant: str, n_out: int, n_in: int, K: int, values=None) -> FreeCumulantTable:
    """Float cumulant table evaluated in exact rational arithmetic.

    ``IidGaussian`` and ``ScaledBeta`` use the limiting laws; ``Explicit`` uses
    the given singular values with zero padding to ``n_out``.
    """
    _check_order(K)
    d = Fraction(n_out, n_in)
    if variant == "IidGaussian":
        kap = [min(Fraction(1), 1 / d)] + [Fraction(0)] * (K - 1)
        return FreeCumulantTable(kappa=tuple(float(v) for v in kap), delta=float(d))
    if variant == "ScaledBeta":
        table = analytic_moments_beta(d, K, exact=True)
    elif variant == "Explicit":
        sq = [Fraction(float(v)) ** 2 for v in values]
        table = MomentTable(
            m=tuple(sum(s**k for s in sq) / n_out for k in range(1, K + 1)), delta=float(d), source="exact-spectrum"
        )
    else:
        raise InvalidParameterError(f"unknown spectrum {variant!r}", field="spectrum")
    kap = moments_to_cumulants(table, d, K)
    return FreeCumulantTable(kappa=tuple(float(v) for v in kap.kappa), delta=float(d))


def cumulants_from_design(A: DesignMatrix, K: int, probes: int, rng) -> FreeCumulantTable:
    """Hutchinson moments of one sampled design, mapped to cumulants."""
    table = estimate_moments_hutchinson(A, K, probes, rng)
    return moments_to_cumulants(table, A.delta, K)


def cumulant_tables(spectra: Sequence, dims: Sequence[int], K: int) -> list:
    """Analytic tables for every layer of a network."""
    return [
        analytic_cumulants(s.variant, dims[l + 1], dims[l], K, values=s.values) for l, s in enumerate(spectra)
    ]
