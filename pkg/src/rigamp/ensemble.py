"""Rotationally invariant designs and synthetic multi-layer instances.

A layer maps ``x`` (length ``n_in``) to ``g = A x`` (length ``n_out``) with
``A = O^T diag(lambda) Q`` for independent Haar ``O`` and ``Q``.  Middle
layers apply a ReLU, the last layer adds Gaussian noise.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import _kernels
from .errors import InvalidDimensionError, SpecMismatchError, ValidationError

SPECTRA = ("IidGaussian", "ScaledBeta", "Explicit")
PRIORS = ("GaussianUnit", "Rademacher")

BETA_A = 1.0
BETA_B = 2.0
BETA_SCALE = float(np.sqrt(6.0))


def trial_rng(seed: int, trial: int = 0, stream: int = 0) -> np.random.Generator:
    """Counter-based generator for one (seed, trial, stream) triple."""
    ss = np.random.SeedSequence(int(seed), spawn_key=(int(trial), int(stream)))
    return np.random.Generator(np.random.Philox(ss))


@dataclass(frozen=True)
class SpectrumSpec:
    """Singular-value law of one layer.

    ``IidGaussian`` designs have i.i.d. ``N(0, 1/max(n_out, n_in))`` entries so
    that the nonzero singular values have unit mean square.  ``ScaledBeta``
    draws ``sqrt(6) * Beta(1, 2)``.  ``Explicit`` uses ``values`` verbatim.
    """

    variant: str = "IidGaussian"
    values: Optional[tuple] = None

    def __post_init__(self):
        if self.variant not in SPECTRA:
            raise ValidationError(f"unknown spectrum {self.variant!r}", field="spectrum")
        if self.variant == "Explicit":
            if self.values is None:
                raise ValidationError("Explicit spectrum needs values", field="spectrum")
            vals = np.asarray(self.values, dtype=float)
            if vals.ndim != 1 or not np.all(np.isfinite(vals)) or np.any(vals < 0):
                raise ValidationError("Explicit singular values must be finite and >= 0", field="spectrum")
            object.__setattr__(self, "values", tuple(float(v) for v in vals))


@dataclass(frozen=True)
class NetworkSpec:
    """An ``L``-layer ReLU network with a noisy linear read-out.

    ``dims`` holds ``n_1 .. n_{L+1}``; ``spectra`` has one entry per layer.
    """

    dims: tuple
    spectra: tuple
    prior: str = "GaussianUnit"
    sigma: float = 0.0

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        if len(dims) < 2 or any(d < 1 for d in dims):
            raise InvalidDimensionError("dims must list at least two positive sizes", field="dims")
        spectra = tuple(self.spectra)
        if len(spectra) != len(dims) - 1:
            raise ValidationError("need one spectrum per layer", field="spectra")
        if self.prior not in PRIORS:
            raise ValidationError(f"unknown prior {self.prior!r}", field="prior")
        if not (np.isfinite(self.sigma) and self.sigma >= 0):
            raise ValidationError("sigma must be finite and >= 0", field="sigma")
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "spectra", spectra)
        object.__setattr__(self, "sigma", float(self.sigma))

    @property
    def L(self) -> int:
        return len(self.dims) - 1

    @property
    def deltas(self) -> tuple:
        return tuple(self.dims[i + 1] / self.dims[i] for i in range(self.L))


class HaarOrthogonal:
    """Haar orthogonal matrix held as Householder reflectors.

    Generation and each product cost ``O(n^2)``.  The law is exactly Haar:
    the reflectors are those of a sign-fixed QR factorization of a Gaussian
    matrix, built one column at a time.
    """

    def __init__(self, n: int, rng: np.random.Generator):
        if n < 1:
            raise InvalidDimensionError("orthogonal dimension must be >= 1", field="n")
        self.n = n
        self._v, self._tau, self._signs = _kernels.build_reflectors(rng.standard_normal((n, n)))

    def __matmul__(self, x):
        return _kernels.apply_reflectors(self._v, self._tau, self._signs, x, transpose=False)

    def rmatvec(self, x):
        """``Q^T x``."""
        return _kernels.apply_reflectors(self._v, self._tau, self._signs, x, transpose=True)

    def dense(self) -> np.ndarray:
        return self @ np.eye(self.n)


class _Identity:
    def __init__(self, n):
        self.n = n

    def __matmul__(self, x):
        return np.array(x, dtype=float, copy=True)

    def rmatvec(self, x):
        return np.array(x, dtype=float, copy=True)

    def dense(self):
        return np.eye(self.n)


def identity_orthogonal(n: int):
    """The identity, usable wherever a Haar factor is expected."""
    return _Identity(n)


def sample_haar_orthogonal(n: int, rng: np.random.Generator) -> np.ndarray:
    """Dense Haar orthogonal matrix by sign-fixed QR of a Gaussian matrix."""
    if n < 1:
        raise InvalidDimensionError("orthogonal dimension must be >= 1", field="n")
    q, r = np.linalg.qr(rng.standard_normal((n, n)))
    d = np.sign(np.diag(r))
    d[d == 0] = 1.0
    return q * d


def _gaussian_entries(n_out, n_in, rng):
    return rng.standard_normal((n_out, n_in)) / np.sqrt(max(n_out, n_in))


def sample_singular_values(spec: SpectrumSpec, n_out: int, n_in: int, rng) -> np.ndarray:
    """Singular values (length ``min(n_out, n_in)``) for one layer."""
    if n_out < 1 or n_in < 1:
        raise InvalidDimensionError("dimensions must be >= 1", field="dims")
    k = min(n_out, n_in)
    if spec.variant == "IidGaussian":
        return np.linalg.svd(_gaussian_entries(n_out, n_in, rng), compute_uv=False)
    if spec.variant == "ScaledBeta":
        return BETA_SCALE * rng.beta(BETA_A, BETA_B, size=k)
    vals = np.asarray(spec.values, dtype=float)
    if vals.shape[0] != k:
        raise SpecMismatchError(f"Explicit spectrum has {vals.shape[0]} values, need {k}", field="spectrum")
    return vals.copy()


class DesignMatrix:
    """``A = O^T diag(lam) Q`` (``n_out x n_in``) or a dense Gaussian matrix.

    Products with ``A`` and ``A^T`` go through the factors unless the matrix is
    stored densely.  Instances are not mutated after construction.
    """

    def __init__(self, n_out, n_in, left=None, right=None, lam=None, dense=None):
        self.n_out = int(n_out)
        self.n_in = int(n_in)
        self.haar_left = left
        self.haar_right = right
        self._lam = None if lam is None else np.asarray(lam, dtype=float)
        self._dense = dense

    @property
    def delta(self) -> float:
        return self.n_out / self.n_in

    @property
    def singular_values(self) -> np.ndarray:
        if self._lam is None:
            self._lam = np.linalg.svd(self._dense, compute_uv=False)
        return self._lam

    @property
    def is_factored(self) -> bool:
        return self.haar_left is not None

    def matvec(self, x):
        """``A x`` for a vector or a block of columns."""
        if not self.is_factored:
            return self._dense @ x
        k = self._lam.shape[0]
        qx = self.haar_right @ x
        mid = np.zeros((self.n_out,) + qx.shape[1:])
        mid[:k] = self._lam.reshape((k,) + (1,) * (qx.ndim - 1)) * qx[:k]
        return self.haar_left.rmatvec(mid)

    def rmatvec(self, u):
        """``A^T u`` for a vector or a block of columns."""
        if not self.is_factored:
            return self._dense.T @ u
        k = self._lam.shape[0]
        ou = self.haar_left @ u
        mid = np.zeros((self.n_in,) + ou.shape[1:])
        mid[:k] = self._lam.reshape((k,) + (1,) * (ou.ndim - 1)) * ou[:k]
        return self.haar_right.rmatvec(mid)

    def dense(self) -> np.ndarray:
        """Materialize ``A``; meant for small matrices and tests."""
        if self._dense is not None:
            return self._dense
        return self.matvec(np.eye(self.n_in))


def build_design(spec: SpectrumSpec, n_out: int, n_in: int, rng) -> DesignMatrix:
    """Sample one layer's design matrix."""
    if n_out < 1 or n_in < 1:
        raise InvalidDimensionError("dimensions must be >= 1", field="dims")
    if spec.variant == "IidGaussian":
        return DesignMatrix(n_out, n_in, dense=_gaussian_entries(n_out, n_in, rng))
    left = HaarOrthogonal(n_out, rng)
    right = HaarOrthogonal(n_in, rng)
    lam = sample_singular_values(spec, n_out, n_in, rng)
    return DesignMatrix(n_out, n_in, left=left, right=right, lam=lam)


def relu(g, eps=None):
    """Middle-layer activation; ``eps`` is accepted for interface symmetry."""
    out = np.maximum(g, 0.0)
    return out if eps is None else out + eps


def sample_prior(prior: str, n: int, rng) -> np.ndarray:
    if prior == "GaussianUnit":
        return rng.standard_normal(n)
    if prior == "Rademacher":
        return rng.choice(np.array([-1.0, 1.0]), size=n)
    raise ValidationError(f"unknown prior {prior!r}", field="prior")


@dataclass
class Instance:
    """One draw of the model: ``x[l]`` feeds layer ``l``, ``g[l] = A_l x[l]``."""

    x: list
    g: list
    y: np.ndarray
    noise: np.ndarray = field(repr=False)

    @property
    def signal(self) -> np.ndarray:
        return self.x[0]


def build_designs(net: NetworkSpec, rng) -> list:
    return [build_design(net.spectra[l], net.dims[l + 1], net.dims[l], rng) for l in range(net.L)]


def generate_instance(net: NetworkSpec, designs: Sequence[DesignMatrix], rng, x1=None) -> Instance:
    """Draw ``x^1`` from the prior (unless given) and push it through the network."""
    if len(designs) != net.L:
        raise InvalidDimensionError("one design per layer required", field="designs")
    for l, A in enumerate(designs):
        if (A.n_out, A.n_in) != (net.dims[l + 1], net.dims[l]):
            raise InvalidDimensionError(f"design {l} has shape {(A.n_out, A.n_in)}", field="dims")
    x = sample_prior(net.prior, net.dims[0], rng) if x1 is None else np.asarray(x1, dtype=float)
    if x.shape != (net.dims[0],):
        raise InvalidDimensionError("signal length must equal n_1", field="dims")
    xs, gs = [x], []
    for l, A in enumerate(designs):
        g = A.matvec(xs[-1])
        gs.append(g)
        if l < net.L - 1:
            xs.append(relu(g))
    noise = net.sigma * rng.standard_normal(net.dims[-1])
    return Instance(x=xs, g=gs, y=gs[-1] + noise, noise=noise)
