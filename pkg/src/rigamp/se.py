"""State evolution: Monte Carlo tracking of the AMP iterates' scalar laws.

Per layer the recursion carries the mean vector ``mu_bar`` and covariance
``Omega_bar`` of the x-channel, the covariance ``Sigma_bar`` of
``(G, R_1..R_t)``, and four expectation matrices (index 0 = signal slot):

* ``Psi[i, k] = E[d X_hat_i / d x_k]`` and ``Gamma`` = Cov(X, X_hat_1..X_hat_t);
* ``Phi[i, 0] = E[d S_i / d g]``, ``Phi[i, k] = E[d S_i / d r_k]`` and
  ``Delta`` = Cov(0, S_1..S_t).

Entries are computed once and then frozen, so every table at iteration ``t``
is the leading block of the table at ``t + 1``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from . import series
from .denoise import BayesDenoisers
from .ensemble import NetworkSpec, relu, sample_prior
from .errors import DegenerateModelError, InvalidParameterError, NumericalError

EIG_FLOOR = 1e-10


def _grow(M, n):
    out = np.zeros((n, n))
    k = M.shape[0]
    out[:k, :k] = M
    return out


def sample_joint_gaussian(C, n, rng, layer=None, t=None):
    """``n`` draws of ``N(0, C)`` via an eigen-factorization with a floor."""
    C = np.asarray(C, dtype=float)
    C = 0.5 * (C + C.T)
    try:
        w, V = np.linalg.eigh(C)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"covariance factorization failed: {exc}", layer=layer, t=t) from None
    if not np.all(np.isfinite(w)):
        raise NumericalError("covariance has non-finite eigenvalues", layer=layer, t=t)
    F = V * np.sqrt(np.maximum(w, EIG_FLOOR))
    return rng.standard_normal((n, C.shape[0])) @ F.T


def se_update_Sigma(Psi, Phi, Gamma, Delta, kappa):
    """Covariance of ``(G, R_1..R_t)`` from size ``t + 1`` blocks."""
    return series.sigma_series(Psi, Phi, Gamma, Delta, kappa)


def se_update_Omega_mu(Psi, Phi, Gamma, Delta, kappa, delta):
    """Next x-channel covariance and mean entry from size ``t + 2`` blocks.

    ``Psi`` and ``Gamma`` may be one size short; their missing last row and
    column are zero-filled (they do not enter the result).
    Returns ``(Omega_bar_{t+1}, mu_bar_{t+1})``.
    """
    n = np.shape(Phi)[0]
    Psi = _grow(np.asarray(Psi, dtype=float), n)
    Gamma = _grow(np.asarray(Gamma, dtype=float), n)
    omega_prime = series.omega_series(Psi, Phi, Gamma, Delta, kappa, delta)
    _, M_beta = series.onsager_matrices(Psi, Phi, kappa, delta)
    return omega_prime[1:, 1:], float(M_beta[n - 1, 0])


@dataclass
class SeTables:
    """Growing per-layer state-evolution tables (layers are 0-based)."""

    L: int
    mu_: list = field(default_factory=list)
    Omega_: list = field(default_factory=list)
    Sigma_: list = field(default_factory=list)
    Psi: list = field(default_factory=list)
    Phi: list = field(default_factory=list)
    Gamma: list = field(default_factory=list)
    Delta: list = field(default_factory=list)
    E_X2: list = field(default_factory=list)
    var_G: list = field(default_factory=list)

    def mu(self, l, t):
        return np.asarray(self.mu_[l][:t])

    def Omega(self, l, t):
        return self.Omega_[l][:t, :t]

    def Sigma(self, l, t):
        return self.Sigma_[l][:t, :t]

    def phi_g1(self, l):
        return float(self.Phi[l][1, 0])


@dataclass
class SeTrajectory:
    """State-evolution output: tables plus predicted metrics ``[t - 1, l]``."""

    tables: SeTables
    overlap: np.ndarray
    mse: np.ndarray
    kappa: list
    deltas: tuple
    sigma: float
    n_mc: int
    prior: str = "GaussianUnit"

    @property
    def T(self):
        return self.overlap.shape[0]


class _NestedSampler:
    """Draws of ``N(0, C_t)`` for a growing, nested covariance ``C_t``.

    Samples are extended one coordinate at a time through an incremental
    Cholesky factor, so the first ``t`` coordinates never change once drawn.
    Conditional variances below ``EIG_FLOOR`` (relative) are floored.
    """

    def __init__(self, n, rng):
        self.n = n
        self.rng = rng
        self.L = np.zeros((0, 0))
        self.Z = np.zeros((n, 0))
        self.samples = np.zeros((n, 0))
        self.floored = 0

    @property
    def size(self):
        return self.L.shape[0]

    def extend(self, C, layer=None, t=None):
        C = np.asarray(C, dtype=float)
        k = self.size
        for j in range(k, C.shape[0]):
            row = C[j, :j]
            if j:
                ell = linalg.solve_triangular(self.L, row, lower=True)
            else:
                ell = np.zeros(0)
            d2 = C[j, j] - ell @ ell
            floor = EIG_FLOOR * max(abs(C[j, j]), 1e-300)
            if not np.isfinite(d2):
                raise NumericalError("covariance factorization failed", layer=layer, t=t)
            if d2 < floor:
                self.floored += 1
                d2 = floor
            Lnew = np.zeros((j + 1, j + 1))
            Lnew[:j, :j] = self.L
            Lnew[j, :j] = ell
            Lnew[j, j] = np.sqrt(d2)
            self.L = Lnew
            z = self.rng.standard_normal(self.n)
            self.Z = np.column_stack([self.Z, z])
            self.samples = np.column_stack([self.samples, self.Z[:, :j] @ ell + np.sqrt(d2) * z])
        return self.samples


class StateEvolution:
    """Incremental state evolution; call :meth:`initialize` then :meth:`step`.

    One persistent bank of scalar samples per layer is extended by a column
    per iteration.  Every table entry is a sample moment over that bank, so
    frozen entries and new entries share the same draws.
    """

    def __init__(self, net: NetworkSpec, kappa, n_mc, rng, denoisers=None):
        if int(n_mc) < 2:
            raise InvalidParameterError("n_mc must be >= 2", field="n_mc")
        if len(kappa) != net.L:
            raise InvalidParameterError("one cumulant table per layer", field="kappa")
        self.net = net
        self.kappa = [np.asarray(k.as_array() if hasattr(k, "as_array") else k, dtype=float) for k in kappa]
        self.deltas = net.deltas
        self.n_mc = int(n_mc)
        self.rng = rng
        self.tables = SeTables(L=net.L)
        self.denoisers = denoisers if denoisers is not None else BayesDenoisers(net.prior, net.sigma, self.tables)
        self.t = 0
        self.overlap = []
        self.mse = []

    # -- initialization ----------------------------------------------------

    def initialize(self):
        net, tb, n = self.net, self.tables, self.n_mc
        L = net.L
        # the persistent sample bank; every t = 1 moment below is a bank average
        self.X = [sample_prior(net.prior, n, self.rng)] + [None] * (L - 1)
        self.eps = self.rng.standard_normal(n)
        self.W = [_NestedSampler(n, self.rng) for _ in range(L)]
        self.GR = [_NestedSampler(n, self.rng) for _ in range(L)]
        self.Xhat = [np.zeros((n, 0)) for _ in range(L)]
        self.S = [None] * L
        e_x2, var_g = [], []
        for l in range(L):
            e_x2.append(float(np.mean(self.X[l] ** 2)))
            if not e_x2[l] > 0:
                raise DegenerateModelError("signal has zero second moment", layer=l + 1)
            var_g.append(self.kappa[l][0] * e_x2[l])
            G = self.GR[l].extend(np.array([[var_g[l]]]), layer=l + 1, t=1)[:, 0]
            if l < L - 1:
                self.X[l + 1] = relu(G)
        tb.E_X2, tb.var_G = e_x2, var_g
        tb.mu_ = [None] * L
        tb.Omega_ = [None] * L
        tb.Sigma_ = [np.array([[var_g[l]]]) for l in range(L)]
        tb.Psi = [np.zeros((1, 1)) for _ in range(L)]
        tb.Gamma = [np.array([[e_x2[l]]]) for l in range(L)]
        tb.Phi = [None] * L
        tb.Delta = [None] * L
        for l in reversed(range(L)):
            G = self.GR[l].samples[:, 0]
            if l == L - 1:
                # S_1 = y, so d S_1 / d g = 1
                S1, dg = G + net.sigma * self.eps, 1.0
            else:
                # S_1 = X_1 of the next layer = mu_1 relu(G) + W_1
                mu1 = tb.mu_[l + 1][0]
                W1 = self.W[l + 1].extend(tb.Omega_[l + 1][:1, :1], layer=l + 2, t=1)[:, 0]
                S1, dg = mu1 * self.X[l + 1] + W1, mu1 * float(np.mean(G > 0))
            self.S[l] = S1[:, None]
            Phi = np.zeros((2, 2))
            Phi[1, 0] = dg
            Delta = np.zeros((2, 2))
            Delta[1, 1] = float(np.mean(S1 * S1))
            tb.Phi[l], tb.Delta[l] = Phi, Delta
            om, mu1 = se_update_Omega_mu(tb.Psi[l], Phi, tb.Gamma[l], Delta, self.kappa[l], self.deltas[l])
            tb.Omega_[l] = om
            tb.mu_[l] = [mu1]
        self.t = 0
        return tb

    # -- one iteration -----------------------------------------------------

    def _x_samples(self, l, t):
        W = self.W[l].samples[:, :t]
        return self.X[l][:, None] * self.tables.mu(l, t)[None, :] + W

    def step(self, update_tail=True):
        """Advance from ``t`` to ``t + 1``: x-hat blocks, Sigma and metrics,
        then (if ``update_tail``) the S blocks, Omega and mu for the next step."""
        net, tb, den = self.net, self.tables, self.denoisers
        L, n = net.L, self.n_mc
        t = self.t + 1
        ov, ms = np.zeros(L), np.zeros(L)
        for l in range(L):
            X = self.X[l]
            self.W[l].extend(tb.Omega(l, t), layer=l + 1, t=t)
            Xk = self._x_samples(l, t)
            R_prev = self.GR[l - 1].samples[:, 1:] if l > 0 else None
            val, grad = den.f(l, t, Xk, R_prev)
            self._check(val, "x_hat", l, t)
            xhat = np.column_stack([self.Xhat[l], val])
            self.Xhat[l] = xhat
            Psi = _grow(tb.Psi[l], t + 1)
            Psi[t, 1:] = np.mean(grad, axis=0)
            Gamma = _grow(tb.Gamma[l], t + 1)
            Gamma[t, 0] = Gamma[0, t] = np.mean(val * X)
            cross = xhat.T @ val / n
            Gamma[t, 1:] = cross
            Gamma[1:, t] = cross
            tb.Psi[l], tb.Gamma[l] = Psi, Gamma
            full = se_update_Sigma(Psi, tb.Phi[l], Gamma, tb.Delta[l], self.kappa[l])
            Sigma = _grow(tb.Sigma_[l], t + 1)
            Sigma[t, :] = full[t, :]
            Sigma[:, t] = full[t, :]
            tb.Sigma_[l] = Sigma
            self.GR[l].extend(Sigma, layer=l + 1, t=t)
            exx, ehh, ex2 = Gamma[t, 0], Gamma[t, t], Gamma[0, 0]
            ov[l] = exx * exx / (ehh * ex2) if ehh > 0 else 0.0
            ms[l] = ehh - 2.0 * exx + ex2
        self.overlap.append(ov)
        self.mse.append(ms)
        self.t = t
        if not update_tail:
            return
        Y = self.GR[L - 1].samples[:, 0] + net.sigma * self.eps
        for l in range(L):
            last = l == L - 1
            R = self.GR[l].samples[:, 1:]
            if last:
                obs = Y
            else:
                obs = self._x_samples(l + 1, t)
            val, d_r, dg = den.h(l, t, R, obs, last)
            self._check(val, "s", l, t)
            S = np.column_stack([self.S[l], val])
            self.S[l] = S
            Phi = _grow(tb.Phi[l], t + 2)
            Phi[t + 1, 0] = dg
            Phi[t + 1, 1 : t + 1] = np.mean(d_r, axis=0)
            Delta = _grow(tb.Delta[l], t + 2)
            cross = S.T @ val / n
            Delta[t + 1, 1:] = cross
            Delta[1:, t + 1] = cross
            tb.Phi[l], tb.Delta[l] = Phi, Delta
            om, mu_new = se_update_Omega_mu(tb.Psi[l], Phi, tb.Gamma[l], Delta, self.kappa[l], self.deltas[l])
            Omega = _grow(tb.Omega_[l], t + 1)
            Omega[t, :] = om[t, :]
            Omega[:, t] = om[t, :]
            tb.Omega_[l] = Omega
            tb.mu_[l] = list(tb.mu_[l]) + [mu_new]

    @staticmethod
    def _check(a, what, l, t):
        if not np.all(np.isfinite(a)):
            raise NumericalError(f"non-finite {what} samples", layer=l + 1, t=t)

    def trajectory(self) -> SeTrajectory:
        return SeTrajectory(
            tables=self.tables,
            overlap=np.array(self.overlap).reshape(len(self.overlap), self.net.L),
            mse=np.array(self.mse).reshape(len(self.mse), self.net.L),
            kappa=self.kappa,
            deltas=self.deltas,
            sigma=self.net.sigma,
            n_mc=self.n_mc,
            prior=self.net.prior,
        )


def se_initialize(net, kappa, n_mc, rng, denoisers=None) -> StateEvolution:
    """Build the ``t = 1`` tables (closed form for the ReLU network)."""
    se = StateEvolution(net, kappa, n_mc, rng, denoisers)
    se.initialize()
    return se


def run_state_evolution(net, kappa, T, n_mc, rng, denoisers=None) -> SeTrajectory:
    """Run ``T`` iterations and return the trajectory with predicted metrics."""
    if int(T) < 1:
        raise InvalidParameterError("T must be >= 1", field="T")
    se = se_initialize(net, kappa, n_mc, rng, denoisers)
    for t in range(1, T + 1):
        # the last iteration's S blocks would only feed iteration T + 1
        se.step(update_tail=t < T)
    return se.trajectory()
