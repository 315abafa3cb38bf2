"""Bayes-optimal scalar denoisers for the ReLU network and their derivatives.

Every denoiser reduces its vector input to a scalar Gaussian channel:

* the ``x``-channel: ``X_k = mu_k X + W_k`` with ``W ~ N(0, Omega)`` collapses to
  ``x_tilde = a_x . x``, an observation of ``X`` with noise variance ``rho``;
* the ``r``-channel: ``(G, R_1..R_t) ~ N(0, Sigma)`` gives ``G | R`` Gaussian
  with mean ``a_r . r`` and variance ``sigma``.

The ReLU layer couples a ``G``-prior from one channel with an
``X = relu(G)``-likelihood from the other.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg

from . import _kernels
from .errors import DegenerateChannelError, InvalidParameterError

RIDGE = 1e-12
FLOOR = 1e-12


def ridge_solve(M, b, what="covariance", layer=None, t=None):
    """Solve ``M z = b`` for symmetric PSD ``M`` with a relative diagonal ridge."""
    M = np.atleast_2d(np.asarray(M, dtype=float))
    n = M.shape[0]
    scale = np.trace(M) / n
    if not np.isfinite(scale) or scale <= 0:
        raise DegenerateChannelError(f"{what} has nonpositive trace", layer=layer, t=t)
    Mr = M + RIDGE * scale * np.eye(n)
    try:
        z = linalg.solve(Mr, b, assume_a="pos")
    except (linalg.LinAlgError, ValueError) as exc:
        raise DegenerateChannelError(f"{what} is singular: {exc}", layer=layer, t=t) from None
    if not np.all(np.isfinite(z)):
        raise DegenerateChannelError(f"{what} solve produced non-finite values", layer=layer, t=t)
    return z


def x_channel(mu_bar, Omega_bar, layer=None, t=None):
    """Weights ``a_x`` and noise variance ``rho`` of the reduced x-channel."""
    mu = np.atleast_1d(np.asarray(mu_bar, dtype=float))
    b = ridge_solve(Omega_bar, mu, what="Omega_bar", layer=layer, t=t)
    c = float(mu @ b)
    if not c > 0:
        raise DegenerateChannelError("mu_bar carries no signal", layer=layer, t=t)
    return b / c, max(1.0 / c, FLOOR)


def r_channel(Sigma_bar, layer=None, t=None):
    """Weights ``a_r`` and residual variance of ``G`` given ``R_1..R_t``."""
    S = np.asarray(Sigma_bar, dtype=float)
    a = ridge_solve(S[1:, 1:], S[1:, 0], what="Sigma_bar", layer=layer, t=t)
    return a, max(float(S[0, 0] - a @ S[1:, 0]), FLOOR)


@dataclass(frozen=True)
class ChannelParams:
    """Scalar reductions of the x- and r-channels for one input."""

    x_tilde: np.ndarray
    rho_tilde: float
    r_tilde: np.ndarray
    sigma_tilde: float
    a_x: np.ndarray
    a_r: np.ndarray


def conditional_params(mu_bar, Omega_bar, Sigma_bar, x, r) -> ChannelParams:
    """Both channel reductions; ``x`` and ``r`` may be ``(t,)`` or ``(n, t)``."""
    a_x, rho = x_channel(mu_bar, Omega_bar)
    a_r, sig = r_channel(Sigma_bar)
    return ChannelParams(
        x_tilde=np.asarray(x, dtype=float) @ a_x,
        rho_tilde=rho,
        r_tilde=np.asarray(r, dtype=float) @ a_r,
        sigma_tilde=sig,
        a_x=a_x,
        a_r=a_r,
    )


@dataclass(frozen=True)
class JointPosteriorMoments:
    mean_z0: np.ndarray
    var_z0: np.ndarray
    mean_z1: np.ndarray
    var_z1: np.ndarray


def relu_joint_posterior(r0, sigma0_sq, r1, sigma1_sq) -> JointPosteriorMoments:
    """Posterior of ``(z0, z1 = relu(z0))`` given ``z0 ~ N(r0, s0)`` and ``r1 ~ N(z1, s1)``.

    The posterior is a two-piece mixture: ``z0 > 0`` (with ``z1 = z0``) and
    ``z0 <= 0`` (with ``z1 = 0``).  Weights are combined in log space and the
    truncated-normal moments use the scaled complementary error function, so
    extreme inputs return finite moments.
    """
    if np.any(np.asarray(sigma0_sq) <= 0) or np.any(np.asarray(sigma1_sq) <= 0):
        raise InvalidParameterError("variances must be positive", field="variance")
    return JointPosteriorMoments(*_kernels.relu_posterior_moments(r0, sigma0_sq, r1, sigma1_sq))


def prior_f1(prior, mu_bar, Omega_bar, x):
    """Posterior mean of the first-layer signal and its partials in ``x_1..x_t``.

    ``x`` has shape ``(..., t)``; partials have the same shape.
    """
    mu = np.atleast_1d(np.asarray(mu_bar, dtype=float))
    b = ridge_solve(Omega_bar, mu, what="Omega_bar")
    c = float(mu @ b)
    u = np.asarray(x, dtype=float) @ b
    if prior == "GaussianUnit":
        val = u / (1.0 + c)
        grad = np.broadcast_to(b / (1.0 + c), np.shape(x)).copy()
        return val, grad
    if prior == "Rademacher":
        val = np.tanh(u)
        return val, (1.0 - val * val)[..., None] * b
    raise InvalidParameterError(f"unknown prior {prior!r}", field="prior")


def middle_f(params: ChannelParams):
    """``E[relu(G) | r-channel, x-channel]`` and its partials in ``x_1..x_t``."""
    post = relu_joint_posterior(params.r_tilde, params.sigma_tilde, params.x_tilde, params.rho_tilde)
    slope = post.var_z1 / params.rho_tilde
    return post.mean_z1, slope[..., None] * params.a_x


def hidden_h(params: ChannelParams):
    """``E[G | both channels] - E[G | R]`` and its partials in ``r_1..r_t``."""
    post = relu_joint_posterior(params.r_tilde, params.sigma_tilde, params.x_tilde, params.rho_tilde)
    slope = post.var_z0 / params.sigma_tilde - 1.0
    return post.mean_z0 - params.r_tilde, slope[..., None] * params.a_r


def last_h(Sigma_bar_L, E_Y2, sigma_noise, r, y):
    """Last-layer correction ``E[G | R, Y] - E[G | R]`` for ``Y = G + noise``.

    Returns ``(value, d_r, d_y)`` where ``d_r`` has the shape of ``r``.
    ``sigma_noise`` enters only through ``E_Y2``; it is accepted for checking.
    """
    S = np.asarray(Sigma_bar_L, dtype=float)
    t = S.shape[0] - 1
    if not np.isclose(E_Y2, S[0, 0] + sigma_noise**2, rtol=1e-12, atol=0.0):
        raise InvalidParameterError("E_Y2 must equal Sigma[0,0] + sigma^2", field="E_Y2")
    big = np.empty((t + 2, t + 2))
    big[: t + 1, : t + 1] = S
    big[: t + 1, t + 1] = S[:, 0]
    big[t + 1, : t + 1] = S[0, :]
    big[t + 1, t + 1] = E_Y2
    c = ridge_solve(big[1:, 1:], big[1:, 0], what="bordered Sigma_bar")
    a_r = ridge_solve(S[1:, 1:], S[1:, 0], what="Sigma_bar") if t > 0 else np.zeros(0)
    r = np.asarray(r, dtype=float)
    y = np.asarray(y, dtype=float)
    w = c[:t] - a_r
    val = r @ w + c[t] * y
    return val, np.broadcast_to(w, r.shape).copy(), np.full(np.shape(y), c[t])


def last_h_sigma(Sigma_bar_L, E_Y2):
    """Residual variance of ``G`` given ``R`` (the Stein scale for ``last_h``)."""
    return r_channel(Sigma_bar_L)[1]


def stein_dg(h_values, sigma_tilde_sq) -> float:
    """``E[d h / d g]`` for a Bayes correction ``h`` via Stein's lemma."""
    if not sigma_tilde_sq > 0:
        raise InvalidParameterError("sigma_tilde_sq must be positive", field="sigma_tilde_sq")
    h = np.asarray(h_values, dtype=float)
    return float(np.mean(h * h) / sigma_tilde_sq)


# ---------------------------------------------------------------------------
# bundles consumed by the state evolution and the AMP engine
# ---------------------------------------------------------------------------


class BayesDenoisers:
    """Posterior-mean denoisers parameterized by state-evolution tables.

    ``tables`` exposes ``mu(l, t)``, ``Omega(l, t)`` and ``Sigma(l, t)`` with
    0-based layers; sizes follow the iteration index.  Layers are 0-based here.

    ``f(l, t, X, R_prev)`` returns ``x_hat_t`` and its partials in
    ``x_1..x_t``; ``h(l, t, R, obs)`` returns ``s_{t+1}``, its partials in
    ``r_1..r_t`` and the Stein value of ``E[d s_{t+1} / d g]``.
    """

    def __init__(self, prior, sigma, tables):
        self.prior = prior
        self.sigma = float(sigma)
        self.tables = tables

    def _xch(self, l, t):
        return x_channel(self.tables.mu(l, t), self.tables.Omega(l, t), layer=l + 1, t=t)

    def _rch(self, l, t):
        return r_channel(self.tables.Sigma(l, t + 1), layer=l + 1, t=t)

    def f(self, l, t, X, R_prev=None):
        X = np.asarray(X)[:, :t]
        if l == 0:
            return prior_f1(self.prior, self.tables.mu(0, t), self.tables.Omega(0, t), X)
        a_x, rho = self._xch(l, t)
        a_r, sig = self._rch(l - 1, t)
        params = ChannelParams(X @ a_x, rho, np.asarray(R_prev)[:, :t] @ a_r, sig, a_x, a_r)
        return middle_f(params)

    def h(self, l, t, R, obs, last):
        R = np.asarray(R)[:, :t]
        if last:
            S = self.tables.Sigma(l, t + 1)
            val, d_r, _ = last_h(S, S[0, 0] + self.sigma**2, self.sigma, R, obs)
            _, sig = self._rch(l, t)
        else:
            a_r, sig = self._rch(l, t)
            a_x, rho = self._xch(l + 1, t)
            params = ChannelParams(np.asarray(obs)[:, :t] @ a_x, rho, R @ a_r, sig, a_x, a_r)
            val, d_r = hidden_h(params)
        return val, d_r, stein_dg(val, sig)


class ZeroDenoisers:
    """Annihilating denoisers (every output and derivative is zero)."""

    def f(self, l, t, X, R_prev=None):
        n = np.shape(X)[0]
        return np.zeros(n), np.zeros((n, t))

    def h(self, l, t, R, obs, last):
        n = np.shape(R)[0]
        return np.zeros(n), np.zeros((n, t)), 0.0
