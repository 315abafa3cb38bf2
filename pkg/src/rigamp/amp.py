"""Multi-layer AMP for rotationally invariant designs.

Per layer ``l`` and iteration ``t`` (both 1-based in the formulas below):

    x_t   = A^T s_t - sum_{i<t}  beta_{ti}  x_hat_i
    x_hat = f_t(x_1..x_t, r_1..r_t of layer l-1)
    r_t   = A x_hat_t - sum_{i<=t} alpha_{ti} s_i
    s_{t+1} = h_{t+1}(r_1..r_t, x_1..x_t of layer l+1)     (y for the last layer)

The memory coefficients come from the last rows of two matrix power series
in the empirical derivative matrices ``Psi`` and ``Phi`` and the layer's free
cumulants.  Denoisers are parameterized by a precomputed state evolution.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import series
from .denoise import BayesDenoisers
from .errors import InvalidParameterError, NumericalError


@dataclass(frozen=True)
class OnsagerCoeffs:
    alpha: np.ndarray  # alpha_{t1} .. alpha_{tt}
    beta: np.ndarray  # beta_{t1} .. beta_{t,t-1}


def onsager_coefficients(Psi, Phi, kappa, delta) -> OnsagerCoeffs:
    """Memory coefficients from ``(t+1) x (t+1)`` derivative matrices.

    The last row of ``Psi`` does not enter ``beta``; it may still be zero.
    """
    kap = kappa.as_array() if hasattr(kappa, "as_array") else kappa
    M_alpha, M_beta = series.onsager_matrices(Psi, Phi, kap, delta)
    t = np.shape(Psi)[0] - 1
    return OnsagerCoeffs(alpha=M_alpha[t, 1 : t + 1].copy(), beta=M_beta[t, 1:t].copy())


def _grow(M, n):
    out = np.zeros((n, n))
    k = M.shape[0]
    out[:k, :k] = M[:n, :n]
    return out


@dataclass
class AmpLayerState:
    """Iterate histories and empirical derivative matrices of one layer."""

    X: np.ndarray
    Xhat: np.ndarray
    R: np.ndarray
    S: np.ndarray
    Psi: np.ndarray
    Phi: np.ndarray


@dataclass
class AmpTrajectory:
    """Per-iteration metrics ``[t - 1, l]`` and run metadata."""

    overlap: np.ndarray
    mse: np.ndarray
    states: Optional[list] = None
    meta: dict = field(default_factory=dict)


def overlap(xhat, x) -> float:
    """Squared normalized correlation; 0 for a zero estimate."""
    nh = float(xhat @ xhat)
    nx = float(x @ x)
    if nh == 0.0 or nx == 0.0:
        return 0.0
    c = float(xhat @ x)
    return c * c / (nh * nx)


def amp_initialize(instance, designs, phi_g1) -> list:
    """Backward sweep with identity ``h_1``: ``s_1^L = y`` and
    ``s_1^l = A_{l+1}^T s_1^{l+1}``.

    ``phi_g1[l]`` is the ``t = 1`` entry ``E[d S_1 / d g]`` of layer ``l``.
    """
    L = len(designs)
    s1 = [None] * L
    s1[L - 1] = np.asarray(instance.y, dtype=float)
    for l in range(L - 2, -1, -1):
        s1[l] = designs[l + 1].rmatvec(s1[l + 1])
    states = []
    for l, A in enumerate(designs):
        Phi = np.zeros((2, 2))
        Phi[1, 0] = phi_g1[l]
        states.append(
            AmpLayerState(
                X=np.zeros((A.n_in, 0)),
                Xhat=np.zeros((A.n_in, 0)),
                R=np.zeros((A.n_out, 0)),
                S=s1[l][:, None].copy(),
                Psi=np.zeros((1, 1)),
                Phi=Phi,
            )
        )
    return states


class AmpEngine:
    """Stateful runner; :meth:`step` performs one full iteration over all layers.

    ``onsager`` selects the derivative matrices entering the memory terms:
    ``"empirical"`` (component averages) or ``"se"`` (state-evolution limits).
    ``dg`` selects the ``d/dg`` entries: ``"stein"`` or ``"se"``.
    """

    def __init__(self, designs, instance, kappa, se, denoisers=None, onsager="empirical", dg="stein", damping=0.0):
        if onsager not in ("empirical", "se"):
            raise InvalidParameterError("onsager must be 'empirical' or 'se'", field="onsager")
        if dg not in ("stein", "se"):
            raise InvalidParameterError("dg must be 'stein' or 'se'", field="dg")
        if not 0.0 <= damping < 1.0:
            raise InvalidParameterError("damping must lie in [0, 1)", field="damping")
        self.designs = list(designs)
        self.instance = instance
        self.L = len(self.designs)
        self.kappa = [np.asarray(k.as_array() if hasattr(k, "as_array") else k, dtype=float) for k in kappa]
        self.se = se
        tables = se.tables
        if denoisers is None:
            denoisers = BayesDenoisers(se.prior, se.sigma, tables)
        self.den = denoisers
        self.onsager = onsager
        self.dg = dg
        self.damping = float(damping)
        self.states = amp_initialize(instance, self.designs, [tables.phi_g1(l) for l in range(self.L)])
        self.t = 0

    def _matrices(self, l, size):
        st = self.states[l]
        if self.onsager == "se":
            tb = self.se.tables
            return _grow(tb.Psi[l], size), _grow(tb.Phi[l], size)
        return _grow(st.Psi, size), _grow(st.Phi, size)

    def step(self, compute_s=True):
        t = self.t + 1
        L, d = self.L, self.damping
        for l in range(L):
            A, st = self.designs[l], self.states[l]
            Psi, Phi = self._matrices(l, t + 1)
            beta = onsager_coefficients(Psi, Phi, self.kappa[l], A.delta).beta
            x = A.rmatvec(st.S[:, t - 1]) - st.Xhat[:, : t - 1] @ beta
            X = np.column_stack([st.X, x])
            R_prev = self.states[l - 1].R if l > 0 else None
            xhat, grad = self.den.f(l, t, X, R_prev)
            row = np.mean(grad, axis=0) if grad.size else np.zeros(t)
            if d and t > 1:
                xhat = (1 - d) * xhat + d * st.Xhat[:, t - 2]
                row = (1 - d) * row + d * np.append(st.Psi[t - 1, 1:], 0.0)
            self._check(xhat, "x_hat", l, t)
            st.X = X
            st.Xhat = np.column_stack([st.Xhat, xhat])
            st.Psi = _grow(st.Psi, t + 1)
            st.Psi[t, 1:] = row
            Psi, Phi = self._matrices(l, t + 1)
            alpha = onsager_coefficients(Psi, Phi, self.kappa[l], A.delta).alpha
            r = A.matvec(xhat) - st.S[:, :t] @ alpha
            self._check(r, "r", l, t)
            st.R = np.column_stack([st.R, r])
        self.t = t
        if not compute_s:
            return
        for l in range(L):
            st = self.states[l]
            last = l == L - 1
            obs = self.instance.y if last else self.states[l + 1].X
            s, d_r, dg = self.den.h(l, t, st.R, obs, last)
            row = np.mean(d_r, axis=0) if d_r.size else np.zeros(t)
            if d and t > 1:
                s = (1 - d) * s + d * st.S[:, t - 1]
                row = (1 - d) * row + d * np.append(st.Phi[t, 1:t], 0.0)
                dg = (1 - d) * dg + d * st.Phi[t, 0]
            if self.dg == "se":
                dg = float(self.se.tables.Phi[l][t + 1, 0])
            self._check(s, "s", l, t)
            st.S = np.column_stack([st.S, s])
            st.Phi = _grow(st.Phi, t + 2)
            st.Phi[t + 1, 0] = dg
            st.Phi[t + 1, 1 : t + 1] = row

    @staticmethod
    def _check(a, what, l, t):
        if not np.all(np.isfinite(a)):
            raise NumericalError(f"non-finite {what}", layer=l + 1, t=t)

    def metrics(self):
        ov = np.zeros(self.L)
        ms = np.zeros(self.L)
        for l, st in enumerate(self.states):
            x = self.instance.x[l]
            xh = st.Xhat[:, -1]
            ov[l] = overlap(xh, x)
            ms[l] = float(np.mean((xh - x) ** 2))
        return ov, ms


def run_ml_rigamp(
    designs, instance, se, kappa, T, denoisers=None, onsager="empirical", dg="stein", damping=0.0, keep_states=False
) -> AmpTrajectory:
    """Run ``T`` iterations and record per-iteration overlap and MSE."""
    if int(T) < 1:
        raise InvalidParameterError("T must be >= 1", field="T")
    if se.T < T:
        raise InvalidParameterError(f"state evolution covers {se.T} iterations, need {T}", field="T")
    start = time.perf_counter()
    eng = AmpEngine(designs, instance, kappa, se, denoisers, onsager=onsager, dg=dg, damping=damping)
    ov, ms = [], []
    for t in range(1, T + 1):
        eng.step(compute_s=t < T)
        o, m = eng.metrics()
        ov.append(o)
        ms.append(m)
    return AmpTrajectory(
        overlap=np.array(ov),
        mse=np.array(ms),
        states=eng.states if keep_states else None,
        meta={"seconds": time.perf_counter() - start},
    )
