"""Hot elementwise and reflector kernels.

Every kernel exists twice: a numba ``@njit`` version and a plain numpy
version.  The numba path is used when numba imports cleanly and the
environment variable ``RIGAMP_DISABLE_NUMBA`` is unset (or ``0``).  Both
paths consume the same inputs and agree to rounding.
"""

from __future__ import annotations

import math
import os

import numpy as np
from scipy import special

_SQRT_2 = math.sqrt(2.0)
_SQRT_2_OVER_PI = math.sqrt(2.0 / math.pi)
_INV_SQRT_PI = 1.0 / math.sqrt(math.pi)

# below this standardized truncation point the closed-form variance loses
# digits to cancellation; switch to the asymptotic series
_TAIL_SWITCH = -40.0


def _numba_requested() -> bool:
    flag = os.environ.get("RIGAMP_DISABLE_NUMBA", "").strip().lower()
    return flag in ("", "0", "false", "no")


try:
    if not _numba_requested():
        raise ImportError("numba disabled by RIGAMP_DISABLE_NUMBA")
    from numba import njit

    HAVE_NUMBA = True
except ImportError:
    HAVE_NUMBA = False


def backend() -> str:
    """Name of the active kernel backend (``"numba"`` or ``"numpy"``)."""
    return "numba" if HAVE_NUMBA else "numpy"


# ---------------------------------------------------------------------------
# numpy path
# ---------------------------------------------------------------------------


def _truncnorm_np(mean, var):
    """Mean and variance of N(mean, var) conditioned on being positive."""
    sd = np.sqrt(var)
    a = mean / sd
    lam = np.empty_like(a)
    pos = a >= 0
    ap = a[pos]
    lam[pos] = np.exp(-0.5 * ap * ap) / math.sqrt(2 * math.pi) / (1.0 - 0.5 * special.erfc(ap / _SQRT_2))
    an = a[~pos]
    lam[~pos] = _SQRT_2_OVER_PI / special.erfcx(-an / _SQRT_2)
    shift = a + lam
    std_var = 1.0 - lam * shift
    tail = a < _TAIL_SWITCH
    if np.any(tail):
        c2 = a[tail] ** 2
        shift[tail] = (1.0 - (2.0 - (10.0 - 74.0 / c2) / c2) / c2) / np.sqrt(c2)
        std_var[tail] = (1.0 - (6.0 - (50.0 - 518.0 / c2) / c2) / c2) / c2
    std_var = np.maximum(std_var, 0.0)
    return sd * shift, var * std_var


def _log_ndtr_np(a):
    out = np.empty_like(a)
    pos = a >= 0
    out[pos] = np.log1p(-0.5 * special.erfc(a[pos] / _SQRT_2))
    an = a[~pos]
    out[~pos] = np.log(0.5 * special.erfcx(-an / _SQRT_2)) - 0.5 * an * an
    return out


def _relu_posterior_np(r0, s0, r1, s1):
    r0, s0, r1, s1 = np.broadcast_arrays(
        np.asarray(r0, dtype=np.float64),
        np.asarray(s0, dtype=np.float64),
        np.asarray(r1, dtype=np.float64),
        np.asarray(s1, dtype=np.float64),
    )
    shape = r0.shape
    r0, s0, r1, s1 = (np.ravel(v) for v in (r0, s0, r1, s1))
    ssum = s0 + s1
    rp = (r0 * s1 + r1 * s0) / ssum
    sp = s0 * s1 / ssum
    log_wp = -((r0 - r1) ** 2) / (2.0 * ssum) + 0.5 * np.log(sp) + _log_ndtr_np(rp / np.sqrt(sp))
    log_wn = -(r1 * r1) / (2.0 * s1) + 0.5 * np.log(s0) + _log_ndtr_np(-r0 / np.sqrt(s0))
    top = np.maximum(log_wp, log_wn)
    ep = np.exp(log_wp - top)
    en = np.exp(log_wn - top)
    pi_p = ep / (ep + en)
    pi_n = en / (ep + en)
    mp, vp = _truncnorm_np(rp, sp)
    # negative branch: z0 ~ N(r0, s0) restricted to z0 <= 0
    mneg, vn = _truncnorm_np(-r0, s0)
    mn = -mneg
    mean_z1 = pi_p * mp
    var_z1 = pi_p * vp + pi_p * pi_n * mp * mp
    mean_z0 = pi_p * mp + pi_n * mn
    var_z0 = pi_p * vp + pi_n * vn + pi_p * pi_n * (mp - mn) ** 2
    return tuple(v.reshape(shape) for v in (mean_z0, var_z0, mean_z1, var_z1))


def _build_reflectors_np(z):
    n = z.shape[0]
    v = np.zeros((n, n))
    tau = np.zeros(n)
    signs = np.empty(n)
    for k in range(n - 1):
        g = z[k, k:]
        norm = math.sqrt(float(g @ g))
        s = 1.0 if g[0] >= 0 else -1.0
        head = g[0] + s * norm
        if norm == 0.0 or head == 0.0:
            v[k, k] = 1.0
            signs[k] = 1.0
            continue
        v[k, k] = 1.0
        v[k, k + 1 :] = g[1:] / head
        tau[k] = 2.0 / float(v[k, k:] @ v[k, k:])
        signs[k] = -s
    signs[n - 1] = 1.0 if z[n - 1, n - 1] >= 0 else -1.0
    v[n - 1, n - 1] = 1.0
    return v, tau, signs


def _apply_reflectors_np(v, tau, signs, x, transpose):
    n = v.shape[0]
    y = np.array(x, dtype=np.float64, copy=True)
    if transpose:
        for k in range(n - 1):
            if tau[k] == 0.0:
                continue
            vk = v[k, k:]
            w = tau[k] * (vk @ y[k:])
            y[k:] -= np.multiply.outer(vk, w)
        y *= signs[:, None]
    else:
        y *= signs[:, None]
        for k in range(n - 2, -1, -1):
            if tau[k] == 0.0:
                continue
            vk = v[k, k:]
            w = tau[k] * (vk @ y[k:])
            y[k:] -= np.multiply.outer(vk, w)
    return y


# ---------------------------------------------------------------------------
# numba path
# ---------------------------------------------------------------------------

if HAVE_NUMBA:

    @njit(cache=True)
    def _erfcx_pos(u):
        # u >= 0; past u = 3 exp(u*u) amplifies the rounding of u*u, so use the
        # continued fraction 1 / (u + (1/2) / (u + 1 / (u + (3/2) / ...)))
        if u < 3.0:
            return math.exp(u * u) * math.erfc(u)
        acc = u
        for k in range(50, 0, -1):
            acc = u + 0.5 * k / acc
        return _INV_SQRT_PI / acc

    @njit(cache=True)
    def _log_ndtr_nb(a):
        if a >= 0.0:
            return math.log1p(-0.5 * math.erfc(a / _SQRT_2))
        return math.log(0.5 * _erfcx_pos(-a / _SQRT_2)) - 0.5 * a * a

    @njit(cache=True)
    def _truncnorm_nb(mean, var):
        sd = math.sqrt(var)
        a = mean / sd
        if a >= 0.0:
            lam = math.exp(-0.5 * a * a) / math.sqrt(2.0 * math.pi) / (1.0 - 0.5 * math.erfc(a / _SQRT_2))
        else:
            lam = _SQRT_2_OVER_PI / _erfcx_pos(-a / _SQRT_2)
        if a < _TAIL_SWITCH:
            c2 = a * a
            shift = (1.0 - (2.0 - (10.0 - 74.0 / c2) / c2) / c2) / math.sqrt(c2)
            std_var = (1.0 - (6.0 - (50.0 - 518.0 / c2) / c2) / c2) / c2
        else:
            shift = a + lam
            std_var = 1.0 - lam * shift
        if std_var < 0.0:
            std_var = 0.0
        return sd * shift, var * std_var

    @njit(cache=True)
    def _relu_posterior_flat(r0, s0, r1, s1, out):
        for i in range(r0.shape[0]):
            a0 = r0[i]
            v0 = s0[i]
            a1 = r1[i]
            v1 = s1[i]
            ssum = v0 + v1
            rp = (a0 * v1 + a1 * v0) / ssum
            sp = v0 * v1 / ssum
            log_wp = -((a0 - a1) ** 2) / (2.0 * ssum) + 0.5 * math.log(sp) + _log_ndtr_nb(rp / math.sqrt(sp))
            log_wn = -(a1 * a1) / (2.0 * v1) + 0.5 * math.log(v0) + _log_ndtr_nb(-a0 / math.sqrt(v0))
            top = max(log_wp, log_wn)
            ep = math.exp(log_wp - top)
            en = math.exp(log_wn - top)
            pi_p = ep / (ep + en)
            pi_n = en / (ep + en)
            mp, vp = _truncnorm_nb(rp, sp)
            mneg, vn = _truncnorm_nb(-a0, v0)
            mn = -mneg
            out[0, i] = pi_p * mp + pi_n * mn
            out[1, i] = pi_p * vp + pi_n * vn + pi_p * pi_n * (mp - mn) ** 2
            out[2, i] = pi_p * mp
            out[3, i] = pi_p * vp + pi_p * pi_n * mp * mp

    @njit(cache=True)
    def _build_reflectors_nb(z):
        n = z.shape[0]
        v = np.zeros((n, n))
        tau = np.zeros(n)
        signs = np.empty(n)
        for k in range(n - 1):
            norm2 = 0.0
            for j in range(k, n):
                norm2 += z[k, j] * z[k, j]
            norm = math.sqrt(norm2)
            s = 1.0 if z[k, k] >= 0 else -1.0
            head = z[k, k] + s * norm
            v[k, k] = 1.0
            if norm == 0.0 or head == 0.0:
                signs[k] = 1.0
                continue
            vv = 1.0
            for j in range(k + 1, n):
                v[k, j] = z[k, j] / head
                vv += v[k, j] * v[k, j]
            tau[k] = 2.0 / vv
            signs[k] = -s
        signs[n - 1] = 1.0 if z[n - 1, n - 1] >= 0 else -1.0
        v[n - 1, n - 1] = 1.0
        return v, tau, signs

    @njit(cache=True)
    def _reflect(v, tau, k, y):
        n = v.shape[0]
        m = y.shape[1]
        for c in range(m):
            w = 0.0
            for j in range(k, n):
                w += v[k, j] * y[j, c]
            w *= tau[k]
            if w != 0.0:
                for j in range(k, n):
                    y[j, c] -= w * v[k, j]

    @njit(cache=True)
    def _apply_reflectors_nb(v, tau, signs, y, transpose):
        n = v.shape[0]
        m = y.shape[1]
        if transpose:
            for k in range(n - 1):
                if tau[k] != 0.0:
                    _reflect(v, tau, k, y)
            for i in range(n):
                for c in range(m):
                    y[i, c] *= signs[i]
        else:
            for i in range(n):
                for c in range(m):
                    y[i, c] *= signs[i]
            for k in range(n - 2, -1, -1):
                if tau[k] != 0.0:
                    _reflect(v, tau, k, y)


# ---------------------------------------------------------------------------
# dispatch
# ---------------------------------------------------------------------------


def relu_posterior_moments(r0, s0, r1, s1):
    """Posterior moments of ``(z0, z1 = relu(z0))`` under two Gaussian messages.

    Returns ``(mean_z0, var_z0, mean_z1, var_z1)`` broadcast to the common
    shape of the inputs.  ``s0`` and ``s1`` are variances and must be positive.
    """
    if not HAVE_NUMBA:
        return _relu_posterior_np(r0, s0, r1, s1)
    r0, s0, r1, s1 = np.broadcast_arrays(
        np.asarray(r0, dtype=np.float64),
        np.asarray(s0, dtype=np.float64),
        np.asarray(r1, dtype=np.float64),
        np.asarray(s1, dtype=np.float64),
    )
    shape = r0.shape
    flat = [np.array(np.ravel(v)) for v in (r0, s0, r1, s1)]
    out = np.empty((4, flat[0].shape[0]))
    _relu_posterior_flat(flat[0], flat[1], flat[2], flat[3], out)
    return tuple(out[i].reshape(shape) for i in range(4))


def build_reflectors(z: np.ndarray):
    """Householder data of a Haar orthogonal matrix from a square Gaussian draw.

    Row ``k`` of ``z`` (entries ``k:``) is the Gaussian vector that fixes the
    ``k``-th reflector.  Returns ``(v, tau, signs)`` where row ``k`` of ``v``
    holds the unit-leading reflector, and the matrix is
    ``H_0 H_1 ... H_{n-2} diag(signs)``.
    """
    z = np.ascontiguousarray(z, dtype=np.float64)
    if HAVE_NUMBA:
        return _build_reflectors_nb(z)
    return _build_reflectors_np(z)


def apply_reflectors(v, tau, signs, x, transpose=False):
    """Multiply a vector or column block by the stored orthogonal matrix."""
    x = np.asarray(x, dtype=np.float64)
    squeeze = x.ndim == 1
    block = x[:, None] if squeeze else x
    if HAVE_NUMBA:
        y = np.array(block, dtype=np.float64, order="C", copy=True)
        _apply_reflectors_nb(v, tau, signs, y, transpose)
    else:
        y = _apply_reflectors_np(v, tau, signs, block, transpose)
    return y[:, 0] if squeeze else y
