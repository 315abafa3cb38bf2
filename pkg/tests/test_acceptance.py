"""Acceptance criteria, one test each.

Every test records one PASS/FAIL line; the lines are listed in an
"acceptance criteria" section at the end of the pytest summary.
"""

import csv
import subprocess
import sys
import time
from fractions import Fraction

import numpy as np
import pytest

import oracles
from rigamp import cli, series
from rigamp.amp import onsager_coefficients, run_ml_rigamp
from rigamp.config import dumps, from_dict
from rigamp.cumulants import (
    analytic_moments_beta,
    estimate_moments_hutchinson,
    exact_moments,
    moments_to_cumulants,
)
from rigamp.denoise import conditional_params, hidden_h, last_h, middle_f, prior_f1, relu_joint_posterior
from rigamp.ensemble import SpectrumSpec, build_design, sample_singular_values, trial_rng
from rigamp.se import StateEvolution, se_update_Omega_mu, se_update_Sigma

from test_amp import _setup
from test_se import REF_NET, _kappa

H = 1e-5


def _rel(a, b):
    return abs(a - b) / max(abs(b), 1e-3)


def _spd(rng, n):
    B = rng.standard_normal((n, n))
    return B @ B.T / n + 0.5 * np.eye(n)


def _experiment_cfg(dims, spectrum, trials, seed):
    return from_dict(
        {
            "network": {"dims": list(dims), "spectra": spectrum, "prior": "GaussianUnit", "sigma": 0.2},
            "run": {"seed": seed, "T": 10, "trials": trials},
        }
    )


# ---------------------------------------------------------------- 1


def test_criterion_01_gaussian_cumulants(report):
    start = time.perf_counter()
    rng = trial_rng(2024)
    A = build_design(SpectrumSpec("IidGaussian"), 2000, 1000, rng)
    mom = estimate_moments_hutchinson(A, 5, 1000, rng)
    kap = moments_to_cumulants(mom, A.delta, 5).as_array()
    elapsed = time.perf_counter() - start
    k2d = kap[0] * A.delta
    ratios = [abs(kap[k - 1]) / kap[0] ** k for k in range(2, 6)]
    ok = 0.95 <= k2d <= 1.05 and max(ratios) <= 0.05 and elapsed <= 10.0
    report(1, ok, f"kappa2*delta={k2d:.4f} max|k2k|/k2^k={max(ratios):.4f} time={elapsed:.2f}s")


# ---------------------------------------------------------------- 2


def test_criterion_02_beta_moments(report):
    exact = analytic_moments_beta(Fraction(1, 2), 6, exact=True).m
    ref = [Fraction(6**k, (k + 1) * (2 * k + 1)) for k in range(1, 7)]
    exact_ok = list(exact) == ref
    target = np.array([float(v) for v in ref])

    lam2 = sample_singular_values(SpectrumSpec("ScaledBeta"), 100_000, 100_000, trial_rng(31)) ** 2
    powers = np.stack([lam2**k for k in range(1, 7)])
    emp = powers.mean(axis=1)
    stderr = powers.std(axis=1, ddof=1) / np.sqrt(lam2.size)
    rel = np.abs(emp / target - 1)
    z = np.abs(emp - target) / stderr
    # 1% is at least 2.7 standard errors only for k <= 2 at this sample size
    small_ok = rel[:2].max() <= 0.01 and z.max() <= 4.0

    lam2 = sample_singular_values(SpectrumSpec("ScaledBeta"), 10**7, 10**7, trial_rng(32)) ** 2
    big = np.array([np.mean(lam2**k) for k in range(1, 7)])
    big_rel = np.abs(big / target - 1).max()
    ok = exact_ok and small_ok and big_rel <= 0.01
    report(
        2,
        ok,
        f"exact={exact_ok} 1e5 draws: rel(k<=2)={rel[:2].max():.4f} max|z|={z.max():.2f} "
        f"1e7 draws: max rel={big_rel:.5f}",
    )


# ---------------------------------------------------------------- 3


def test_criterion_03_cumulant_oracle(report):
    rng = np.random.default_rng(3)
    worst = 0.0
    for i in range(50):
        delta = (0.5, 1.0, 2.0)[i % 3]
        if i % 2:
            n_in = 40
            n_out = int(delta * n_in)
            m = exact_moments(rng.uniform(0, 1.2, min(n_out, n_in)), n_out, 6).m
        else:
            m = tuple(rng.uniform(0.2, 2.0, 6))
        got = moments_to_cumulants(m, delta, 6).as_array()
        ref = oracles.cumulants_straight_line(m, delta, 6)
        worst = max(worst, np.max(np.abs(got - ref) / np.maximum(1.0, np.abs(ref))))
    report(3, worst <= 1e-12, f"50 tables, max scaled error={worst:.2e}")


# ---------------------------------------------------------------- 4


def _fd_worst(rng):
    worst = {}
    w = 0.0
    for _ in range(100):
        t = int(rng.integers(1, 4))
        mu, Om, Sg = rng.uniform(0.3, 1.5, t), _spd(rng, t), _spd(rng, t + 1)
        x, r = rng.uniform(-2, 3, t), rng.uniform(-2, 2, t)
        _, dx = middle_f(conditional_params(mu, Om, Sg, x, r))
        _, dr = hidden_h(conditional_params(mu, Om, Sg, x, r))
        for k in range(t):
            e = np.zeros(t)
            e[k] = H
            fx = (
                middle_f(conditional_params(mu, Om, Sg, x + e, r))[0] - middle_f(conditional_params(mu, Om, Sg, x - e, r))[0]
            ) / (2 * H)
            fr = (
                hidden_h(conditional_params(mu, Om, Sg, x, r + e))[0] - hidden_h(conditional_params(mu, Om, Sg, x, r - e))[0]
            ) / (2 * H)
            w = max(w, _rel(dx[k], fx), _rel(dr[k], fr))
    worst["middle/hidden"] = w

    w = 0.0
    for _ in range(100):
        t = int(rng.integers(1, 4))
        S = _spd(rng, t + 1)
        sig = rng.uniform(0.05, 1.0)
        r, y = rng.standard_normal(t), rng.standard_normal()
        E = S[0, 0] + sig**2
        _, dr, dy = last_h(S, E, sig, r, y)
        fy = (last_h(S, E, sig, r, y + H)[0] - last_h(S, E, sig, r, y - H)[0]) / (2 * H)
        w = max(w, _rel(dy, fy))
        for k in range(t):
            e = np.zeros(t)
            e[k] = H
            fr = (last_h(S, E, sig, r + e, y)[0] - last_h(S, E, sig, r - e, y)[0]) / (2 * H)
            w = max(w, _rel(dr[k], fr))
    worst["last"] = w

    for prior in ("GaussianUnit", "Rademacher"):
        w = 0.0
        for _ in range(100):
            t = int(rng.integers(1, 4))
            mu, Om, x = rng.uniform(0.2, 1.5, t), _spd(rng, t), rng.uniform(-2, 2, t)
            _, g = prior_f1(prior, mu, Om, x)
            for k in range(t):
                e = np.zeros(t)
                e[k] = H
                fd = (prior_f1(prior, mu, Om, x + e)[0] - prior_f1(prior, mu, Om, x - e)[0]) / (2 * H)
                w = max(w, _rel(g[k], fd))
        worst[prior] = w
    return worst


def test_criterion_04_denoisers(report):
    worst = _fd_worst(np.random.default_rng(4))
    fd_ok = max(worst.values()) <= 1e-5

    grid = np.linspace(-5, 5, 11)
    variances = (0.1, 1.0, 10.0)
    quad_err = 0.0
    for s0 in variances:
        for s1 in variances:
            R0, R1 = np.meshgrid(grid, grid, indexing="ij")
            p = relu_joint_posterior(R0.ravel(), s0, R1.ravel(), s1)
            got = np.stack([p.mean_z0, p.var_z0, p.mean_z1, p.var_z1], axis=1)
            for i, (a, b) in enumerate(zip(R0.ravel(), R1.ravel())):
                ref = oracles.relu_posterior_quad(a, s0, b, s1)
                quad_err = max(quad_err, np.max(np.abs(got[i] - ref)))
    ok = fd_ok and quad_err <= 1e-8
    fd_txt = " ".join(f"{k}={v:.1e}" for k, v in worst.items())
    report(4, ok, f"FD rel err: {fd_txt}; quadrature grid max abs err={quad_err:.1e}")


# ---------------------------------------------------------------- 5


def test_criterion_05_onsager_series(report):
    rng = np.random.default_rng(5)
    trunc = 0.0
    for n in (2, 3, 4, 6, 8):
        Psi, Phi, _, _ = oracles.random_blocks(rng, n)
        kap = np.zeros(n + 2)
        kap[0] = rng.uniform(0.3, 2.0)
        delta = rng.uniform(0.5, 2.0)
        Ma, Mb = series.onsager_matrices(Psi, Phi, kap, delta)
        trunc = max(trunc, np.max(np.abs(Ma - kap[0] * Psi)), np.max(np.abs(Mb - delta * kap[0] * Phi)))
    brute = 0.0
    for _ in range(20):
        Psi, Phi, _, _ = oracles.random_blocks(rng, 4)
        kap = rng.normal(size=5)
        delta = rng.uniform(0.5, 2.0)
        Ma, Mb = series.onsager_matrices(Psi, Phi, kap, delta)
        Ra, Rb = oracles.onsager_brute(Psi, Phi, kap, delta, 4)
        brute = max(brute, np.max(np.abs(Ma - Ra)), np.max(np.abs(Mb - Rb)))
        c = onsager_coefficients(Psi, Phi, kap, delta)
        brute = max(brute, np.max(np.abs(c.alpha - Ra[3, 1:])), np.max(np.abs(c.beta - Rb[3, 1:3])))
    ok = trunc <= 1e-14 and brute <= 1e-12
    report(5, ok, f"Gaussian truncation err={trunc:.1e}; 4x4 brute-force err={brute:.1e}")


# ---------------------------------------------------------------- 6


def test_criterion_06_se_recursions(report):
    rng = np.random.default_rng(6)
    brute = 0.0
    for _ in range(20):
        Psi, Phi, G, D = oracles.random_blocks(rng, 3)
        kap = rng.normal(size=8)
        delta = rng.uniform(0.5, 2.0)
        S = se_update_Sigma(Psi, Phi, G, D, kap)
        om, mu = se_update_Omega_mu(Psi, Phi, G, D, kap, delta)
        _, Mb = oracles.onsager_brute(Psi, Phi, kap, delta, 3)
        brute = max(
            brute,
            np.max(np.abs(S - oracles.sigma_brute(Psi, Phi, G, D, kap))),
            np.max(np.abs(om - oracles.omega_brute(Psi, Phi, G, D, kap, delta)[1:, 1:])),
            abs(mu - Mb[2, 0]),
        )

    se = StateEvolution(REF_NET, _kappa(REF_NET), 20_000, trial_rng(6))
    tb = se.initialize()
    nested = True
    prev = None
    for _ in range(6):
        se.step()
        snap = [(tb.Sigma_[l].copy(), tb.Omega_[l].copy(), tb.Psi[l].copy(), tb.Phi[l].copy()) for l in range(2)]
        if prev is not None:
            for l in range(2):
                for old, new in zip(prev[l], snap[l]):
                    k = old.shape[0]
                    nested &= bool(np.array_equal(new[:k, :k], old))
        prev = snap

    fact = 0.0
    for l in range(2):
        for sampler, C in ((se.GR[l], tb.Sigma_[l]), (se.W[l], tb.Omega_[l])):
            k = sampler.size
            fact = max(fact, np.max(np.abs(sampler.L @ sampler.L.T - C[:k, :k])) / np.max(np.diag(C)))
            np.linalg.cholesky(C[:k, :k] + 1e-12 * np.trace(C[:k, :k]) * np.eye(k))
    ok = brute <= 1e-12 and nested and fact <= 1e-12
    report(6, ok, f"3x3 brute-force err={brute:.1e}; nesting exact={nested}; factor residual={fact:.1e}")


# ---------------------------------------------------------------- 7


def test_criterion_07_amp_transcription(report):
    worst = 0.0
    for seed in range(10):
        prior = ("GaussianUnit", "Rademacher")[seed % 2]
        variant = ("ScaledBeta", "IidGaussian")[(seed // 2) % 2]
        _, kap, se, designs, inst = _setup((6, 9, 7), variant, prior, 0.3, T=2, n_mc=4000, seed=seed)
        tr = run_ml_rigamp(designs, inst, se, kap, 2, keep_states=True)
        ref = oracles.amp_transcription(
            [A.dense() for A in designs], inst.y, prior, 0.3, [k.as_array() for k in kap], se.tables, 2
        )
        for t in range(2):
            for l in range(2):
                worst = max(worst, np.max(np.abs(ref[t][l] - tr.states[l].Xhat[:, t])))
    report(7, worst <= 1e-12, f"10 seeds, max |engine - transcription|={worst:.1e}")


# ---------------------------------------------------------------- 8


@pytest.mark.slow
@pytest.mark.parametrize("spectrum", ["IidGaussian", "ScaledBeta"])
def test_criterion_08_se_amp_agreement(spectrum, tmp_path, report):
    start = time.perf_counter()
    cfg = _experiment_cfg((2000, 4000, 5200), spectrum, trials=20, seed=8)
    rows = cli.cmd_run(cfg, str(tmp_path / "agree.csv"))
    mean = {(t, l): ov for tag, t, l, ov, _ in rows if tag == "mean"}
    se = {(t, l): ov for tag, t, l, ov, _ in rows if tag == "SE"}
    gaps = {k: abs(mean[k] - se[k]) for k in se}
    worst = max(gaps, key=gaps.get)
    ok = len(gaps) == cfg.T * cfg.L and gaps[worst] <= 0.05
    report(
        8,
        ok,
        f"{spectrum}: max |AMP - SE| overlap={gaps[worst]:.4f} at (t, layer)={worst}; "
        f"time={time.perf_counter() - start:.0f}s",
    )


# ---------------------------------------------------------------- 9


@pytest.mark.slow
@pytest.mark.parametrize("spectrum", ["IidGaussian", "ScaledBeta"])
def test_criterion_09_sweep_shape(spectrum, tmp_path, report):
    grid = [0.7, 1.0, 1.3, 1.6, 2.0]
    cfg = _experiment_cfg((1500, 3000, 3900), spectrum, trials=20, seed=9)
    rows = cli.cmd_sweep(cfg, grid, str(tmp_path / "sweep.csv"))
    amp = {(d, l): (ov, err) for d, src, l, ov, err, _ in rows if src == "AMP"}
    se = {(d, l): ov for d, src, l, ov, _, _ in rows if src == "SE"}
    track = max(abs(amp[k][0] - se[k]) for k in se)
    # monotonicity concerns the signal overlap (first layer)
    ov = [amp[d, 1][0] for d in grid]
    err = [amp[d, 1][1] for d in grid]
    drops = [ov[i] - ov[i + 1] - max(err[i], err[i + 1]) for i in range(len(grid) - 1)]
    ok = max(drops) <= 0.0 and track <= 0.05
    curve = " ".join(f"{o:.3f}" for o in ov)
    report(9, ok, f"{spectrum}: layer-1 overlaps {curve}; max |AMP - SE|={track:.4f}")


# ---------------------------------------------------------------- 10


def test_criterion_10_determinism(tmp_path, report):
    cfg = from_dict(
        {
            "network": {"dims": [300, 600, 780], "spectra": "ScaledBeta", "prior": "GaussianUnit", "sigma": 0.2},
            "run": {"seed": 10, "T": 5, "trials": 3, "n_mc": 20_000},
        }
    )
    path = tmp_path / "cfg.yaml"
    path.write_text(dumps(cfg))
    outs = []
    for i in range(2):
        out = tmp_path / f"run{i}.csv"
        proc = subprocess.run(
            [sys.executable, "-m", "rigamp.cli", "run", "--config", str(path), "--out", str(out)],
            capture_output=True,
            text=True,
        )
        assert proc.returncode == 0, proc.stderr
        outs.append(out.read_bytes())
    with open(tmp_path / "run0.csv", newline="") as fh:
        n_rows = sum(1 for _ in csv.reader(fh)) - 1
    ok = outs[0] == outs[1] and n_rows > 0
    report(10, ok, f"two CLI runs, {n_rows} rows each, byte-identical={outs[0] == outs[1]}")
