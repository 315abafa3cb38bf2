"""Command-line harness: state evolution, multi-trial AMP runs, sweeps and
cumulant inspection.

Results are tidy CSV (``trial,t,layer,overlap,mse``); run metadata goes to a
JSON sidecar next to the CSV (``<out>.manifest.json``).
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from . import __version__, _kernels
from .amp import run_ml_rigamp
from .config import ExperimentConfig, load_config
from .cumulants import (
    cumulant_tables,
    default_order,
    estimate_moments_hutchinson,
    moments_to_cumulants,
)
from .ensemble import DesignMatrix, NetworkSpec, SpectrumSpec, build_design, build_designs, generate_instance, trial_rng
from .errors import InvalidParameterError, NumericalError, ValidationError
from .se import run_state_evolution

HEADER = ("trial", "t", "layer", "overlap", "mse")
SWEEP_HEADER = ("delta1", "source", "layer", "overlap", "stderr", "mse")

# RNG stream ids under (seed, trial)
_STREAM_TRIAL = 0
_STREAM_SE = 1
_STREAM_PROBES = 2
_STREAM_REFERENCE = 3

THREADS_ENV = "RIGAMP_WORKERS"


def _fmt(x) -> str:
    return format(float(x), ".17g")


def _kappa_for_se(cfg: ExperimentConfig, net: NetworkSpec):
    K = default_order(cfg.T)
    if cfg.cumulants == "analytic":
        return cumulant_tables(net.spectra, net.dims, K)
    # estimated mode: cumulants of one reference design draw per layer
    rng = trial_rng(cfg.seed, 0, _STREAM_REFERENCE)
    designs = build_designs(net, rng)
    return [moments_to_cumulants(estimate_moments_hutchinson(A, K, cfg.probes, rng), A.delta, K) for A in designs]


def run_se(cfg: ExperimentConfig, net: NetworkSpec = None):
    net = net or cfg.network()
    kappa = _kappa_for_se(cfg, net)
    return run_state_evolution(net, kappa, cfg.T, cfg.n_mc, trial_rng(cfg.seed, 0, _STREAM_SE)), kappa


def run_trial(cfg: ExperimentConfig, net: NetworkSpec, se, kappa, trial: int):
    """One AMP run on a fresh instance; returns ``(overlap, mse)`` arrays ``[t, l]``."""
    rng = trial_rng(cfg.seed, trial, _STREAM_TRIAL)
    designs = build_designs(net, rng)
    inst = generate_instance(net, designs, rng)
    if cfg.cumulants == "estimated":
        K = default_order(cfg.T)
        prng = trial_rng(cfg.seed, trial, _STREAM_PROBES)
        kappa = [
            moments_to_cumulants(estimate_moments_hutchinson(A, K, cfg.probes, prng), A.delta, K) for A in designs
        ]
    traj = run_ml_rigamp(designs, inst, se, kappa, cfg.T, onsager=cfg.onsager, dg=cfg.dg, damping=cfg.damping)
    return traj.overlap, traj.mse


def _trial_job(args):
    cfg, net, se, kappa, trial = args
    return run_trial(cfg, net, se, kappa, trial)


def _workers(cfg):
    env = os.environ.get(THREADS_ENV)
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ValidationError(f"{THREADS_ENV} must be an integer", field=THREADS_ENV) from None
    return cfg.workers


def run_trials(cfg, net, se, kappa):
    """All trials, ordered by trial id regardless of the worker count."""
    jobs = [(cfg, net, se, kappa, i) for i in range(cfg.trials)]
    workers = _workers(cfg)
    results = []
    if workers <= 1:
        for job in jobs:
            results.append(_trial_job(job))
            yield job[-1], results[-1]
        return
    with ProcessPoolExecutor(max_workers=workers) as pool:
        for job, res in zip(jobs, pool.map(_trial_job, jobs)):
            yield job[-1], res


def se_rows(se):
    rows = []
    for t in range(se.T):
        for l in range(se.overlap.shape[1]):
            rows.append(("SE", t + 1, l + 1, se.overlap[t, l], se.mse[t, l]))
    return rows


def summary_rows(overlaps, mses):
    """Mean and standard error across trials of every ``(t, layer)`` cell."""
    ov = np.asarray(overlaps)
    ms = np.asarray(mses)
    n = ov.shape[0]
    mean_ov, mean_ms = ov.mean(axis=0), ms.mean(axis=0)
    if n > 1:
        se_ov = ov.std(axis=0, ddof=1) / np.sqrt(n)
        se_ms = ms.std(axis=0, ddof=1) / np.sqrt(n)
    else:
        se_ov = np.zeros_like(mean_ov)
        se_ms = np.zeros_like(mean_ms)
    rows = []
    for tag, a, b in (("mean", mean_ov, mean_ms), ("stderr", se_ov, se_ms)):
        for t in range(a.shape[0]):
            for l in range(a.shape[1]):
                rows.append((tag, t + 1, l + 1, a[t, l], b[t, l]))
    return rows


def render_rows(rows, header=HEADER) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(v) if isinstance(v, (float, np.floating)) else v for v in row])
    return buf.getvalue()


def _write(path, text):
    if path in (None, "-"):
        sys.stdout.write(text)
        return
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)


def _manifest(path, cfg, timings, status="complete", extra=None):
    if path in (None, "-"):
        return
    doc = {
        "config_hash": cfg.digest(),
        "seed": cfg.seed,
        "version": __version__,
        "backend": _kernels.backend(),
        "numpy": np.__version__,
        "status": status,
        "timings": timings,
        "config": cfg.to_dict(),
    }
    if extra:
        doc.update(extra)
    with open(f"{path}.manifest.json", "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def cmd_run(cfg: ExperimentConfig, out=None):
    """SE once, then ``cfg.trials`` AMP runs; writes result rows and returns them."""
    out = out if out is not None else cfg.output
    net = cfg.network()
    timings = {}
    t0 = time.perf_counter()
    se, kappa = run_se(cfg, net)
    timings["se_seconds"] = time.perf_counter() - t0
    rows = se_rows(se)
    overlaps, mses = [], []
    t0 = time.perf_counter()
    try:
        for trial, (ov, ms) in run_trials(cfg, net, se, kappa):
            overlaps.append(ov)
            mses.append(ms)
            for t in range(ov.shape[0]):
                for l in range(ov.shape[1]):
                    rows.append((trial, t + 1, l + 1, ov[t, l], ms[t, l]))
    except (NumericalError, ValidationError) as exc:
        timings["amp_seconds"] = time.perf_counter() - t0
        if overlaps:
            rows += summary_rows(overlaps, mses)
        _write(out, render_rows(rows))
        _manifest(out, cfg, timings, status="truncated", extra={"error": str(exc), "stage": "amp"})
        raise
    timings["amp_seconds"] = time.perf_counter() - t0
    rows += summary_rows(overlaps, mses)
    _write(out, render_rows(rows))
    _manifest(out, cfg, timings)
    return rows


def cmd_se(cfg: ExperimentConfig, out=None):
    out = out if out is not None else cfg.output
    t0 = time.perf_counter()
    se, _ = run_se(cfg)
    rows = se_rows(se)
    _write(out, render_rows(rows))
    _manifest(out, cfg, {"se_seconds": time.perf_counter() - t0})
    return rows


def sweep_dims(dims, delta1):
    """``n_1`` fixed, ``n_2 = round(delta1 n_1)``, later ratios kept from ``dims``."""
    new = [dims[0], int(round(delta1 * dims[0]))]
    for l in range(2, len(dims)):
        new.append(int(round(dims[l] / dims[l - 1] * new[-1])))
    if any(d < 1 for d in new):
        raise ValidationError(f"grid value {delta1} yields an empty layer", field="grid")
    return tuple(new)


def cmd_sweep(cfg: ExperimentConfig, grid, out=None):
    """Final-iteration overlap per ``delta1``: one AMP row and one SE row per layer."""
    out = out if out is not None else cfg.output
    if not grid:
        raise ValidationError("grid must list at least one value", field="grid")
    rows, timings = [], {}
    for d1 in grid:
        if not d1 > 0:
            raise ValidationError("grid values must be positive", field="grid")
        sub = cfg.with_overrides(dims=sweep_dims(cfg.dims, d1))
        net = sub.network()
        t0 = time.perf_counter()
        se, kappa = run_se(sub, net)
        ovs, mss = [], []
        for _, (ov, ms) in run_trials(sub, net, se, kappa):
            ovs.append(ov[-1])
            mss.append(ms[-1])
        ovs, mss = np.array(ovs), np.array(mss)
        n = ovs.shape[0]
        err = ovs.std(axis=0, ddof=1) / np.sqrt(n) if n > 1 else np.zeros(ovs.shape[1])
        for l in range(ovs.shape[1]):
            rows.append((d1, "AMP", l + 1, ovs[:, l].mean(), err[l], mss[:, l].mean()))
            rows.append((d1, "SE", l + 1, se.overlap[-1, l], 0.0, se.mse[-1, l]))
        timings[_fmt(d1)] = time.perf_counter() - t0
    _write(out, render_rows(rows, SWEEP_HEADER))
    _manifest(out, cfg, timings, extra={"grid": [float(g) for g in grid]})
    return rows


def _read_matrix(path):
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            raw = [r for r in csv.reader(fh) if r and any(c.strip() for c in r)]
    except OSError as exc:
        raise ValidationError(f"cannot read matrix: {exc}", field="matrix") from None
    if not raw:
        raise ValidationError("matrix file is empty", field="matrix")
    width = len(raw[0])
    for i, r in enumerate(raw):
        if len(r) != width:
            raise ValidationError(f"ragged CSV: row {i + 1} has {len(r)} entries, expected {width}", field="matrix")
    try:
        M = np.array([[float(c) for c in r] for r in raw])
    except ValueError as exc:
        raise ValidationError(f"non-numeric matrix entry: {exc}", field="matrix") from None
    if not np.all(np.isfinite(M)):
        raise ValidationError("matrix entries must be finite", field="matrix")
    return M


def cmd_cumulants(K, probes=20, seed=0, matrix=None, spec=None, rows=None, cols=None, out=None):
    """Hutchinson moments and free cumulants for one matrix; returns the table."""
    if int(K) != K or K < 1:
        raise InvalidParameterError("order must be >= 1", field="order")
    if int(probes) != probes or probes < 1:
        raise InvalidParameterError("probes must be >= 1", field="probes")
    rng = trial_rng(seed, 0, _STREAM_PROBES)
    if matrix is not None:
        M = _read_matrix(matrix)
        A = DesignMatrix(M.shape[0], M.shape[1], dense=M)
    else:
        if spec is None or rows is None or cols is None:
            raise ValidationError("give --matrix or all of --spec, --rows, --cols", field="matrix")
        if spec == "Explicit":
            raise ValidationError("Explicit spectra need a matrix file", field="spec")
        A = build_design(SpectrumSpec(spec), rows, cols, trial_rng(seed, 0, _STREAM_REFERENCE))
    mom = estimate_moments_hutchinson(A, K, probes, rng)
    kap = moments_to_cumulants(mom, A.delta, K)
    lines = ["k,m2k,m2k_stderr,kappa2k"]
    for k in range(K):
        lines.append(f"{k + 1},{_fmt(mom.m[k])},{_fmt(mom.stderr[k])},{_fmt(kap.kappa[k])}")
    text = "\n".join(lines) + "\n"
    sys.stdout.write(f"# n_out={A.n_out} n_in={A.n_in} delta={_fmt(A.delta)} probes={probes}\n")
    sys.stdout.write(text)
    if out is not None:
        _write(out, text)
    return mom, kap


def _parse_grid(text):
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ValidationError(f"bad grid {text!r}", field="grid") from None


def build_parser():
    p = argparse.ArgumentParser(prog="rigamp", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="state evolution plus multi-trial AMP")
    r.add_argument("--config", required=True)
    r.add_argument("--seed", type=int)
    r.add_argument("--trials", type=int)
    r.add_argument("--iters", type=int)
    r.add_argument("--out")

    s = sub.add_parser("se", help="state evolution only")
    s.add_argument("--config", required=True)
    s.add_argument("--out", required=True)

    w = sub.add_parser("sweep", help="final overlap over a grid of first-layer aspect ratios")
    w.add_argument("--config", required=True)
    w.add_argument("--grid", required=True, help="comma-separated delta_1 values")
    w.add_argument("--out", required=True)

    c = sub.add_parser("cumulants", help="spectral moments and free cumulants of one matrix")
    src = c.add_mutually_exclusive_group(required=True)
    src.add_argument("--matrix", help="dense CSV, one row per output coordinate")
    src.add_argument("--spec", choices=["IidGaussian", "ScaledBeta"])
    c.add_argument("--rows", type=int)
    c.add_argument("--cols", type=int)
    c.add_argument("--order", type=int, required=True)
    c.add_argument("--probes", type=int, default=20)
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--out")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "cumulants":
            cmd_cumulants(
                args.order, args.probes, args.seed, matrix=args.matrix, spec=args.spec,
                rows=args.rows, cols=args.cols, out=args.out,
            )
            return 0
        cfg = load_config(args.config)
        if args.command == "run":
            cfg = cfg.with_overrides(seed=args.seed, trials=args.trials, T=args.iters)
            cmd_run(cfg, args.out)
        elif args.command == "se":
            cmd_se(cfg, args.out)
        else:
            cmd_sweep(cfg, _parse_grid(args.grid), args.out)
    except ValidationError as exc:
        field = f" [{exc.field}]" if getattr(exc, "field", None) else ""
        print(f"rigamp: invalid input{field}: {exc}", file=sys.stderr)
        return 1
    except (NumericalError, FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"rigamp: numerical failure: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
