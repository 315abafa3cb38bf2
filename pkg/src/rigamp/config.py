"""Experiment configuration: a small YAML document with nested keys.

Example::

    network:
      dims: [2000, 4000, 5200]       # n_1 .. n_{L+1}
      spectra: IidGaussian           # one name for all layers, or a list
      prior: GaussianUnit
      sigma: 0.2
    run:
      seed: 1
      T: 10
      trials: 100
      n_mc: 200000
      cumulants: analytic            # or: estimated
      probes: 20

A spectrum entry is either a name or ``{variant: Explicit, values: [...]}``.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, replace
from typing import Optional

import yaml

from .ensemble import PRIORS, SPECTRA, NetworkSpec, SpectrumSpec
from .errors import ValidationError

DEFAULTS = {
    "T": 10,
    "trials": 100,
    "n_mc": 200_000,
    "probes": 20,
    "cumulants": "analytic",
    "onsager": "empirical",
    "dg": "stein",
    "damping": 0.0,
    "workers": 1,
}


@dataclass(frozen=True)
class ExperimentConfig:
    dims: tuple
    spectra: tuple
    prior: str
    sigma: float
    seed: int
    T: int = DEFAULTS["T"]
    trials: int = DEFAULTS["trials"]
    n_mc: int = DEFAULTS["n_mc"]
    probes: int = DEFAULTS["probes"]
    cumulants: str = DEFAULTS["cumulants"]
    onsager: str = DEFAULTS["onsager"]
    dg: str = DEFAULTS["dg"]
    damping: float = DEFAULTS["damping"]
    workers: int = DEFAULTS["workers"]
    output: Optional[str] = None
    explicit_values: tuple = field(default=())

    @property
    def L(self) -> int:
        return len(self.dims) - 1

    def network(self) -> NetworkSpec:
        specs = []
        for l, name in enumerate(self.spectra):
            vals = self.explicit_values[l] if name == "Explicit" else None
            specs.append(SpectrumSpec(name, tuple(vals) if vals is not None else None))
        return NetworkSpec(dims=self.dims, spectra=tuple(specs), prior=self.prior, sigma=self.sigma)

    def to_dict(self) -> dict:
        spectra = []
        for l, name in enumerate(self.spectra):
            if name == "Explicit":
                spectra.append({"variant": "Explicit", "values": list(self.explicit_values[l])})
            else:
                spectra.append(name)
        d = {
            "network": {"dims": list(self.dims), "spectra": spectra, "prior": self.prior, "sigma": self.sigma},
            "run": {k: getattr(self, k) for k in ("seed",) + tuple(DEFAULTS)},
        }
        if self.output is not None:
            d["output"] = self.output
        return d

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    def with_overrides(self, **kw) -> "ExperimentConfig":
        kw = {k: v for k, v in kw.items() if v is not None}
        return validate(replace(self, **kw))


def _int(v, name, lo=1):
    if isinstance(v, str):
        # YAML reads "2e5" as a string
        try:
            v = float(v)
        except ValueError:
            raise ValidationError(f"{name} must be an integer >= {lo}", field=name) from None
    if isinstance(v, bool) or not isinstance(v, (int, float)) or int(v) != v or v < lo:
        raise ValidationError(f"{name} must be an integer >= {lo}", field=name)
    return int(v)


def validate(cfg: ExperimentConfig) -> ExperimentConfig:
    for name in ("T", "trials", "n_mc", "probes", "workers"):
        _int(getattr(cfg, name), name, lo=2 if name == "n_mc" else 1)
    if isinstance(cfg.seed, bool) or not isinstance(cfg.seed, int) or not 0 <= cfg.seed < 2**64:
        raise ValidationError("seed must be an integer in [0, 2^64)", field="seed")
    if cfg.cumulants not in ("analytic", "estimated"):
        raise ValidationError("cumulants must be 'analytic' or 'estimated'", field="cumulants")
    if cfg.onsager not in ("empirical", "se"):
        raise ValidationError("onsager must be 'empirical' or 'se'", field="onsager")
    if cfg.dg not in ("stein", "se"):
        raise ValidationError("dg must be 'stein' or 'se'", field="dg")
    if not 0.0 <= float(cfg.damping) < 1.0:
        raise ValidationError("damping must lie in [0, 1)", field="damping")
    if cfg.prior not in PRIORS:
        raise ValidationError(f"prior must be one of {PRIORS}", field="prior")
    for name in cfg.spectra:
        if name not in SPECTRA:
            raise ValidationError(f"spectra entries must be one of {SPECTRA}", field="spectra")
    cfg.network()  # runs the remaining structural checks
    return cfg


def from_dict(doc) -> ExperimentConfig:
    if not isinstance(doc, dict):
        raise ValidationError("config must be a mapping", field="config")
    unknown = set(doc) - {"network", "run", "output"}
    if unknown:
        raise ValidationError(f"unknown top-level keys {sorted(unknown)}", field=sorted(unknown)[0])
    net = doc.get("network")
    run = doc.get("run", {}) or {}
    if not isinstance(net, dict):
        raise ValidationError("missing 'network' section", field="network")
    if not isinstance(run, dict):
        raise ValidationError("'run' must be a mapping", field="run")
    unknown = set(net) - {"L", "dims", "spectra", "prior", "sigma"}
    if unknown:
        raise ValidationError(f"unknown network keys {sorted(unknown)}", field=sorted(unknown)[0])
    unknown = set(run) - {"seed"} - set(DEFAULTS)
    if unknown:
        raise ValidationError(f"unknown run keys {sorted(unknown)}", field=sorted(unknown)[0])

    dims = net.get("dims")
    if not isinstance(dims, list) or len(dims) < 2:
        raise ValidationError("dims must be a list of at least two sizes", field="dims")
    dims = tuple(_int(d, "dims") for d in dims)
    if "L" in net and _int(net["L"], "L") != len(dims) - 1:
        raise ValidationError(f"dims has {len(dims)} entries but L={net['L']} needs {net['L'] + 1}", field="dims")
    L = len(dims) - 1

    raw = net.get("spectra", "IidGaussian")
    if isinstance(raw, (str, dict)):
        raw = [raw] * L
    if not isinstance(raw, list) or len(raw) != L:
        raise ValidationError(f"spectra must name one spectrum per layer ({L})", field="spectra")
    names, values = [], []
    for item in raw:
        if isinstance(item, dict):
            names.append(item.get("variant"))
            vals = item.get("values")
            if names[-1] == "Explicit" and not isinstance(vals, list):
                raise ValidationError("Explicit spectrum needs a values list", field="spectra")
            values.append(tuple(float(v) for v in vals) if vals is not None else None)
        else:
            names.append(item)
            values.append(None)

    if "prior" not in net:
        raise ValidationError("missing prior", field="prior")
    if "sigma" not in net:
        raise ValidationError("missing sigma", field="sigma")
    sigma = net["sigma"]
    if isinstance(sigma, bool) or not isinstance(sigma, (int, float)) or not sigma >= 0:
        raise ValidationError("sigma must be a number >= 0", field="sigma")
    if "seed" not in run:
        raise ValidationError("missing seed (no wall-clock seeding)", field="seed")

    kw = {k: run[k] for k in DEFAULTS if k in run}
    for k in ("T", "trials", "n_mc", "probes", "workers"):
        if k in kw:
            kw[k] = _int(kw[k], k, lo=2 if k == "n_mc" else 1)
    if "damping" in kw:
        try:
            kw["damping"] = float(kw["damping"])
        except (TypeError, ValueError):
            raise ValidationError("damping must be a number", field="damping") from None
    cfg = ExperimentConfig(
        dims=dims,
        spectra=tuple(names),
        prior=net["prior"],
        sigma=float(sigma),
        seed=run["seed"],
        output=doc.get("output"),
        explicit_values=tuple(values),
        **kw,
    )
    return validate(cfg)


def loads(text: str) -> ExperimentConfig:
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f" at line {mark.line + 1}, column {mark.column + 1}" if mark is not None else ""
        raise ValidationError(f"config parse error{where}: {getattr(exc, 'problem', exc)}", field="config") from None
    return from_dict(doc)


def load_config(path) -> ExperimentConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ValidationError(f"cannot read config: {exc}", field="config") from None
    return loads(text)


def dumps(cfg: ExperimentConfig) -> str:
    return yaml.safe_dump(cfg.to_dict(), sort_keys=False)


def save_config(cfg: ExperimentConfig, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dumps(cfg))
