"""Experiment configuration: YAML in, schema-validated dict and model objects out."""

from __future__ import annotations

import json
from importlib import resources

import jsonschema
import numpy as np
import yaml

from mdplab.montecarlo import ARule, PreconditionError, Region
from mdplab.processes import (
    BoxInnovation,
    EmpiricalIndicator,
    FiniteStateChain,
    FnOfLinearProcess,
    IIDBounded,
    StableMarkov,
    geometric_linear_process,
    uniform_grid,
)


class ConfigError(ValueError):
    pass


def schema() -> dict:
    return json.loads(resources.files("mdplab").joinpath("config_schema.json").read_text())


def validate(cfg) -> dict:
    if not isinstance(cfg, dict):
        raise ConfigError("config must be a mapping")
    v = jsonschema.Draft202012Validator(schema())
    errs = sorted(v.iter_errors(cfg), key=lambda e: list(e.path))
    if errs:
        e = errs[0]
        where = "/".join(str(p) for p in e.path) or "<root>"
        raise ConfigError(f"config invalid at {where}: {_short(e)}")
    if "a_rule" in cfg:
        try:
            a_rule(cfg).validate()
        except PreconditionError as exc:
            raise ConfigError(str(exc)) from exc
    return cfg


def _short(e) -> str:
    if e.validator == "oneOf" and e.context:
        best = min(e.context, key=lambda c: len(list(c.path)))
        return best.message
    return e.message


def load(path) -> dict:
    try:
        with open(path) as fh:
            cfg = yaml.safe_load(fh)
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    return validate(cfg)


def grid1d(desc) -> np.ndarray:
    if isinstance(desc, dict):
        return np.linspace(desc["start"], desc["stop"], desc["num"])
    return np.asarray(desc, dtype=float)


def a_rule(cfg) -> ARule:
    a = cfg.get("a_rule", {"kind": "power", "beta": 0.5})
    return ARule(a["kind"], a.get("beta", 0.5), a.get("c", 1.0))


def regions(cfg) -> list[Region]:
    return [Region(r["kind"], r["r"], tuple(r.get("u", ()))) for r in cfg.get("regions", [])]


def cvm_grid(desc) -> tuple[np.ndarray, np.ndarray]:
    return uniform_grid(desc["G"], desc.get("lo", 0.0), desc.get("hi", 1.0))


def _innovation(desc) -> BoxInnovation:
    desc = desc or {}
    return BoxInnovation(desc.get("kind", "uniform"), desc.get("low", -1.0), desc.get("high", 1.0), desc.get("dim", 1))


def build_model(desc: dict):
    """Instantiate the model described by a validated ``model`` section."""
    kind = desc["kind"]
    try:
        if kind == "IIDBounded":
            return IIDBounded(_innovation(desc.get("innovation")))
        if kind == "FiniteStateChain":
            return FiniteStateChain(desc["transition"], desc["values"])
        if kind == "StableMarkov":
            inn = _innovation(desc.get("innovation"))
            if "A" in desc:
                A = desc["A"]
            elif "rho" in desc:
                A = np.eye(inn.dim) * desc["rho"]
            else:
                raise ConfigError("StableMarkov needs A or rho")
            return StableMarkov(
                A, inn, desc.get("family", "affine"), desc.get("observable", "identity"), burn_in=desc.get("burn_in")
            )
        if kind == "FnOfLinearProcess":
            inn = _innovation(desc.get("innovation"))
            f = desc.get("f", "identity")
            if "coeffs" in desc:
                return FnOfLinearProcess(desc["coeffs"], inn, desc.get("i_min", 0), f=f)
            if "rho" not in desc:
                raise ConfigError("FnOfLinearProcess needs coeffs or rho")
            return geometric_linear_process(desc["rho"], desc.get("L", 24), desc.get("two_sided", False), inn, f=f)
        if kind == "EmpiricalIndicator":
            base = build_model(desc["base"])
            g, w = cvm_grid(desc.get("cvm_grid", {"G": 64}))
            return EmpiricalIndicator(base, g, w)
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(f"invalid {kind} parameters: {exc}") from exc
    raise ConfigError(f"unknown model kind {kind!r}")
