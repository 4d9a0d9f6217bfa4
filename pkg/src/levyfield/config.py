"""YAML experiment configs: loading, schema checks, cross-field validation, digests.

The config is a small key tree; see ``configs/`` and the README for the
grammar. Top-level keys:

``model``         family, alpha, scale, negative_part {mass, gamma_moment_bound, index}
``kernel``        family, dimension, sigma | epsilon + gamma, truncation
``index_set``     {bodies: [{shape: box|ball|point, ...}]} or a single shape record
``volumes`` / ``scalings``  the ladder ``C_n``
``x_grid``, ``exceedance_levels``, ``coverage_levels``, ``replicates``, ``seed``,
``side_fields`` {y1, y2, bound, scale}, ``mode``, ``margin_budget``, ``delta``,
``tolerances``, ``name``
``gamma``         moment exponent of the minimal integrability condition
``light_part``    request light-jump simulation (finite-variation models only)
``grid_step``     evaluation grid spacing for ``simulate``
``geometry``      {k_list, L, scalings} for ``geometry-check``
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from typing import Optional

import yaml

from .extremes import ExperimentConfig
from .kernels import Kernel, integrable
from .regvar import TailModel

REQUIRED = ("model.family", "model.alpha", "kernel.family", "kernel.dimension", "index_set")

KNOWN_TOP = {"name", "model", "kernel", "index_set", "volumes", "scalings", "k", "L", "x_grid",
             "exceedance_levels", "coverage_levels", "replicates", "seed", "side_fields", "mode",
             "margin_budget", "delta", "tolerances", "gamma", "light_part", "grid_step", "geometry"}
EXPERIMENT_KEYS = KNOWN_TOP - {"gamma", "light_part", "grid_step", "geometry"}


class ConfigError(ValueError):
    """Invalid config; ``key`` and ``line`` locate the problem when known."""

    def __init__(self, message: str, key: Optional[str] = None, line: Optional[int] = None):
        self.key, self.line = key, line
        where = ""
        if key:
            where += f"key '{key}'"
        if line:
            where += f"{', ' if where else ''}line {line}"
        super().__init__(f"{where}: {message}" if where else message)


def _line_map(node, prefix="", out=None):
    """``dotted.key -> line number`` from a composed YAML node tree."""
    out = {} if out is None else out
    if isinstance(node, yaml.MappingNode):
        for k, v in node.value:
            key = f"{prefix}.{k.value}" if prefix else str(k.value)
            out[key] = k.start_mark.line + 1
            _line_map(v, key, out)
    return out


@dataclass
class LoadedConfig:
    raw: dict
    lines: dict = field(default_factory=dict)
    path: Optional[str] = None

    def line(self, key: str) -> Optional[int]:
        while key:
            if key in self.lines:
                return self.lines[key]
            key = key.rpartition(".")[0]
        return None

    def error(self, message: str, key: str) -> ConfigError:
        return ConfigError(message, key, self.line(key))


def load_config(path) -> LoadedConfig:
    with open(path) as fh:
        text = fh.read()
    return parse_config(text, str(path))


def parse_config(text: str, path: Optional[str] = None) -> LoadedConfig:
    try:
        node = yaml.compose(text)
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise ConfigError(f"YAML syntax error: {getattr(exc, 'problem', exc)}",
                          line=mark.line + 1 if mark else None) from None
    if not isinstance(raw, dict):
        raise ConfigError("config must be a mapping at the top level", line=1)
    return LoadedConfig(raw, _line_map(node), path)


def _get(raw: dict, dotted: str):
    cur = raw
    for part in dotted.split("."):
        if not isinstance(cur, dict) or part not in cur:
            raise KeyError(dotted)
        cur = cur[part]
    return cur


def check_schema(cfg: LoadedConfig) -> None:
    """Required keys, unknown keys and basic types; raises ``ConfigError``."""
    raw = cfg.raw
    for key in REQUIRED:
        try:
            _get(raw, key)
        except KeyError:
            raise cfg.error("missing required key", key) from None
    for key in raw:
        if key not in KNOWN_TOP:
            raise cfg.error("unknown key", key)
    for key in ("model.alpha", "model.scale", "kernel.sigma", "kernel.epsilon", "kernel.gamma",
                "kernel.truncation", "margin_budget", "delta", "gamma", "grid_step"):
        try:
            v = _get(raw, key)
        except KeyError:
            continue
        if v is None and key in ("kernel.truncation", "delta"):
            continue
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise cfg.error(f"expected a number, got {v!r}", key)
    for key in ("replicates", "seed", "k", "L", "kernel.dimension"):
        try:
            v = _get(raw, key)
        except KeyError:
            continue
        if isinstance(v, bool) or not isinstance(v, int):
            raise cfg.error(f"expected an integer, got {v!r}", key)
    for key in ("volumes", "scalings", "x_grid", "exceedance_levels"):
        v = raw.get(key)
        if v is not None and (not isinstance(v, list) or not all(isinstance(a, (int, float)) for a in v)):
            raise cfg.error("expected a list of numbers", key)


def build_experiment(cfg: LoadedConfig, seed: Optional[int] = None,
                     replicates: Optional[int] = None) -> ExperimentConfig:
    """Schema-check and construct the experiment config, applying CLI overrides."""
    check_schema(cfg)
    raw = {k: v for k, v in cfg.raw.items() if k in EXPERIMENT_KEYS}
    if seed is not None:
        raw["seed"] = seed
    if replicates is not None:
        raw["replicates"] = replicates
    for part, builder in (("model", TailModel.from_dict), ("kernel", Kernel.from_dict)):
        try:
            builder(dict(raw[part]))
        except (TypeError, ValueError) as exc:
            raise cfg.error(str(exc), part) from None
    try:
        return ExperimentConfig.from_dict(raw)
    except (TypeError, ValueError, KeyError) as exc:
        key = None
        for cand in ("index_set", "x_grid", "replicates", "mode", "side_fields", "tolerances", "volumes"):
            if cand in str(exc) or cand.replace("_", " ") in str(exc):
                key = cand
                break
        raise ConfigError(str(exc), key, cfg.line(key) if key else None) from None


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), default=str)


def config_digest(raw: dict) -> str:
    """SHA-256 of the canonical JSON form; insensitive to key order."""
    return hashlib.sha256(canonical_json(raw).encode()).hexdigest()


# ---------------------------------------------------------------------------
# cross-field validation


@dataclass
class Finding:
    level: str  # "error" | "warning" | "ok"
    key: str
    message: str


@dataclass
class ValidationReport:
    findings: list

    @property
    def ok(self) -> bool:
        return not any(f.level == "error" for f in self.findings)

    def render(self) -> str:
        lines = []
        for f in self.findings:
            lines.append(f"[{f.level.upper():7s}] {f.key}: {f.message}")
        lines.append("config OK" if self.ok else "config has errors")
        return "\n".join(lines)


def validate(cfg: LoadedConfig) -> ValidationReport:
    """Report-only validation; nothing is simulated."""
    out = []
    try:
        exp = build_experiment(cfg)
    except ConfigError as exc:
        return ValidationReport([Finding("error", exc.key or "config", str(exc))])

    model, kernel = exp.model, exp.kernel
    holder = kernel.holder() is not None
    fv = model.finite_variation
    if holder and fv:
        out.append(Finding("ok", "track", "Hölder kernel and finite-variation model: both tracks apply"))
    elif holder:
        out.append(Finding("ok", "track", "Hölder kernel with an unrestricted model"))
    elif fv:
        out.append(Finding("ok", "track", "finite-variation model with a discontinuous kernel; "
                                          "grid suprema carry no Hölder upper bound"))
    else:
        out.append(Finding("error", "track", "truncated kernel needs a finite-variation model"))
    if cfg.raw.get("light_part") and not fv:
        out.append(Finding("error", "light_part", "light-part simulation needs finite variation "
                                                  f"({model.family} with alpha={model.alpha:g} has infinite variation)"))

    gamma = cfg.raw.get("gamma", kernel.gamma if kernel.family == "power" else None)
    if gamma is not None:
        if not (0 < gamma < model.alpha and gamma <= 1):
            out.append(Finding("error", "gamma", f"gamma={gamma:g} must lie in (0, alpha) and (0, 1]"))
        elif not integrable(kernel, gamma):
            out.append(Finding("error", "gamma", "kernel envelope to the power gamma is not integrable"))
        else:
            out.append(Finding("ok", "gamma", f"gamma={gamma:g} admissible"))
        neg = model.negative_part
        if neg is not None and neg.gamma_moment(gamma) > neg.gamma_moment_bound:
            out.append(Finding("error", "model.negative_part",
                               f"gamma-moment {neg.gamma_moment(gamma):.4g} exceeds declared bound "
                               f"{neg.gamma_moment_bound:.4g}"))

    if kernel.family == "power" and kernel.truncation is None:
        q = model.alpha * kernel.power
        if q <= kernel.dimension:
            out.append(Finding("warning", "kernel", f"alpha*(d+epsilon)/gamma = {q:g} <= d: "
                                                    "sup-integral functional diverges"))
    step = cfg.raw.get("grid_step")
    if step is not None:
        if step <= 0:
            out.append(Finding("error", "grid_step", "must be positive"))
        else:
            cover = step * math.sqrt(kernel.dimension) / 2
            level = "ok" if step <= kernel.length_scale / 20 * (1 + 1e-12) else "warning"
            out.append(Finding(level, "grid_step", f"covering radius {cover:.4g} "
                                                   f"(kernel length scale {kernel.length_scale:.4g})"))
    if exp.mode == "no_kernel" and kernel.truncation is None:
        out.append(Finding("warning", "mode", "no_kernel mode ignores the kernel; truncation is unset"))
    if exp.volumes and min(exp.volumes) < 1:
        out.append(Finding("error", "volumes", "norming constants need volumes >= 1"))
    return ValidationReport(out)
