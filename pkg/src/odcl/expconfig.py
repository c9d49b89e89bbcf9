"""Experiment configuration: flat key/value text with dotted section keys.

Syntax: one ``section.key = value`` per line, ``#`` starts a comment.
Keys are the contract; unknown keys are errors, never silent defaults.
Any key can be overridden by an environment variable named
``ODCL_<SECTION>__<KEY>`` (dots become double underscores, upper-cased).
"""
from __future__ import annotations

import os
from dataclasses import dataclass, replace

from .gridnet import ModelSpec
from .metrics import MetricConfig
from .pipeline import MODES, PipelineConfig
from .regularize import REG_METHODS, RegConfig
from .replay import POLICY_NONE, SELECT_POLICIES, UPDATE_POLICIES, BufferConfig
from .synthstream import StreamConfig

ENV_PREFIX = "ODCL_"


class ConfigError(ValueError):
    """Carries every collected validation problem, not just the first."""

    def __init__(self, errors: list[str]):
        super().__init__("; ".join(errors))
        self.errors = errors


def _parse_bool(s: str) -> bool:
    low = s.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _parse_seeds(s: str) -> tuple[int, ...]:
    items = [tok.strip() for tok in s.split(",") if tok.strip()]
    return tuple(int(tok) for tok in items)


def _parse_methods(s: str) -> tuple[tuple[str, str, str], ...]:
    triples = []
    for tok in (t.strip() for t in s.split(",") if t.strip()):
        parts = tok.split(":")
        if len(parts) != 3:
            raise ValueError(
                f"method {tok!r} is not an update:select:reg triple")
        triples.append(tuple(p.strip() for p in parts))
    return tuple(triples)


# key -> (target section, field name, converter)
_SCHEMA = {
    "stream.seed": ("stream", "seed", int),
    "stream.grid_h": ("stream", "grid_h", int),
    "stream.grid_w": ("stream", "grid_w", int),
    "stream.feat_dim": ("stream", "feat_dim", int),
    "stream.num_classes": ("stream", "num_classes", int),
    "stream.cycle_len": ("stream", "cycle_len", int),
    "stream.num_cycles": ("stream", "num_cycles", int),
    "stream.r_V": ("stream", "r_V", float),
    "stream.r_T": ("stream", "r_T", float),
    "stream.r_Sc": ("stream", "r_Sc", float),
    "stream.noise_sigma": ("stream", "noise_sigma", float),
    "stream.drift_amp": ("stream", "drift_amp", float),
    "stream.domain_sep": ("stream", "domain_sep", float),
    "stream.rule_pos_scale": ("stream", "rule_pos_scale", float),
    "model.arch": ("model", "arch", str),
    "model.hidden_dim": ("model", "hidden_dim", int),
    "model.init_seed": ("model", "init_seed", int),
    "model.init_scale": ("model", "init_scale", float),
    "buffer.capacity": ("buffer", "capacity", int),
    "buffer.batch_select": ("buffer", "batch_select", int),
    "buffer.update_policy": ("buffer", "update_policy", str),
    "buffer.select_policy": ("buffer", "select_policy", str),
    "buffer.mir_candidates": ("buffer", "mir_candidates", int),
    "buffer.mir_virtual_lr": ("buffer", "mir_virtual_lr", float),
    "buffer.rng_seed": ("buffer", "rng_seed", int),
    "buffer.select_low_importance": ("buffer", "select_low_importance", _parse_bool),
    "reg.method": ("reg", "method", str),
    "reg.lambda": ("reg", "lam", float),
    "reg.warmup_epochs": ("reg", "warmup_epochs", int),
    "reg.boundary_every_k": ("reg", "boundary_every_k", int),
    "reg.lwf_temperature": ("reg", "lwf_temperature", float),
    "reg.rwalk_fisher_alpha": ("reg", "rwalk_fisher_alpha", float),
    "reg.epsilon": ("reg", "epsilon", float),
    "pipeline.lr": ("pipeline", "lr", float),
    "pipeline.optimizer": ("pipeline", "optimizer", str),
    "pipeline.mode": ("pipeline", "mode", str),
    "metric.window": ("metric", "window", int),
    "metric.shift": ("metric", "shift", int),
    "metric.nds_halfwidth": ("metric", "nds_halfwidth", int),
    "run.methods": ("run", "methods", _parse_methods),
    "run.seeds": ("run", "seeds", _parse_seeds),
    "run.output_dir": ("run", "output_dir", str),
}

_VALID_UPDATE = UPDATE_POLICIES + (POLICY_NONE,)
_VALID_SELECT = SELECT_POLICIES + (POLICY_NONE,)


@dataclass(frozen=True)
class ExperimentConfig:
    base: PipelineConfig
    metric: MetricConfig
    methods: tuple[tuple[str, str, str], ...]
    seeds: tuple[int, ...]
    output_dir: str

    def pipeline_for(self, method: tuple[str, str, str], seed: int) -> PipelineConfig:
        """Materialize one run: policies from the method triple, all RNG
        streams derived from the run seed."""
        update, select, reg_method = method
        return replace(
            self.base,
            stream=replace(self.base.stream, seed=seed),
            model=replace(self.base.model, init_seed=1000 + seed),
            buffer=replace(self.base.buffer, update_policy=update,
                           select_policy=select, rng_seed=2000 + seed),
            reg=replace(self.base.reg, method=reg_method),
        )


def parse_config_text(text: str) -> dict[str, str]:
    """Raw key -> value strings; duplicate keys and bad lines are errors."""
    raw: dict[str, str] = {}
    errors: list[str] = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            errors.append(f"line {lineno}: expected 'key = value', got {line.strip()!r}")
            continue
        key, value = (part.strip() for part in stripped.split("=", 1))
        if key in raw:
            errors.append(f"line {lineno}: duplicate key {key}")
        raw[key] = value
    if errors:
        raise ConfigError(errors)
    return raw


def env_overrides(environ=None) -> dict[str, str]:
    """ODCL_SECTION__KEY=value pairs translated back to dotted keys."""
    environ = os.environ if environ is None else environ
    found = {}
    for name, value in environ.items():
        if not name.startswith(ENV_PREFIX):
            continue
        found[name[len(ENV_PREFIX):].lower().replace("__", ".")] = value
    return found


def validate_config(text: str, overrides: dict[str, str] | None = None,
                    environ=None) -> ExperimentConfig:
    """Full parse + invariant check; raises ConfigError with every problem."""
    raw = parse_config_text(text)
    raw.update(env_overrides(environ))
    raw.update(overrides or {})

    errors: list[str] = []
    sections: dict[str, dict] = {"stream": {}, "model": {}, "buffer": {},
                                 "reg": {}, "pipeline": {}, "metric": {}, "run": {}}
    for key, value in raw.items():
        spec = _SCHEMA.get(key)
        if spec is None:
            errors.append(f"unknown key {key!r}")
            continue
        section, fieldname, conv = spec
        try:
            sections[section][fieldname] = conv(value)
        except ValueError as exc:
            errors.append(f"{key}: {exc}")
    if errors:
        raise ConfigError(errors)

    stream = StreamConfig(**sections["stream"])
    model = ModelSpec(feat_dim=stream.feat_dim, num_classes=stream.num_classes,
                      **sections["model"])
    buffer = BufferConfig(**sections["buffer"])
    reg = RegConfig(**sections["reg"])
    base = PipelineConfig(stream=stream, model=model, buffer=buffer, reg=reg,
                          **sections["pipeline"])
    metric = MetricConfig.for_stream(stream, **sections["metric"])

    run_kw = sections["run"]
    methods = run_kw.get("methods",
                         ((buffer.update_policy, buffer.select_policy, reg.method),))
    seeds = run_kw.get("seeds", (0,))
    output_dir = run_kw.get("output_dir", "results")

    errors += base.problems()
    errors += [f"metric: {e}" for e in metric.problems()]
    if not seeds:
        errors.append("run.seeds: need at least one seed")
    if not methods:
        errors.append("run.methods: need at least one method triple")
    for update, select, reg_method in methods:
        if update not in _VALID_UPDATE:
            errors.append(f"run.methods: update policy {update!r} not in {_VALID_UPDATE}")
        if select not in _VALID_SELECT:
            errors.append(f"run.methods: select policy {select!r} not in {_VALID_SELECT}")
        if (update == POLICY_NONE) != (select == POLICY_NONE):
            errors.append("run.methods: memoryless needs both update and select = none")
        if reg_method not in REG_METHODS:
            errors.append(f"run.methods: reg method {reg_method!r} not in {REG_METHODS}")
        else:
            per_run = replace(buffer, update_policy=update, select_policy=select)
            errors += [f"run.methods {update}:{select}:{reg_method}: {e}"
                       for e in per_run.problems()]
    if errors:
        raise ConfigError(errors)
    return ExperimentConfig(base=base, metric=metric, methods=tuple(methods),
                            seeds=tuple(seeds), output_dir=output_dir)
