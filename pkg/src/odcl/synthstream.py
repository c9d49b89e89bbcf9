"""Deterministic cyclic two-domain stream of synthetic per-pixel classification frames.

Frames are random-access: every frame (and its oracle label) is a pure
function of (config, index), so past and future stream positions can be
regenerated at any time instead of stored.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

DOMAIN_A = "A"
DOMAIN_B = "B"

# Disagreement floor between the two labeling rules, checked at validation.
MIN_RULE_DISAGREEMENT = 0.20


class StreamExhausted(IndexError):
    """Requested frame index lies outside the stream."""


@dataclass(frozen=True)
class StreamConfig:
    """Generator settings for one cyclic stream.

    ``r_V`` is frames per virtual second; ``r_T`` and ``r_Sc`` are virtual
    seconds per teacher label / per training epoch. The stream alternates
    A/B segments of ``cycle_len`` frames, ``num_cycles`` full A+B cycles.
    """

    seed: int = 0
    grid_h: int = 16
    grid_w: int = 16
    feat_dim: int = 4
    num_classes: int = 3
    cycle_len: int = 200
    num_cycles: int = 4
    r_V: float = 10.0
    r_T: float = 0.4
    r_Sc: float = 0.5
    noise_sigma: float = 0.05
    drift_amp: float = 0.2
    domain_sep: float = 1.2
    rule_pos_scale: float = 0.5

    @property
    def length(self) -> int:
        """Total stream length K = 2 * cycle_len * num_cycles."""
        return 2 * self.cycle_len * self.num_cycles

    def problems(self) -> list[str]:
        """Invariant violations as human-readable strings (empty = valid)."""
        errs = []
        if self.grid_h < 1 or self.grid_w < 1:
            errs.append("grid_h and grid_w must be >= 1")
        if self.feat_dim < 2:
            errs.append("feat_dim must be >= 2")
        if self.num_classes < 2:
            errs.append("num_classes must be >= 2")
        if self.cycle_len <= 0:
            errs.append("cycle_len must be > 0")
        if self.num_cycles < 1:
            errs.append("num_cycles must be >= 1")
        if self.r_V <= 0 or self.r_T <= 0 or self.r_Sc <= 0:
            errs.append("rates r_V, r_T, r_Sc must all be > 0")
        if self.noise_sigma < 0:
            errs.append("noise_sigma must be >= 0")
        if self.drift_amp < 0:
            errs.append("drift_amp must be >= 0")
        if self.rule_pos_scale < 0:
            errs.append("rule_pos_scale must be >= 0")
        return errs


@dataclass(frozen=True, eq=False)
class DomainSpec:
    """Derived per-domain generator + labeling-rule parameters."""

    domain_id: str
    class_prior: np.ndarray      # (C,), sums to 1
    rule_weights: np.ndarray     # (C, F) feature coefficients
    rule_pos_weights: np.ndarray  # (C, 2) position coefficients
    rule_bias: np.ndarray        # (C,), log-prior bias
    texture_offset: np.ndarray   # (F,)
    texture_amp: np.ndarray      # (F,)
    texture_freq: np.ndarray     # (F, 2) spatial frequencies
    texture_phase: np.ndarray    # (F,)
    drift_period: float
    drift_phase: np.ndarray      # (F,)


@dataclass(frozen=True, eq=False)
class Frame:
    index: int
    features: np.ndarray  # (grid_h, grid_w, feat_dim)
    domain_id: str


@dataclass(frozen=True, eq=False)
class LabelGrid:
    labels: np.ndarray  # (grid_h, grid_w) ints in [0, num_classes)


def _check_index(cfg: StreamConfig, i: int) -> None:
    if not 0 <= i < cfg.length:
        raise StreamExhausted(f"frame index {i} outside stream [0, {cfg.length})")


def domain_of(cfg: StreamConfig, i: int) -> str:
    """Domain of frame i: A iff floor(i / cycle_len) is even."""
    _check_index(cfg, i)
    return DOMAIN_A if (i // cfg.cycle_len) % 2 == 0 else DOMAIN_B


def shift_indices(cfg: StreamConfig) -> list[int]:
    """Sorted domain-shift frame indices, strictly inside [1, K)."""
    return [m * cfg.cycle_len for m in range(1, 2 * cfg.num_cycles)]


@lru_cache(maxsize=8)
def derive_domains(cfg: StreamConfig) -> tuple[DomainSpec, DomainSpec]:
    """Materialize both domains' specs from the stream seed."""
    base = np.random.default_rng([cfg.seed, 7])
    direction = base.standard_normal(cfg.feat_dim)
    direction /= np.linalg.norm(direction)

    specs = []
    for which, domain_id in enumerate((DOMAIN_A, DOMAIN_B)):
        rng = np.random.default_rng([cfg.seed, 11, which])
        prior = rng.dirichlet(np.full(cfg.num_classes, 2.0))
        side = 1.0 if which == 0 else -1.0
        specs.append(DomainSpec(
            domain_id=domain_id,
            class_prior=prior,
            rule_weights=rng.normal(0.0, 1.5, (cfg.num_classes, cfg.feat_dim)),
            rule_pos_weights=rng.normal(0.0, 1.0, (cfg.num_classes, 2)) * cfg.rule_pos_scale,
            rule_bias=np.log(prior),
            texture_offset=rng.normal(0.0, 0.4, cfg.feat_dim)
            + side * 0.5 * cfg.domain_sep * direction,
            texture_amp=rng.uniform(0.6, 1.2, cfg.feat_dim),
            texture_freq=rng.uniform(0.5, 2.0, (cfg.feat_dim, 2)),
            texture_phase=rng.uniform(0.0, 2.0 * np.pi, cfg.feat_dim),
            drift_period=float(rng.uniform(60.0, 140.0)),
            drift_phase=rng.uniform(0.0, 2.0 * np.pi, cfg.feat_dim),
        ))
    return specs[0], specs[1]


def domain_spec(cfg: StreamConfig, domain_id: str) -> DomainSpec:
    a, b = derive_domains(cfg)
    return a if domain_id == DOMAIN_A else b


@lru_cache(maxsize=8)
def _pos_grids(grid_h: int, grid_w: int) -> tuple[np.ndarray, np.ndarray]:
    u = np.linspace(0.0, 1.0, grid_h)
    v = np.linspace(0.0, 1.0, grid_w)
    return np.meshgrid(u, v, indexing="ij")


def frame_at(cfg: StreamConfig, i: int) -> Frame:
    """Generate frame i; deterministic in (cfg, i), no sequential state."""
    _check_index(cfg, i)
    ds = domain_spec(cfg, domain_of(cfg, i))
    u, v = _pos_grids(cfg.grid_h, cfg.grid_w)

    arg = (2.0 * np.pi * (ds.texture_freq[:, 0] * u[..., None]
                          + ds.texture_freq[:, 1] * v[..., None])
           + ds.texture_phase)
    features = ds.texture_offset + ds.texture_amp * np.sin(arg)
    if cfg.drift_amp > 0.0:
        features = features + cfg.drift_amp * np.sin(
            2.0 * np.pi * i / ds.drift_period + ds.drift_phase)
    if cfg.noise_sigma > 0.0:
        rng = np.random.default_rng([cfg.seed, 23, i])
        features = features + rng.normal(0.0, cfg.noise_sigma, features.shape)
    return Frame(index=i, features=features, domain_id=ds.domain_id)


def rule_scores(ds: DomainSpec, positions: np.ndarray, features: np.ndarray) -> np.ndarray:
    """Per-class scores of the domain's linear-region labeler.

    positions: (..., 2) in [0,1]^2, features: (..., F); returns (..., C).
    """
    return (features @ ds.rule_weights.T
            + positions @ ds.rule_pos_weights.T
            + ds.rule_bias)


def teacher_label(cfg: StreamConfig, frame: Frame) -> LabelGrid:
    """Oracle labels for a frame: argmax of its domain's rule, ties to class 0."""
    ds = domain_spec(cfg, frame.domain_id)
    u, v = _pos_grids(cfg.grid_h, cfg.grid_w)
    pos = np.stack([u, v], axis=-1)
    scores = rule_scores(ds, pos, frame.features)
    return LabelGrid(labels=np.argmax(scores, axis=-1))


def rule_disagreement(cfg: StreamConfig, n_probe: int = 1000) -> float:
    """Monte-Carlo disagreement fraction of the two labeling rules.

    Probes are uniform positions with features drawn from an equal mixture
    of the two domains' texture centers.
    """
    rng = np.random.default_rng([cfg.seed, 31])
    a, b = derive_domains(cfg)
    pos = rng.uniform(0.0, 1.0, (n_probe, 2))
    pick = rng.integers(0, 2, n_probe)
    centers = np.where(pick[:, None] == 0, a.texture_offset, b.texture_offset)
    feats = centers + rng.normal(0.0, 1.0, (n_probe, cfg.feat_dim))
    la = np.argmax(rule_scores(a, pos, feats), axis=-1)
    lb = np.argmax(rule_scores(b, pos, feats), axis=-1)
    return float(np.mean(la != lb))


def validate_stream(cfg: StreamConfig) -> list[str]:
    """Structural problems plus the rule-disagreement floor check."""
    errs = cfg.problems()
    if not errs:
        d = rule_disagreement(cfg)
        if d < MIN_RULE_DISAGREEMENT:
            errs.append(
                f"domain labeling rules disagree on only {d:.1%} of probe space "
                f"(need >= {MIN_RULE_DISAGREEMENT:.0%}); pick another seed")
    return errs
