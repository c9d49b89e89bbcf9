"""Regularization terms added to the training loss, with warmup and
artificial task boundaries.

Methods: ace (asymmetric cross-entropy on incoming data), lwf (distill
against a frozen past student), mas (anchored quadratic weighted by output
sensitivity), rwalk (anchored quadratic weighted by an EMA Fisher proxy
plus a positive path score). All penalties are exactly zero until the
warmup ends; boundaries every k epochs re-anchor the quadratic methods.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .gridnet import (ModelSpec, ParamVector, backward_pixels, forward_pixels,
                      log_softmax, snapshot, stack_batch)

REG_METHODS = ("none", "ace", "lwf", "mas", "rwalk")


@dataclass(frozen=True)
class RegConfig:
    method: str = "none"
    lam: float = 1.0                 # config key: reg.lambda
    warmup_epochs: int = 5
    boundary_every_k: int = 5
    lwf_temperature: float = 2.0
    rwalk_fisher_alpha: float = 0.9
    epsilon: float = 1e-3

    def problems(self) -> list[str]:
        errs = []
        if self.method not in REG_METHODS:
            errs.append(f"method must be one of {REG_METHODS}, got {self.method!r}")
        if self.lam <= 0:
            errs.append("lambda must be > 0")
        if self.warmup_epochs < 0:
            errs.append("warmup_epochs must be >= 0")
        if self.boundary_every_k < 1:
            errs.append("boundary_every_k must be >= 1")
        if self.lwf_temperature <= 0:
            errs.append("lwf_temperature must be > 0")
        if not 0.0 < self.rwalk_fisher_alpha < 1.0:
            errs.append("rwalk_fisher_alpha must be in (0, 1)")
        if self.epsilon <= 0:
            errs.append("epsilon must be > 0")
        return errs


@dataclass(eq=False)
class RegState:
    """Mutable per-run regularizer state; arrays all have length P."""

    anchor: np.ndarray | None = None          # consolidated parameters
    omega: np.ndarray | None = None           # mas importance (running mean)
    omega_boundaries: int = 0
    fisher: np.ndarray | None = None          # rwalk EMA of grad^2
    path_score: np.ndarray | None = None      # rwalk consolidated score
    path_acc: np.ndarray | None = None        # rwalk score since last boundary
    frozen_params: ParamVector | None = None  # lwf snapshot
    epochs_seen: int = 0
    active: bool = False                      # warmup finished


@dataclass(eq=False)
class RegPenalty:
    value: float
    grad: np.ndarray


def new_state(param_count: int) -> RegState:
    zeros = np.zeros(param_count)
    return RegState(fisher=zeros.copy(), path_score=zeros.copy(),
                    path_acc=zeros.copy())


def zero_penalty(param_count: int) -> RegPenalty:
    return RegPenalty(value=0.0, grad=np.zeros(param_count))


def output_norm_gradient(spec: ModelSpec, theta: ParamVector, frame) -> np.ndarray:
    """d(sum of squared logits over the frame)/dtheta."""
    feats = frame.features if hasattr(frame, "features") else np.asarray(frame)
    x = feats.reshape(-1, feats.shape[-1])
    logits, cache = forward_pixels(spec, theta, x)
    return backward_pixels(spec, theta, cache, 2.0 * logits)


def mas_importance(spec: ModelSpec, theta: ParamVector, sample_batch) -> np.ndarray:
    """Mean absolute output-norm sensitivity over the batch frames."""
    est = np.zeros(len(theta))
    for frame, _ in sample_batch:
        est += np.abs(output_norm_gradient(spec, theta, frame))
    return est / max(len(sample_batch), 1)


def boundary_tick(state: RegState, cfg: RegConfig, epoch: int,
                  theta: ParamVector, spec: ModelSpec, sample_batch) -> RegState:
    """Once-per-epoch scheduler: warmup gate plus every-k consolidation."""
    state.epochs_seen = epoch + 1
    if cfg.method == "none" or epoch < cfg.warmup_epochs:
        return state
    state.active = True
    if (epoch - cfg.warmup_epochs) % cfg.boundary_every_k != 0:
        return state

    state.anchor = theta.values.copy()
    if cfg.method == "mas" and sample_batch:
        est = mas_importance(spec, theta, sample_batch)
        if state.omega is None:
            state.omega = est
        else:
            state.omega = (state.omega * state.omega_boundaries + est) / (
                state.omega_boundaries + 1)
        state.omega_boundaries += 1
    elif cfg.method == "rwalk":
        state.path_score = 0.5 * (state.path_score + state.path_acc)
        state.path_acc = np.zeros_like(state.path_acc)
    elif cfg.method == "lwf":
        state.frozen_params = snapshot(theta)
    return state


def penalty(state: RegState, cfg: RegConfig, theta: ParamVector,
            spec: ModelSpec | None = None, batch=None) -> RegPenalty:
    """Dispatch to the configured method; exactly zero during warmup."""
    if cfg.method in ("none", "ace") or not state.active:
        return zero_penalty(len(theta))
    if cfg.method == "mas":
        return mas_penalty(state, cfg, theta)
    if cfg.method == "rwalk":
        return rwalk_penalty(state, cfg, theta)
    return lwf_penalty(state, cfg, theta, spec, batch)


def mas_penalty(state: RegState, cfg: RegConfig, theta: ParamVector) -> RegPenalty:
    if state.anchor is None or state.omega is None:
        raise ValueError("mas penalty before any consolidation")
    d = theta.values - state.anchor
    return RegPenalty(value=float(cfg.lam * np.sum(state.omega * d * d)),
                      grad=2.0 * cfg.lam * state.omega * d)


def rwalk_penalty(state: RegState, cfg: RegConfig, theta: ParamVector) -> RegPenalty:
    if state.anchor is None:
        raise ValueError("rwalk penalty before any consolidation")
    w = state.fisher + state.path_score
    d = theta.values - state.anchor
    return RegPenalty(value=float(cfg.lam * np.sum(w * d * d)),
                      grad=2.0 * cfg.lam * w * d)


def rwalk_accumulate(state: RegState, cfg: RegConfig, grad: np.ndarray,
                     delta_theta: np.ndarray, delta_loss: float | None = None) -> None:
    """Per-step bookkeeping: EMA Fisher proxy, then positive path increment."""
    a = cfg.rwalk_fisher_alpha
    state.fisher = a * state.fisher + (1.0 - a) * grad * grad
    gain = np.maximum(0.0, -grad * delta_theta)
    state.path_acc = state.path_acc + gain / (
        0.5 * state.fisher * delta_theta * delta_theta + cfg.epsilon)


def lwf_penalty(state: RegState, cfg: RegConfig, theta: ParamVector,
                spec: ModelSpec, batch) -> RegPenalty:
    """Temperature-scaled KL from the frozen student's softened outputs.

    Gradient flows only through the live network's logits.
    """
    if state.frozen_params is None:
        raise ValueError("lwf penalty before any snapshot")
    x, _ = stack_batch(spec, batch)
    tau, lam = cfg.lwf_temperature, cfg.lam
    z_old, _ = forward_pixels(spec, state.frozen_params, x)
    z_new, cache = forward_pixels(spec, theta, x)
    logp = log_softmax(z_old / tau)
    logq = log_softmax(z_new / tau)
    p = np.exp(logp)
    n = x.shape[0]
    kl = float((p * (logp - logq)).sum(axis=-1).mean())
    dlogits = lam * tau * (np.exp(logq) - p) / n
    return RegPenalty(value=lam * kl * tau * tau,
                      grad=backward_pixels(spec, theta, cache, dlogits))


def ace_loss(theta: ParamVector, spec: ModelSpec, incoming_batch, replay_batch):
    """Asymmetric cross-entropy: incoming pixels see only the classes present
    in the incoming label set (others masked to -inf); replay pixels keep the
    full loss. Returns the pooled per-pixel mean and its gradient.
    """
    if not incoming_batch:
        raise ValueError("ace loss needs a nonempty incoming batch")
    x_inc, y_inc = stack_batch(spec, incoming_batch)
    present = np.unique(y_inc)
    if replay_batch:
        x_rep, y_rep = stack_batch(spec, replay_batch)
        x = np.concatenate([x_inc, x_rep], axis=0)
        y = np.concatenate([y_inc, y_rep])
    else:
        x, y = x_inc, y_inc

    logits, cache = forward_pixels(spec, theta, x)
    masked = logits.copy()
    absent = np.setdiff1d(np.arange(spec.num_classes), present)
    masked[:len(y_inc)][:, absent] = -np.inf

    logp = log_softmax(masked)
    n = y.size
    loss = float(-logp[np.arange(n), y].mean())
    dlogits = np.exp(logp)
    dlogits[np.arange(n), y] -= 1.0
    dlogits /= n
    return loss, backward_pixels(spec, theta, cache, dlogits)
