"""Bounded replay store with pluggable update (eviction) and selection policies.

Update policies decide who leaves a full buffer: fifo evicts the oldest,
uniform overwrites a random slot, prioritized evicts easy samples with
probability proportional to inverse importance. Selection policies build
the training batch: all / uniform / prioritized / mir (samples whose loss
grows most under a virtual step on the incoming data).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import gridnet
from .synthstream import Frame, LabelGrid

UPDATE_POLICIES = ("fifo", "uniform", "prioritized")
SELECT_POLICIES = ("all", "uniform", "prioritized", "mir")
POLICY_NONE = "none"  # memoryless ablation: no buffer at all

# Guards the inverse-importance eviction weights when the student is
# perfect on an entry (importance 0 would make p_n undefined).
IMPORTANCE_FLOOR = 1e-8


@dataclass(eq=False)
class ReplayEntry:
    frame: Frame
    pseudo_label: LabelGrid
    importance: float = 0.0
    inserted_at: float = 0.0


@dataclass(frozen=True)
class BufferConfig:
    capacity: int = 250
    batch_select: int = 100
    update_policy: str = "fifo"
    select_policy: str = "all"
    mir_candidates: int = 0          # 0 -> min(capacity, 2 * batch_select)
    mir_virtual_lr: float = 0.0      # 0 -> caller's live learning rate
    rng_seed: int = 0
    select_low_importance: bool = False  # literal low-importance reading of prioritized f_S

    @property
    def memoryless(self) -> bool:
        return self.update_policy == POLICY_NONE and self.select_policy == POLICY_NONE

    def resolved_mir_candidates(self) -> int:
        if self.mir_candidates > 0:
            return self.mir_candidates
        return min(self.capacity, 2 * self.batch_select)

    def problems(self) -> list[str]:
        errs = []
        if (self.update_policy == POLICY_NONE) != (self.select_policy == POLICY_NONE):
            errs.append("memoryless runs need both update_policy and select_policy = none")
            return errs
        if self.memoryless:
            return errs
        if self.update_policy not in UPDATE_POLICIES:
            errs.append(f"update_policy must be one of {UPDATE_POLICIES} or none, "
                        f"got {self.update_policy!r}")
        if self.select_policy not in SELECT_POLICIES:
            errs.append(f"select_policy must be one of {SELECT_POLICIES} or none, "
                        f"got {self.select_policy!r}")
        if self.capacity < 1:
            errs.append("capacity must be >= 1")
        if not 1 <= self.batch_select <= self.capacity:
            errs.append("batch_select must satisfy 1 <= batch_select <= capacity")
        if self.mir_candidates < 0 or self.mir_virtual_lr < 0:
            errs.append("mir_candidates and mir_virtual_lr must be >= 0")
        if self.select_policy == "mir":
            c = self.resolved_mir_candidates()
            if not self.batch_select <= c <= self.capacity:
                errs.append("mir candidate count must satisfy batch_select <= C <= capacity")
        return errs


def eviction_probabilities(importances: np.ndarray) -> np.ndarray:
    """Removal distribution p_n proportional to inverse (floored) importance."""
    inv = 1.0 / np.maximum(np.asarray(importances, dtype=float), IMPORTANCE_FLOOR)
    return inv / inv.sum()


class ReplayBuffer:
    """The online dataset: at most ``capacity`` (frame, pseudo-label) pairs."""

    def __init__(self, cfg: BufferConfig):
        errs = cfg.problems()
        if errs:
            raise ValueError("; ".join(errs))
        self.cfg = cfg
        self.entries: list[ReplayEntry] = []
        self.rng = np.random.default_rng(cfg.rng_seed)

    def __len__(self) -> int:
        return len(self.entries)

    def insert(self, entry: ReplayEntry, student_loss_fn=None) -> None:
        """Store an entry, evicting per the update policy when full.

        For the prioritized policy ``student_loss_fn(entry) -> float`` scores
        the new entry (student-vs-teacher loss) before it is stored.
        """
        if not np.isfinite(entry.importance):
            raise ValueError("non-finite importance")
        if student_loss_fn is not None and "prioritized" in (
                self.cfg.update_policy, self.cfg.select_policy):
            entry.importance = max(float(student_loss_fn(entry)), IMPORTANCE_FLOOR)
        if len(self.entries) < self.cfg.capacity:
            self.entries.append(entry)
            return
        policy = self.cfg.update_policy
        if policy == "fifo":
            oldest = min(range(len(self.entries)),
                         key=lambda j: self.entries[j].inserted_at)
            self.entries.pop(oldest)
            self.entries.append(entry)
        elif policy == "uniform":
            slot = int(self.rng.integers(0, self.cfg.capacity))
            self.entries[slot] = entry
        elif policy == "prioritized":
            p = eviction_probabilities([e.importance for e in self.entries])
            victim = int(self.rng.choice(len(self.entries), p=p))
            self.entries[victim] = entry
        else:
            raise ValueError(f"no update policy {policy!r}")

    def refresh_importance(self, student_loss_fn) -> None:
        """Rescore every stored entry against the current student."""
        for e in self.entries:
            e.importance = max(float(student_loss_fn(e)), IMPORTANCE_FLOOR)

    def select(self, n: int, theta=None, incoming=(), spec=None, lr_virtual=None):
        """Training batch per the selection policy, augmented with ``incoming``.

        Draws are without replacement; if the buffer holds fewer than n
        entries everything available is taken.
        """
        if n <= 0:
            raise ValueError("selection count must be > 0")
        incoming = list(incoming)
        policy = self.cfg.select_policy
        size = len(self.entries)
        if size == 0:
            picks: list[ReplayEntry] = []
        elif policy == "all":
            picks = list(self.entries)
        elif policy == "uniform":
            idx = self.rng.choice(size, size=min(n, size), replace=False)
            picks = [self.entries[j] for j in idx]
        elif policy == "prioritized":
            picks = self._weighted_without_replacement(min(n, size))
        elif policy == "mir":
            picks = self.mir_select(n, theta, spec, incoming, lr_virtual)
        else:
            raise ValueError(f"no selection policy {policy!r}")
        return picks + incoming

    def _weighted_without_replacement(self, k: int) -> list[ReplayEntry]:
        # Sequential draw-and-remove with renormalization.
        weights = np.maximum([e.importance for e in self.entries], IMPORTANCE_FLOOR)
        if self.cfg.select_low_importance:
            weights = 1.0 / weights
        alive = list(range(len(self.entries)))
        picks = []
        for _ in range(k):
            w = weights[alive]
            j = int(self.rng.choice(len(alive), p=w / w.sum()))
            picks.append(self.entries[alive[j]])
            alive.pop(j)
        return picks

    def mir_select(self, n: int, theta, spec, incoming, lr_virtual: float):
        """Candidates whose loss increases most under a virtual step.

        Takes one virtual sgd step of size lr_virtual on the incoming batch
        (theta itself is never touched), scores each of C uniformly drawn
        candidates by post-minus-pre loss, and returns the top n (ties to
        the smaller buffer index). With no incoming data the virtual step
        is skipped, so scores tie at zero.
        """
        if not self.entries:
            raise ValueError("mir selection on an empty buffer")
        c = min(self.cfg.resolved_mir_candidates(), len(self.entries))
        cand = sorted(self.rng.choice(len(self.entries), size=c, replace=False).tolist())

        if incoming:
            batch = [(e.frame, e.pseudo_label) for e in incoming]
            _, grad = gridnet.loss_and_grad(spec, theta, batch)
            theta_v = gridnet.sgd_step(theta, grad, lr_virtual)
        else:
            theta_v = theta

        scores = np.empty(c)
        for k, j in enumerate(cand):
            e = self.entries[j]
            single = [(e.frame, e.pseudo_label)]
            pre = gridnet.loss_only(spec, theta, single)
            post = gridnet.loss_only(spec, theta_v, single)
            scores[k] = post - pre
        order = sorted(range(c), key=lambda k: (-scores[k], cand[k]))
        return [self.entries[cand[k]] for k in order[:min(n, c)]]
