"""Dual-rate online-distillation loop on a deterministic virtual clock.

The fast route serves per-frame predictions from the last published
snapshot; the slow route labels a subset of frames with the teacher,
feeds the replay buffer, and trains the student copy one epoch at a time,
publishing its parameters through an atomic snapshot swap. Event times
are exact rationals so that simultaneous events order identically on
every platform: infer < teacher_label < epoch_end < transfer.
"""
from __future__ import annotations

import hashlib
import queue
import threading
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .gridnet import (ModelSpec, ParamVector, init_params, loss_and_grad,
                      loss_only, make_optimizer, predict, snapshot)
from .regularize import (RegConfig, ace_loss, boundary_tick, new_state,
                         penalty, rwalk_accumulate)
from .replay import BufferConfig, ReplayBuffer, ReplayEntry
from .synthstream import StreamConfig, frame_at, teacher_label, validate_stream

EVENT_KINDS = ("infer", "teacher_label", "epoch_end", "transfer")
_RANK = {k: r for r, k in enumerate(EVENT_KINDS)}

MODES = ("virtual", "threaded")


@dataclass(frozen=True)
class PipelineConfig:
    stream: StreamConfig = StreamConfig()
    model: ModelSpec = ModelSpec()
    buffer: BufferConfig = BufferConfig()
    reg: RegConfig = RegConfig()
    lr: float = 1e-4
    optimizer: str = "adam"
    mode: str = "virtual"

    def problems(self) -> list[str]:
        errs = []
        errs += [f"stream: {e}" for e in validate_stream(self.stream)]
        errs += [f"model: {e}" for e in self.model.problems()]
        errs += [f"buffer: {e}" for e in self.buffer.problems()]
        errs += [f"reg: {e}" for e in self.reg.problems()]
        if self.lr <= 0:
            errs.append("lr must be > 0")
        if self.optimizer not in ("sgd", "adam"):
            errs.append(f"optimizer must be sgd|adam, got {self.optimizer!r}")
        if self.mode not in MODES:
            errs.append(f"mode must be one of {MODES}, got {self.mode!r}")
        if not errs:
            if self.stream.r_T < 1.0 / self.stream.r_V:
                errs.append("r_T must be >= 1/r_V (teacher labels a subset of frames)")
            if self.model.feat_dim != self.stream.feat_dim:
                errs.append("model.feat_dim must match stream.feat_dim")
            if self.model.num_classes != self.stream.num_classes:
                errs.append("model.num_classes must match stream.num_classes")
        return errs


@dataclass(frozen=True)
class PipelineEvent:
    time: float
    kind: str
    index: int


@dataclass(eq=False)
class TransferRecord:
    time: float
    epoch: int
    params: np.ndarray


@dataclass(eq=False)
class RunRecord:
    """Everything later evaluation needs: config, event log, parameter history.

    ``live_confusions`` holds the fast route's per-window confusion counts
    (prediction at each frame's own serve time); window-start evaluation
    for the metrics regenerates frames instead.
    """

    config: PipelineConfig
    window_frames: int
    init_params: np.ndarray
    events: list[PipelineEvent] = field(default_factory=list)
    transfers: list[TransferRecord] = field(default_factory=list)
    final_params: np.ndarray | None = None
    live_confusions: np.ndarray | None = None
    teacher_pairs: int = 0


def params_checksum(values: np.ndarray) -> str:
    return hashlib.blake2b(values.tobytes(), digest_size=16).hexdigest()


class ParamBoard:
    """Shared snapshot holder for the inference route.

    publish() installs an immutable tagged copy via a single reference
    swap, so readers always see a complete snapshot, never a mix.
    """

    def __init__(self, values: np.ndarray, tag: int = 0):
        self.publish(values, tag)

    def publish(self, values: np.ndarray, tag: int) -> None:
        arr = np.array(values, copy=True)
        arr.setflags(write=False)
        self._snap = (arr, tag, params_checksum(arr))

    def read(self) -> tuple[np.ndarray, int, str]:
        return self._snap


def build_schedule(stream: StreamConfig):
    """All (time, rank, index) events of a run, sorted; times are Fractions."""
    rv = Fraction(str(stream.r_V))
    rt = Fraction(str(stream.r_T))
    rsc = Fraction(str(stream.r_Sc))
    k_total = stream.length
    t_end = Fraction(k_total) / rv

    events = [(Fraction(i) / rv, _RANK["infer"], i) for i in range(k_total)]
    k = 1
    while k * rt <= t_end:
        t = k * rt
        frame = min(int(t * rv), k_total - 1)  # most recent frame at event time
        events.append((t, _RANK["teacher_label"], frame))
        k += 1
    e = 1
    while e * rsc <= t_end:
        events.append((e * rsc, _RANK["epoch_end"], e))
        events.append((e * rsc, _RANK["transfer"], e))
        e += 1
    events.sort(key=lambda ev: (ev[0], ev[1], ev[2]))
    return events


class _Run:
    """Mutable state shared by the event handlers of one execution."""

    def __init__(self, cfg: PipelineConfig, window_frames: int):
        self.cfg = cfg
        self.spec = cfg.model
        self.theta = init_params(cfg.model)
        self.board = ParamBoard(self.theta.values, tag=0)
        self.optimizer = make_optimizer(cfg.optimizer, cfg.lr)
        self.buffer = None if cfg.buffer.memoryless else ReplayBuffer(cfg.buffer)
        self.reg_state = new_state(cfg.model.param_count)
        self.pending: list[ReplayEntry] = []
        self.verify_reads = False
        self.read_failures = 0

        c = cfg.stream.num_classes
        n_windows = cfg.stream.length // window_frames
        self.record = RunRecord(
            config=cfg, window_frames=window_frames,
            init_params=self.theta.values.copy(),
            live_confusions=np.zeros((n_windows, c, c), dtype=np.int64))

    # -- event handlers ----------------------------------------------------

    def infer(self, t: Fraction, i: int) -> None:
        frame = frame_at(self.cfg.stream, i)
        values, _, tag_sum = self.board.read()
        if self.verify_reads and params_checksum(values) != tag_sum:
            self.read_failures += 1
        pred = predict(self.spec, ParamVector(values), frame)
        ref = teacher_label(self.cfg.stream, frame).labels
        w = i // self.record.window_frames
        if w < self.record.live_confusions.shape[0]:
            c = self.cfg.stream.num_classes
            counts = np.bincount(ref.ravel() * c + pred.ravel(),
                                 minlength=c * c).reshape(c, c)
            self.record.live_confusions[w] += counts

    def _entry_loss(self, entry: ReplayEntry) -> float:
        return loss_only(self.spec, self.theta, [(entry.frame, entry.pseudo_label)])

    def teacher(self, t: Fraction, i: int) -> None:
        frame = frame_at(self.cfg.stream, i)
        entry = ReplayEntry(frame=frame, pseudo_label=teacher_label(self.cfg.stream, frame),
                            inserted_at=float(t))
        self.record.teacher_pairs += 1
        self.pending.append(entry)
        if self.buffer is not None:
            self.buffer.insert(entry, student_loss_fn=self._entry_loss)

    def epoch(self, t: Fraction, e: int) -> None:
        incoming = self.pending
        self.pending = []
        cfg = self.cfg

        if self.buffer is None:
            selected: list[ReplayEntry] = []
            batch_entries = list(incoming)
        else:
            if "prioritized" in (cfg.buffer.update_policy, cfg.buffer.select_policy):
                self.buffer.refresh_importance(self._entry_loss)
            lr_virtual = cfg.buffer.mir_virtual_lr or cfg.lr
            combined = self.buffer.select(
                cfg.buffer.batch_select, theta=self.theta, incoming=incoming,
                spec=self.spec, lr_virtual=lr_virtual)
            selected = combined[:len(combined) - len(incoming)]
            batch_entries = combined
        if not batch_entries:
            return  # nothing labeled yet: epoch is a no-op

        batch = [(en.frame, en.pseudo_label) for en in batch_entries]
        boundary_tick(self.reg_state, cfg.reg, e - 1, self.theta, self.spec, batch)

        if cfg.reg.method == "ace" and self.reg_state.active and incoming:
            loss, grad = ace_loss(
                self.theta, self.spec,
                [(en.frame, en.pseudo_label) for en in incoming],
                [(en.frame, en.pseudo_label) for en in selected])
        else:
            pen = penalty(self.reg_state, cfg.reg, self.theta, self.spec, batch)
            loss, grad = loss_and_grad(self.spec, self.theta, batch, penalty=pen)

        new_theta = self.optimizer.step(self.theta, grad)
        if cfg.reg.method == "rwalk" and self.reg_state.active:
            rwalk_accumulate(self.reg_state, cfg.reg, grad,
                             new_theta.values - self.theta.values)
        self.theta = new_theta

    def transfer(self, t: Fraction, e: int) -> None:
        snap = snapshot(self.theta)
        self.board.publish(snap.values, tag=e)
        self.record.transfers.append(
            TransferRecord(time=float(t), epoch=e, params=snap.values))

    def dispatch(self, ev) -> None:
        t, rank, idx = ev
        kind = EVENT_KINDS[rank]
        self.record.events.append(PipelineEvent(time=float(t), kind=kind, index=idx))
        if rank == 0:
            self.infer(t, idx)
        elif rank == 1:
            self.teacher(t, idx)
        elif rank == 2:
            self.epoch(t, idx)
        else:
            self.transfer(t, idx)

    def finish(self) -> RunRecord:
        self.record.final_params = self.theta.values.copy()
        return self.record


def run(cfg: PipelineConfig, window_frames: int | None = None) -> RunRecord:
    """Simulate the full stream; deterministic given (config, seeds).

    ``window_frames`` sets the live confusion-matrix window (defaults to
    cycle_len // 20, the one-minute analog of the paper's rates).
    """
    errs = cfg.problems()
    if errs:
        raise ValueError("invalid pipeline config: " + "; ".join(errs))
    if window_frames is None:
        window_frames = default_window(cfg.stream)
    state = _Run(cfg, window_frames)
    schedule = build_schedule(cfg.stream)
    if cfg.mode == "virtual":
        for ev in schedule:
            state.dispatch(ev)
    else:
        _run_threaded_lockstep(state, schedule)
    return state.finish()


def default_window(stream: StreamConfig) -> int:
    return max(1, stream.cycle_len // 20)


def _run_threaded_lockstep(state: _Run, schedule) -> None:
    """Two real workers (inference / training) driven by the virtual clock.

    The dispatcher releases one event at a time and waits for its ack, so
    the event sequence matches virtual mode exactly while every parameter
    hand-off crosses the ParamBoard between threads.
    """
    state.verify_reads = True
    inf_q: queue.Queue = queue.Queue()
    train_q: queue.Queue = queue.Queue()
    ack: queue.Queue = queue.Queue()

    def worker(q):
        while True:
            ev = q.get()
            if ev is None:
                return
            try:
                state.dispatch(ev)
                ack.put(None)
            except BaseException as exc:  # surface in the dispatcher
                ack.put(exc)

    threads = [threading.Thread(target=worker, args=(q,), daemon=True)
               for q in (inf_q, train_q)]
    for th in threads:
        th.start()
    try:
        for ev in schedule:
            (inf_q if ev[1] == 0 else train_q).put(ev)
            err = ack.get()
            if err is not None:
                raise err
    finally:
        inf_q.put(None)
        train_q.put(None)
        for th in threads:
            th.join()


def free_run(cfg: PipelineConfig, window_frames: int | None = None):
    """Unsynchronized threaded execution for liveness/atomicity checks.

    The inference thread races through all frames while the training
    thread processes its own schedule at full speed; every read checks the
    snapshot checksum. Returns (record, checksum_failures). Not
    deterministic; the virtual clock only orders each thread internally.
    """
    errs = cfg.problems()
    if errs:
        raise ValueError("invalid pipeline config: " + "; ".join(errs))
    if window_frames is None:
        window_frames = default_window(cfg.stream)
    state = _Run(cfg, window_frames)
    state.verify_reads = True
    schedule = build_schedule(cfg.stream)
    infer_events = [ev for ev in schedule if ev[1] == 0]
    train_events = [ev for ev in schedule if ev[1] != 0]

    def run_side(events):
        for ev in events:
            state.dispatch(ev)

    t_inf = threading.Thread(target=run_side, args=(infer_events,))
    t_train = threading.Thread(target=run_side, args=(train_events,))
    t_inf.start(); t_train.start()
    t_inf.join(); t_train.join()
    return state.finish(), state.read_failures


def inference_params_at(record: RunRecord, t: float) -> ParamVector:
    """Parameters the fast route serves at virtual time t.

    The last transfer at or before t wins; before any transfer the
    initial parameters are served.
    """
    values = record.init_params
    for tr in record.transfers:
        if tr.time <= t:
            values = tr.params
        else:
            break
    return ParamVector(values.copy())
