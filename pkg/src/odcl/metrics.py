"""Stream-aware evaluation: windowed mIoU, BWT/FWT, Final BWT, mIoU near
domain shifts.

Windows are non-overlapping, aligned to multiples of the window length.
Every window i' is scored with the parameters the fast route served at
the window's start time; frames and teacher references are regenerated
from the stream config rather than stored.
"""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .gridnet import ParamVector, predict
from .pipeline import RunRecord, inference_params_at
from .synthstream import StreamConfig, domain_of, frame_at, shift_indices, teacher_label

CSV_COLUMNS = ("run_id", "i_prime", "t_virtual", "domain", "miou", "bwt",
               "fwt", "final_bwt", "is_near_shift")

SUMMARY_KEYS = ("miou_mean", "miou_nds", "fwt_mean", "bwt_mean", "final_bwt")


@dataclass(frozen=True)
class MetricConfig:
    """Window length I, backward/forward shift h, and the near-shift
    halfwidth, all in frames."""

    window: int
    shift: int
    nds_halfwidth: int

    @classmethod
    def for_stream(cls, stream: StreamConfig, window: int | None = None,
                   shift: int | None = None,
                   nds_halfwidth: int | None = None) -> "MetricConfig":
        return cls(
            window=window if window is not None else max(1, stream.cycle_len // 20),
            shift=shift if shift is not None else stream.cycle_len,
            nds_halfwidth=(nds_halfwidth if nds_halfwidth is not None
                           else max(1, stream.cycle_len // 10)),
        )

    def problems(self) -> list[str]:
        errs = []
        if self.window < 1:
            errs.append("window must be >= 1")
        if self.shift < 0:
            errs.append("shift must be >= 0")
        if self.nds_halfwidth < 1:
            errs.append("nds_halfwidth must be >= 1")
        return errs


@dataclass(frozen=True)
class TraceRow:
    i_prime: int
    t_virtual: float
    domain: str
    miou: float
    bwt: float | None
    fwt: float | None
    final_bwt: float
    is_near_shift: bool


@dataclass(eq=False)
class MetricTrace:
    run_id: str
    rows: list[TraceRow]
    summary: dict


def confusion(ref: np.ndarray, pred: np.ndarray, num_classes: int) -> np.ndarray:
    """Counts with rows = reference labels, columns = predictions."""
    idx = ref.ravel() * num_classes + pred.ravel()
    return np.bincount(idx, minlength=num_classes * num_classes).reshape(
        num_classes, num_classes)


def miou(cm: np.ndarray) -> float:
    """Mean IoU over classes present in reference or prediction."""
    cm = np.asarray(cm)
    if cm.sum() == 0:
        raise ValueError("empty confusion matrix")
    tp = np.diag(cm).astype(float)
    denom = cm.sum(axis=1) + cm.sum(axis=0) - tp  # TP + FN + FP
    present = denom > 0
    return float(np.mean(tp[present] / denom[present]))


def window_starts(stream: StreamConfig, window: int) -> list[int]:
    return list(range(0, stream.length - window + 1, window))


def is_near_shift(stream: StreamConfig, i_prime: int, halfwidth: int) -> bool:
    return any(abs(i_prime - s) <= halfwidth for s in shift_indices(stream))


def window_confusion(record: RunRecord, start: int, window: int,
                     theta: ParamVector) -> np.ndarray:
    """Confusion of theta against the teacher over frames [start, start+window)."""
    stream = record.config.stream
    if start < 0 or start + window > stream.length:
        raise ValueError(f"window [{start}, {start + window}) outside stream")
    c = stream.num_classes
    cm = np.zeros((c, c), dtype=np.int64)
    for i in range(start, start + window):
        frame = frame_at(stream, i)
        cm += confusion(teacher_label(stream, frame).labels,
                        predict(record.config.model, theta, frame), c)
    return cm


def perf_at(record: RunRecord, cfg: MetricConfig, i_prime: int) -> float:
    """mIoU of the parameters served at time i'/r_V over window i'."""
    stream = record.config.stream
    theta = inference_params_at(record, i_prime / stream.r_V)
    return miou(window_confusion(record, i_prime, cfg.window, theta))


def bwt(record: RunRecord, cfg: MetricConfig, i_prime: int) -> float:
    """Current parameters evaluated h frames into the past."""
    stream = record.config.stream
    theta = inference_params_at(record, i_prime / stream.r_V)
    return miou(window_confusion(record, i_prime - cfg.shift, cfg.window, theta))


def fwt(record: RunRecord, cfg: MetricConfig, i_prime: int) -> float:
    """Current parameters evaluated h frames into the future."""
    stream = record.config.stream
    theta = inference_params_at(record, i_prime / stream.r_V)
    return miou(window_confusion(record, i_prime + cfg.shift, cfg.window, theta))


def final_window_miou(record: RunRecord, cfg: MetricConfig, i_prime: int) -> float:
    """mIoU of the final model on window i'."""
    return miou(window_confusion(record, i_prime, cfg.window,
                                 ParamVector(record.final_params)))


def final_bwt(record: RunRecord, cfg: MetricConfig) -> float:
    """Final model evaluated over the entire stream (mean across windows)."""
    starts = window_starts(record.config.stream, cfg.window)
    return float(np.mean([final_window_miou(record, cfg, s) for s in starts]))


def miou_nds(rows, shifts, halfwidth: int) -> float:
    """Mean window mIoU restricted to windows starting within +-halfwidth
    of any domain shift."""
    if not shifts:
        raise ValueError("no shifts given")
    near = [r.miou for r in rows
            if any(abs(r.i_prime - s) <= halfwidth for s in shifts)]
    if not near:
        raise ValueError("no evaluation window near any domain shift")
    return float(np.mean(near))


def build_trace(record: RunRecord, cfg: MetricConfig, run_id: str) -> MetricTrace:
    stream = record.config.stream
    k = stream.length
    rows = []
    for start in window_starts(stream, cfg.window):
        back_ok = start - cfg.shift >= 0
        fwd_ok = start + cfg.shift + cfg.window <= k
        rows.append(TraceRow(
            i_prime=start,
            t_virtual=start / stream.r_V,
            domain=domain_of(stream, start),
            miou=perf_at(record, cfg, start),
            bwt=bwt(record, cfg, start) if back_ok else None,
            fwt=fwt(record, cfg, start) if fwd_ok else None,
            final_bwt=final_window_miou(record, cfg, start),
            is_near_shift=is_near_shift(stream, start, cfg.nds_halfwidth),
        ))

    def mean_of(vals):
        vals = [v for v in vals if v is not None]
        return float(np.mean(vals)) if vals else None

    summary = {
        "miou_mean": mean_of([r.miou for r in rows]),
        "miou_nds": miou_nds(rows, shift_indices(stream), cfg.nds_halfwidth),
        "fwt_mean": mean_of([r.fwt for r in rows]),
        "bwt_mean": mean_of([r.bwt for r in rows]),
        "final_bwt": mean_of([r.final_bwt for r in rows]),
    }
    return MetricTrace(run_id=run_id, rows=rows, summary=summary)


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, bool):
        return "1" if x else "0"
    if isinstance(x, float):
        return format(x, ".12g")
    return str(x)


def trace_to_csv(trace: MetricTrace) -> str:
    lines = [",".join(CSV_COLUMNS)]
    for r in trace.rows:
        lines.append(",".join([
            trace.run_id, _fmt(r.i_prime), _fmt(r.t_virtual), r.domain,
            _fmt(r.miou), _fmt(r.bwt), _fmt(r.fwt), _fmt(r.final_bwt),
            _fmt(r.is_near_shift),
        ]))
    return "\n".join(lines) + "\n"


def summary_to_json(trace: MetricTrace) -> str:
    return json.dumps({k: trace.summary[k] for k in SUMMARY_KEYS},
                      indent=2, sort_keys=False) + "\n"
