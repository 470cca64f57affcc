"""Figures of merit computed from completed run traces, plus CSV/JSON export.

All floats are written with 6 significant digits.  Traces are quantised the
same way before any statistic is computed, so ``analyze`` on exported files
reproduces the summary of the original run exactly.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .compensation import qber_phase
from .config import RunConfig, dump, from_dict
from .detectors import Cause
from .engine import RunTraces

HIST_BIN = 0.001
HIST_BINS = 30  # [0, 3%) in 0.1% steps, then one overflow bin


def sig6(x: float) -> float:
    return float(f"{x:.6g}")


def quantize(a) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    if not a.size:
        return a.copy()
    return np.array([f"{v:.6g}" for v in a.tolist()], dtype=float)


def fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return f"{float(x):.6g}"


@dataclass(frozen=True)
class BlockStats:
    block_index: int
    block_size_bits: int
    errors: int
    qber: float
    partial: bool = False
    t_start_s: float = 0.0
    t_end_s: float = 0.0


def duty_cycle(sifted_bits: int, photons_received: int) -> float:
    """2 * sifted / received: 1.0 when every detection is kept at the ideal basis-match rate."""
    if photons_received <= 0:
        raise ValueError("duty cycle is undefined without received photons")
    if sifted_bits < 0:
        raise ValueError("sifted_bits must be >= 0")
    return 2.0 * sifted_bits / photons_received


def qber_series(alice_key, bob_key, block_size: int = 5000, times=None) -> list[BlockStats]:
    a = np.asarray(alice_key, dtype=np.uint8)
    b = np.asarray(bob_key, dtype=np.uint8)
    if a.shape != b.shape:
        raise ValueError(f"key lengths differ: {a.size} vs {b.size}")
    if block_size < 1:
        raise ValueError("block_size must be >= 1")
    t = np.zeros(a.size) if times is None else np.asarray(times, dtype=float)
    err = a != b
    out = []
    for i, s in enumerate(range(0, a.size, block_size)):
        e = err[s:s + block_size]
        n = e.size
        k = int(e.sum())
        out.append(BlockStats(i, n, k, k / n, n < block_size, float(t[s]), float(t[s + n - 1])))
    return out


def mean_qber(series: list[BlockStats]) -> float:
    bits = sum(b.block_size_bits for b in series)
    return sum(b.errors for b in series) / bits if bits else 0.0


def qber_histogram(series) -> list[int]:
    """Counts per 0.1% bin over [0, 3%); the last entry counts blocks at or above 3%.

    Accepts BlockStats or bare QBER values.
    """
    counts = [0] * (HIST_BINS + 1)
    for item in series:
        q = item.qber if isinstance(item, BlockStats) else float(item)
        k = int(math.floor(q / HIST_BIN + 1e-9))
        counts[min(max(k, 0), HIST_BINS)] += 1
    return counts


def histogram_edges() -> list[float]:
    return [round(i * HIST_BIN, 6) for i in range(HIST_BINS + 1)]


def residual_range_deg(residual_deg) -> float:
    """Peak-to-peak width of the uniform distribution with the same RMS as the residual."""
    r = np.asarray(residual_deg, dtype=float)
    return float(math.sqrt(12.0 * np.mean(r * r))) if r.size else 0.0


def error_budget(alice_bits, bob_bits, causes, visibility: float, residual_deg=None,
                 phase_range_deg: float | None = None) -> dict:
    """Split the mean QBER into optics, phase and detector parts.

    optics   = (1 - V)/2
    phase    = qber_phase(peak-to-peak residual); the range is given directly
               or derived from the per-bit residual phases
    detector = fraction of sifted bits that are errors caused by a dark count or afterpulse
    """
    a = np.asarray(alice_bits, dtype=np.uint8)
    b = np.asarray(bob_bits, dtype=np.uint8)
    c = np.asarray(causes)
    if phase_range_deg is None:
        phase_range_deg = residual_range_deg(residual_deg if residual_deg is not None else [])
    n = a.size
    detector = float(np.count_nonzero((a != b) & (c != Cause.PHOTON)) / n) if n else 0.0
    return {
        "optics": (1.0 - visibility) / 2.0,
        "phase": qber_phase(phase_range_deg),
        "detector": detector,
        "phase_range_deg": phase_range_deg,
    }


def rate_windows(sift_time_s, epoch_time_s, epoch_clicks, window_s: float, epoch_s: float) -> list[dict]:
    """Sifted rate and duty cycle in consecutive windows (the last one may be short)."""
    et = np.asarray(epoch_time_s, dtype=float)
    ec = np.asarray(epoch_clicks, dtype=np.int64)
    st = np.asarray(sift_time_s, dtype=float)
    if not et.size:
        return []
    end = et[-1] + epoch_s
    rows = []
    n_win = int(math.ceil(end / window_s - 1e-9))
    for w in range(n_win):
        lo, hi = w * window_s, min((w + 1) * window_s, end)
        received = int(ec[(et >= lo - 1e-9) & (et < hi - 1e-9)].sum())
        sifted = int(np.count_nonzero((st >= lo) & (st < hi)))
        rows.append({
            "window_start_s": lo, "window_end_s": hi, "photons_received": received, "sifted_bits": sifted,
            "sifted_rate_bps": sifted / (hi - lo),
            "duty_cycle": duty_cycle(sifted, received) if received else 0.0,
        })
    return rows


@dataclass
class RunSummary:
    sifted_bits: int
    photons_received: int
    mean_qber: float
    duty_cycle: float
    sifted_rate_bps: float
    reset_count: int
    qber_histogram: list[int]
    duration_s: float = 0.0
    clock_hz: int = 0
    seed: int = 0
    blocks: int = 0
    double_clicks: int = 0
    kept_fraction: float = 0.0
    residual_pp_deg: float = 0.0
    residual_within_10_3: float = 0.0
    budget_optics: float = 0.0
    budget_phase: float = 0.0
    budget_detector: float = 0.0
    estimated_qber: float | None = None
    histogram_edges: list[float] = field(default_factory=histogram_edges)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "RunSummary":
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in known})


def _quantized(tr: RunTraces) -> dict:
    return {
        "epoch_time_s": quantize(tr.epoch_time_s),
        "epoch_voltage_v": quantize(tr.epoch_voltage_v),
        "epoch_residual_deg": quantize(tr.epoch_residual_deg),
        "epoch_coupling": quantize(tr.epoch_coupling),
        "sift_residual_deg": quantize(tr.sift_residual_deg),
    }


def sift_times(tr: RunTraces) -> np.ndarray:
    return tr.sift_index.astype(np.float64) / tr.config.clock_hz


def summarize(tr: RunTraces) -> RunSummary:
    cfg = tr.config
    q = _quantized(tr)
    series = qber_series(tr.sift_alice, tr.sift_bob, cfg.protocol.block_size_bits, sift_times(tr))
    received = int(tr.epoch_clicks.sum())
    sifted = int(tr.sift_alice.size)
    duration = tr.epoch_time_s.size * cfg.controller.integration_window_s
    budget = error_budget(tr.sift_alice, tr.sift_bob, tr.sift_cause, cfg.interferometer.visibility,
                          q["sift_residual_deg"])
    res = q["epoch_residual_deg"]
    return RunSummary(
        sifted_bits=sifted,
        photons_received=received,
        mean_qber=sig6(mean_qber(series)),
        duty_cycle=sig6(duty_cycle(sifted, received)) if received else 0.0,
        sifted_rate_bps=sig6(sifted / duration) if duration else 0.0,
        reset_count=int(tr.reset_count),
        qber_histogram=qber_histogram(series),
        duration_s=sig6(duration),
        clock_hz=cfg.clock_hz,
        seed=cfg.seed,
        blocks=len(series),
        double_clicks=int(tr.double_clicks),
        kept_fraction=sig6(sifted / received) if received else 0.0,
        residual_pp_deg=sig6(budget["phase_range_deg"]),
        residual_within_10_3=sig6(float(np.mean(np.abs(res) <= 10.3))) if res.size else 0.0,
        budget_optics=sig6(budget["optics"]),
        budget_phase=sig6(budget["phase"]),
        budget_detector=sig6(budget["detector"]),
        estimated_qber=None if tr.estimated_qber is None else sig6(tr.estimated_qber),
    )


# -- files ---------------------------------------------------------------------

EPOCH_COLUMNS = ["time_s", "voltage_v", "reset_flag", "residual_deg", "photons_received", "locked", "coupling"]
SIFT_COLUMNS = ["clock_index", "alice_bit", "bob_bit", "cause", "residual_deg"]


def _write_csv(path: Path, header: list[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])


def _read_csv(path: Path) -> tuple[list[str], list[list[str]]]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]


def write_json(path: Path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def export(tr: RunTraces, out_dir, summary: RunSummary | None = None) -> RunSummary:
    """Write summary, config, per-figure CSVs and raw traces into ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cfg = tr.config
    summary = summary or summarize(tr)
    q = _quantized(tr)
    coeff = cfg.controller.coeff_deg_per_volt

    write_json(out / "summary.json", summary.to_dict())
    (out / "config.json").write_text(dump(cfg))

    series = qber_series(tr.sift_alice, tr.sift_bob, cfg.protocol.block_size_bits, sift_times(tr))
    _write_csv(out / "fig2_qber.csv",
               ["block_index", "block_size_bits", "errors", "qber", "partial", "t_start_s", "t_end_s"],
               ([b.block_index, b.block_size_bits, b.errors, b.qber, b.partial, b.t_start_s, b.t_end_s]
                for b in series))
    edges = histogram_edges()
    hist = qber_histogram(series)
    _write_csv(out / "fig2_histogram.csv", ["bin_low", "bin_high", "blocks"],
               ([edges[i], edges[i + 1] if i + 1 < len(edges) else float("inf"), hist[i]] for i in range(len(hist))))

    t, v, reset = q["epoch_time_s"], q["epoch_voltage_v"], tr.epoch_reset
    _write_csv(out / "fig3a_voltage.csv", ["time_s", "voltage_v", "reset_flag"], zip(t, v, reset))

    windows = rate_windows(sift_times(tr), tr.epoch_time_s, tr.epoch_clicks, cfg.metrics.rate_window_s,
                           cfg.controller.integration_window_s)
    cols = ["window_start_s", "window_end_s", "photons_received", "sifted_bits", "sifted_rate_bps", "duty_cycle"]
    _write_csv(out / "fig3bc_duty_rate.csv", cols, ([w[c] for c in cols] for w in windows))

    zoom = tr.epoch_time_s < cfg.metrics.zoom_s
    _write_csv(out / "fig4_voltage_zoom.csv", ["time_s", "voltage_v", "phase_compensated_deg", "residual_deg"],
               zip(t[zoom], v[zoom], quantize(coeff * v[zoom]), q["epoch_residual_deg"][zoom]))

    _write_csv(out / "trace_epochs.csv", EPOCH_COLUMNS,
               zip(t, v, reset, q["epoch_residual_deg"], tr.epoch_clicks, tr.epoch_locked, q["epoch_coupling"]))
    _write_csv(out / "trace_sifted.csv", SIFT_COLUMNS,
               zip(tr.sift_index.tolist(), tr.sift_alice, tr.sift_bob, tr.sift_cause, q["sift_residual_deg"]))
    return summary


def load_summary(out_dir) -> RunSummary:
    return RunSummary.from_dict(json.loads((Path(out_dir) / "summary.json").read_text()))


def load_traces(out_dir) -> RunTraces:
    """Rebuild run traces from an export directory (inverse of :func:`export`)."""
    out = Path(out_dir)
    cfg: RunConfig = from_dict(json.loads((out / "config.json").read_text()))
    summary = load_summary(out)
    head, rows = _read_csv(out / "trace_epochs.csv")
    if head != EPOCH_COLUMNS:
        raise ValueError(f"trace_epochs.csv: unexpected columns {head}")
    cols = list(zip(*rows)) if rows else [()] * len(EPOCH_COLUMNS)
    head, srows = _read_csv(out / "trace_sifted.csv")
    if head != SIFT_COLUMNS:
        raise ValueError(f"trace_sifted.csv: unexpected columns {head}")
    scols = list(zip(*srows)) if srows else [()] * len(SIFT_COLUMNS)
    return RunTraces(
        config=cfg,
        epoch_time_s=np.array(cols[0], dtype=float),
        epoch_voltage_v=np.array(cols[1], dtype=float),
        epoch_reset=np.array(cols[2], dtype=np.int64).astype(bool),
        epoch_residual_deg=np.array(cols[3], dtype=float),
        epoch_clicks=np.array(cols[4], dtype=np.int64),
        epoch_locked=np.array(cols[5], dtype=np.int64).astype(bool),
        epoch_coupling=np.array(cols[6], dtype=float),
        sift_index=np.array(scols[0], dtype=np.uint64),
        sift_alice=np.array(scols[1], dtype=np.uint8),
        sift_bob=np.array(scols[2], dtype=np.uint8),
        sift_cause=np.array(scols[3], dtype=np.uint8),
        sift_residual_deg=np.array(scols[4], dtype=float),
        reset_count=int(np.array(cols[2], dtype=np.int64).sum()),
        double_clicks=summary.double_clicks,
        estimated_qber=summary.estimated_qber,
    )


def analyze(out_dir) -> RunSummary:
    """Recompute the summary and figure files from the stored traces."""
    tr = load_traces(out_dir)
    return export(tr, out_dir)
