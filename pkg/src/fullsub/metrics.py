"""SI-SDR, spectral error, and per-clip evaluation reports (CSV + JSON)."""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from fullsub.dsp import StftConfig, stft
from fullsub.errors import InvalidArgument, ShapeMismatch

SI_SDR_FLOOR = -60.0
SI_SDR_CEIL = 100.0
CSV_COLUMNS = ("clip_id", "reverberant", "si_sdr", "noisy_si_sdr", "spectral_mse")
# columns for externally computed perceptual scores, merged in when present
OPTIONAL_COLUMNS = ("wb_pesq", "nb_pesq", "stoi")


def si_sdr(estimate, reference) -> float:
    """Scale-invariant SDR in dB, capped to [-60, 100]. No mean removal."""
    est = np.asarray(estimate, np.float64)
    ref = np.asarray(reference, np.float64)
    if est.shape != ref.shape:
        raise ShapeMismatch(f"estimate {est.shape} vs reference {ref.shape}")
    ref_energy = np.dot(ref, ref)
    if ref_energy == 0:
        raise InvalidArgument("reference signal has zero energy")
    alpha = np.dot(est, ref) / ref_energy
    target = alpha * ref
    num = np.dot(target, target)
    err = target - est
    den = np.dot(err, err)
    if num == 0:
        return SI_SDR_FLOOR
    if den == 0:
        return SI_SDR_CEIL
    return float(np.clip(10.0 * np.log10(num / den), SI_SDR_FLOOR, SI_SDR_CEIL))


def spectral_mse(estimate, reference, cfg: StftConfig | None = None) -> float:
    """Mean squared complex STFT difference per time-frequency bin."""
    d = stft(estimate, cfg) - stft(reference, cfg)
    return float(np.mean(np.abs(d) ** 2))


@dataclass
class ClipResult:
    clip_id: str
    reverberant: bool
    si_sdr: float
    noisy_si_sdr: float
    spectral_mse: float
    extra: dict = field(default_factory=dict)


@dataclass
class EvalReport:
    rows: list[ClipResult]

    def _mean(self, rows, key):
        vals = [getattr(r, key) for r in rows]
        return float(np.mean(vals)) if vals else float("nan")

    def aggregate(self, rows=None) -> dict:
        rows = self.rows if rows is None else rows
        return {
            "clips": len(rows),
            "si_sdr": self._mean(rows, "si_sdr"),
            "noisy_si_sdr": self._mean(rows, "noisy_si_sdr"),
            "si_sdr_improvement": self._mean(rows, "si_sdr") - self._mean(rows, "noisy_si_sdr"),
            "spectral_mse": self._mean(rows, "spectral_mse"),
        }

    def summary(self) -> dict:
        return {
            "all": self.aggregate(),
            "with_reverb": self.aggregate([r for r in self.rows if r.reverberant]),
            "without_reverb": self.aggregate([r for r in self.rows if not r.reverberant]),
        }

    def write_csv(self, path) -> None:
        extras = [c for c in OPTIONAL_COLUMNS if any(c in r.extra for r in self.rows)]
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(list(CSV_COLUMNS) + extras)
            for r in self.rows:
                w.writerow(
                    [r.clip_id, int(r.reverberant), f"{r.si_sdr:.6f}", f"{r.noisy_si_sdr:.6f}", f"{r.spectral_mse:.9g}"]
                    + [r.extra.get(c, "") for c in extras]
                )

    def write_json(self, path, header: dict | None = None) -> None:
        doc = {"header": header or {}, "aggregate": self.summary()}
        Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True), encoding="utf-8")

    @classmethod
    def read_csv(cls, path) -> "EvalReport":
        rows = []
        with open(path, newline="", encoding="utf-8") as fh:
            for rec in csv.DictReader(fh):
                extra = {c: float(rec[c]) for c in OPTIONAL_COLUMNS if rec.get(c)}
                rows.append(
                    ClipResult(
                        rec["clip_id"],
                        bool(int(rec["reverberant"])),
                        float(rec["si_sdr"]),
                        float(rec["noisy_si_sdr"]),
                        float(rec["spectral_mse"]),
                        extra,
                    )
                )
        return cls(rows)


def evaluate_set(
    enhancer: Callable,
    mixtures: Sequence,
    clip_ids: Iterable[str] | None = None,
    cfg: StftConfig | None = None,
) -> EvalReport:
    """Enhance each :class:`~fullsub.data.Mixture` and score it against its speech image."""
    if len(mixtures) == 0:
        raise InvalidArgument("evaluation set is empty")
    ids = list(clip_ids) if clip_ids is not None else [f"clip{k:04d}" for k in range(len(mixtures))]
    rows = []
    for cid, mix in zip(ids, mixtures):
        est = np.asarray(enhancer(mix), np.float64)
        rows.append(
            ClipResult(
                cid,
                bool(mix.spec.reverberant),
                si_sdr(est, mix.speech),
                si_sdr(mix.mixture, mix.speech),
                spectral_mse(est, mix.speech, cfg),
            )
        )
    return EvalReport(rows)


def report_dict(report: EvalReport) -> list[dict]:
    return [asdict(r) for r in report.rows]
