"""Static training curves and skill-usage heatmaps from metrics logs."""

from __future__ import annotations

import csv
import json
import logging
import warnings
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
from pydantic import ValidationError  # noqa: E402

from skillfocus.core.exceptions import SkillFocusError  # noqa: E402
from skillfocus.models.schemas import EvaluationSummary, MetricsRecord, RunHeader  # noqa: E402

logger = logging.getLogger(__name__)

CURVES = {
    "mean_reward": "Total reward",
    "mean_episode_length": "Episode length",
}


@dataclass
class MetricsLog:
    path: Path
    header: Optional[RunHeader]
    records: List[MetricsRecord] = field(default_factory=list)
    skipped: int = 0

    @property
    def algorithm(self) -> str:
        return self.header.algorithm if self.header is not None else "unknown"

    def series(self, name: str) -> np.ndarray:
        values = [getattr(record, name) for record in self.records]
        return np.array([np.nan if v is None else v for v in values], dtype=np.float64)


@dataclass
class Band:
    """Pointwise mean and population std across the runs of one algorithm."""

    algorithm: str
    iterations: np.ndarray
    mean: np.ndarray
    std: np.ndarray
    runs: int


def read_metrics_log(path: Path) -> MetricsLog:
    """Parse a metrics log, skipping (and counting) lines that do not validate."""
    log = MetricsLog(Path(path), None)
    with open(path, "r", encoding="utf-8") as handle:
        for number, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            try:
                payload = json.loads(line)
                if payload.get("kind") == "header":
                    log.header = RunHeader.model_validate(payload)
                else:
                    log.records.append(MetricsRecord.model_validate(payload))
            except (json.JSONDecodeError, ValidationError, AttributeError):
                log.skipped += 1
                logger.warning(f"{path}:{number}: malformed metrics line skipped")
    if log.skipped:
        logger.warning(f"{path}: {log.skipped} malformed lines skipped")
    return log


def compute_band(algorithm: str, logs: Sequence[MetricsLog], metric: str) -> Band:
    lengths = [len(log.records) for log in logs]
    shortest = min(lengths)
    if len(set(lengths)) > 1:
        logger.warning(f"{algorithm}: runs have unequal lengths {lengths}; truncating to {shortest} iterations")
    curves = np.stack([log.series(metric)[:shortest] for log in logs])
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", category=RuntimeWarning)
        mean = np.nanmean(curves, axis=0) if shortest else np.zeros(0)
        std = np.nanstd(curves, axis=0) if shortest else np.zeros(0)
    return Band(algorithm, np.arange(shortest), mean, std, len(logs))


def _write_band_csv(path: Path, bands: Sequence[Band]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(["algorithm", "iteration", "mean", "std", "runs"])
        for band in bands:
            for i, mean, std in zip(band.iterations, band.mean, band.std):
                writer.writerow([band.algorithm, int(i), repr(float(mean)), repr(float(std)), band.runs])


def _plot_bands(path: Path, bands: Sequence[Band], ylabel: str) -> None:
    fig, ax = plt.subplots(figsize=(7, 4))
    for band in bands:
        ax.plot(band.iterations, band.mean, label=f"{band.algorithm} (n={band.runs})")
        ax.fill_between(band.iterations, band.mean - band.std, band.mean + band.std, alpha=0.25)
    ax.set_xlabel("Iteration")
    ax.set_ylabel(ylabel)
    ax.grid(True, alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)


def plot_skill_usage(summary: EvaluationSummary, out_dir: Path) -> List[Path]:
    """Heatmap plus CSV of the per-terrain skill-usage matrix; absent rows are left blank."""
    num_skills = max((len(row) for row in summary.skill_usage if row is not None), default=0)
    matrix = np.full((len(summary.terrains), num_skills), np.nan)
    for z, row in enumerate(summary.skill_usage):
        if row is not None:
            matrix[z] = row

    csv_path = out_dir / "skill_usage.csv"
    with open(csv_path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(["terrain"] + [f"skill_{k + 1}" for k in range(num_skills)])
        for kind, row in zip(summary.terrains, summary.skill_usage):
            writer.writerow([kind] + (["" for _ in range(num_skills)] if row is None else row))

    svg_path = out_dir / "skill_usage.svg"
    fig, ax = plt.subplots(figsize=(6, 4))
    image = ax.imshow(np.ma.masked_invalid(matrix), vmin=0.0, vmax=1.0, cmap="viridis")
    ax.set_xticks(range(num_skills), [f"π{k + 1}" for k in range(num_skills)])
    ax.set_yticks(range(len(summary.terrains)), summary.terrains)
    for z in range(matrix.shape[0]):
        for k in range(num_skills):
            text = "-" if np.isnan(matrix[z, k]) else f"{matrix[z, k]:.2f}"
            ax.text(k, z, text, ha="center", va="center", color="white", fontsize=8)
    fig.colorbar(image, ax=ax, label="Usage frequency")
    fig.tight_layout()
    fig.savefig(svg_path, format="svg")
    plt.close(fig)
    return [csv_path, svg_path]


@dataclass
class PlotResult:
    files: List[Path] = field(default_factory=list)
    skipped: int = 0


def emit_plots(log_paths: Sequence[Path], out_dir: Path, summary_path: Optional[Path] = None) -> PlotResult:
    """Write reward and episode-length curves (one band per algorithm) and their CSVs."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    parsed = [read_metrics_log(path) for path in log_paths]
    result = PlotResult(skipped=sum(log.skipped for log in parsed))
    logs = [log for log in parsed if log.records]
    if not logs:
        raise SkillFocusError("No parseable metrics logs", "NO_METRICS", {"logs": [str(p) for p in log_paths]})

    groups: Dict[str, List[MetricsLog]] = OrderedDict()
    for log in logs:
        groups.setdefault(log.algorithm, []).append(log)

    for metric, label in CURVES.items():
        bands = [compute_band(algorithm, group, metric) for algorithm, group in groups.items()]
        csv_path = out_dir / f"{metric}.csv"
        svg_path = out_dir / f"{metric}.svg"
        _write_band_csv(csv_path, bands)
        _plot_bands(svg_path, bands, label)
        result.files.extend([csv_path, svg_path])

    if summary_path is not None:
        summary = EvaluationSummary.model_validate_json(Path(summary_path).read_text(encoding="utf-8"))
        result.files.extend(plot_skill_usage(summary, out_dir))

    for path in result.files:
        logger.info(f"Wrote {path}")
    return result
