"""Run reports and their figure rendering.

Every pipeline stage returns a RunReport whose conservation law
``count_in == count_out + sum(drops)`` is checked at construction.
Reports serialize to JSON next to the stage's outputs; the optional
figure helpers render the same numbers as PNG files (bar chart of drop
reasons, score histograms, quality traces) using the Agg backend.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

from .errors import MtforgeError


@dataclass
class RunReport:
    stage: str
    count_in: int
    count_out: int
    drops: dict[str, int] = field(default_factory=dict)
    wall_time_s: float = 0.0
    config: dict = field(default_factory=dict)
    details: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.count_in != self.count_out + sum(self.drops.values()):
            raise MtforgeError(
                f"report for {self.stage}: {self.count_in} in != "
                f"{self.count_out} out + {sum(self.drops.values())} dropped"
            )

    def to_dict(self) -> dict:
        return {
            "stage": self.stage,
            "count_in": self.count_in,
            "count_out": self.count_out,
            "drops": dict(sorted(self.drops.items())),
            "wall_time_s": self.wall_time_s,
            "config": self.config,
            "details": self.details,
        }

    def write(self, path: str | Path) -> None:
        Path(path).write_text(
            json.dumps(self.to_dict(), ensure_ascii=False, indent=2) + "\n",
            encoding="utf-8",
        )


class StageTimer:
    """Context manager measuring wall time for a report."""

    def __enter__(self) -> "StageTimer":
        self._t0 = time.perf_counter()
        self.elapsed = 0.0
        return self

    def __exit__(self, *exc) -> None:
        self.elapsed = time.perf_counter() - self._t0


def _plt():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    return plt


def render_drop_figure(report: RunReport, path: str | Path) -> None:
    """Bar chart: pairs kept plus one bar per drop reason."""
    plt = _plt()
    labels = ["kept"] + sorted(report.drops)
    values = [report.count_out] + [report.drops[k] for k in sorted(report.drops)]
    fig, ax = plt.subplots(figsize=(max(4, 1.2 * len(labels)), 3.2))
    ax.bar(labels, values, color=["#4c72b0"] + ["#c44e52"] * len(report.drops))
    ax.set_ylabel("pairs")
    ax.set_title(f"{report.stage}: {report.count_in} in, {report.count_out} out")
    for tick in ax.get_xticklabels():
        tick.set_rotation(30)
        tick.set_ha("right")
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def render_histogram(values: Sequence[float], path: str | Path, title: str, xlabel: str) -> None:
    plt = _plt()
    fig, ax = plt.subplots(figsize=(5, 3.2))
    ax.hist(list(values), bins=40, color="#4c72b0")
    ax.set_title(title)
    ax.set_xlabel(xlabel)
    ax.set_ylabel("count")
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def render_trace(values: Sequence[float], path: str | Path, title: str, ylabel: str,
                 labels: Sequence[str] | None = None) -> None:
    plt = _plt()
    fig, ax = plt.subplots(figsize=(5, 3.2))
    xs = range(1, len(values) + 1)
    ax.plot(list(xs), list(values), marker="o", color="#4c72b0")
    ax.set_title(title)
    ax.set_xlabel("step")
    ax.set_ylabel(ylabel)
    if labels:
        ax.set_xticks(list(xs))
        ax.set_xticklabels(list(labels), rotation=30, ha="right", fontsize=7)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
