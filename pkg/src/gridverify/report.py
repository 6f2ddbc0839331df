"""Run reports: a shared JSON envelope for every subcommand, plus the
benchmark report path that writes delimited output with a rendered figure
alongside it."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path


@dataclass
class RunReport:
    command: str
    inputs: dict
    timings: dict = field(default_factory=dict)
    results: dict = field(default_factory=dict)
    version: str = ""

    def to_dict(self) -> dict:
        return {
            "tool": "gridverify",
            "version": self.version,
            "command": self.command,
            "inputs": self.inputs,
            "timings": self.timings,
            "results": self.results,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "RunReport":
        d = json.loads(text)
        return cls(
            command=d["command"],
            inputs=d["inputs"],
            timings=d["timings"],
            results=d["results"],
            version=d["version"],
        )


def write_bench_csv(path, rows: list[dict]) -> None:
    """Delimited benchmark output, one measurement per row."""
    path = Path(path)
    if not rows:
        raise ValueError("no benchmark rows to write")
    with open(path, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=list(rows[0].keys()))
        writer.writeheader()
        writer.writerows(rows)


def write_bench_figure(path, labels, values, title, ylabel) -> None:
    """Bar chart of benchmark measurements rendered to an image file."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(6, 4))
    bars = ax.bar(labels, values, color="#4878d0")
    ax.set_ylabel(ylabel)
    ax.set_title(title)
    ax.bar_label(bars, fmt="%.4g")
    ax.margins(y=0.15)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
