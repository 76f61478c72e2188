"""Run reports: CSR statistics, counters, text rendering and figures.

The report reproduces the per-constraint CSR breakdown (mean CSR per
sub-verifier plus the composite) and a 10-bin histogram of composite CSR
values for any run. The figure path renders both as PNG files alongside the
delimited outputs.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .core import CsrScore
from .errors import InternalError

HISTOGRAM_BINS = 10


@dataclass
class GroupStats:
    groups_total: int = 0
    groups_greedy: int = 0
    groups_conflict_free: int = 0
    combinations_enumerated: int = 0

    @property
    def conflict_free_fraction(self) -> float:
        if self.groups_total == 0:
            return 0.0
        return self.groups_conflict_free / self.groups_total

    def as_dict(self) -> dict:
        return {
            "groups_total": self.groups_total,
            "groups_greedy": self.groups_greedy,
            "groups_conflict_free": self.groups_conflict_free,
            "combinations_enumerated": self.combinations_enumerated,
            "conflict_free_fraction": self.conflict_free_fraction,
        }


@dataclass
class CsrSummary:
    """Running CSR statistics over every scored candidate."""

    candidates_scored: int = 0
    part_sums: dict[str, float] = field(default_factory=dict)
    part_counts: dict[str, int] = field(default_factory=dict)
    composite_sum: float = 0.0
    histogram: list[int] = field(default_factory=lambda: [0] * HISTOGRAM_BINS)

    def add(self, score: CsrScore) -> None:
        self.candidates_scored += 1
        self.composite_sum += score.value
        bin_index = min(HISTOGRAM_BINS - 1, int(score.value * HISTOGRAM_BINS))
        self.histogram[bin_index] += 1
        for part in score.parts:
            self.part_sums[part.name] = self.part_sums.get(part.name, 0.0) + part.value
            self.part_counts[part.name] = self.part_counts.get(part.name, 0) + 1

    @property
    def per_constraint_mean(self) -> dict[str, float]:
        return {
            name: self.part_sums[name] / self.part_counts[name]
            for name in self.part_sums
        }

    @property
    def composite_mean(self) -> float | None:
        if self.candidates_scored == 0:
            return None
        return self.composite_sum / self.candidates_scored


@dataclass
class RunReport:
    """Totals and CSR breakdown for one pipeline run."""

    instances_in: int = 0
    lines_rejected: int = 0
    instances_contributing: int = 0
    instances_skipped: int = 0
    pairs_emitted: int = 0
    holdout_pairs_emitted: int = 0
    candidates_scored: int = 0
    per_constraint_mean_csr: dict[str, float] = field(default_factory=dict)
    composite_mean_csr: float | None = None
    csr_histogram: list[int] = field(default_factory=lambda: [0] * HISTOGRAM_BINS)
    group_stats: GroupStats | None = None
    seed: int = 0
    config_digest: str = ""

    def check_conservation(self) -> None:
        covered = self.lines_rejected + self.instances_contributing + self.instances_skipped
        if self.instances_in != covered:
            raise InternalError(
                f"conservation violated: {self.instances_in} instances in, "
                f"{self.lines_rejected} rejected + {self.instances_contributing} "
                f"contributing + {self.instances_skipped} skipped = {covered}"
            )

    def as_dict(self) -> dict:
        return {
            "instances_in": self.instances_in,
            "lines_rejected": self.lines_rejected,
            "instances_contributing": self.instances_contributing,
            "instances_skipped": self.instances_skipped,
            "pairs_emitted": self.pairs_emitted,
            "holdout_pairs_emitted": self.holdout_pairs_emitted,
            "candidates_scored": self.candidates_scored,
            "per_constraint_mean_csr": self.per_constraint_mean_csr,
            "composite_mean_csr": self.composite_mean_csr,
            "csr_histogram": {
                "bin_edges": [i / HISTOGRAM_BINS for i in range(HISTOGRAM_BINS + 1)],
                "counts": self.csr_histogram,
            },
            "group_stats": self.group_stats.as_dict() if self.group_stats else None,
            "seed": self.seed,
            "config_digest": self.config_digest,
        }


def apply_summary(report: RunReport, summary: CsrSummary) -> None:
    report.candidates_scored = summary.candidates_scored
    report.per_constraint_mean_csr = summary.per_constraint_mean
    report.composite_mean_csr = summary.composite_mean
    report.csr_histogram = list(summary.histogram)


def render_text(report: RunReport) -> str:
    """Human-readable report: counters, per-constraint table, histogram."""
    lines = [
        "run summary",
        "-----------",
        f"instances in           {report.instances_in}",
        f"lines rejected         {report.lines_rejected}",
        f"instances contributing {report.instances_contributing}",
        f"instances skipped      {report.instances_skipped}",
        f"pairs emitted          {report.pairs_emitted}",
    ]
    if report.holdout_pairs_emitted:
        lines.append(f"holdout pairs emitted  {report.holdout_pairs_emitted}")
    lines.append(f"candidates scored      {report.candidates_scored}")
    lines.append("")
    lines.append("mean CSR by constraint")
    lines.append("----------------------")
    name_width = max(
        [len(n) for n in report.per_constraint_mean_csr] + [len("composite")]
    )
    for name, mean in report.per_constraint_mean_csr.items():
        lines.append(f"{name:<{name_width}}  {mean:7.4f}")
    if report.composite_mean_csr is not None:
        lines.append(f"{'composite':<{name_width}}  {report.composite_mean_csr:7.4f}")
    lines.append("")
    lines.append("composite CSR histogram")
    lines.append("-----------------------")
    peak = max(report.csr_histogram) if any(report.csr_histogram) else 1
    for i, count in enumerate(report.csr_histogram):
        lo = i / HISTOGRAM_BINS
        hi = (i + 1) / HISTOGRAM_BINS
        bar = "#" * round(40 * count / peak) if peak else ""
        lines.append(f"[{lo:0.1f}, {hi:0.1f}{']' if i == HISTOGRAM_BINS - 1 else ')'}"
                     f"  {count:>8}  {bar}")
    if report.group_stats is not None:
        gs = report.group_stats
        lines.extend(
            [
                "",
                "group resolution",
                "----------------",
                f"groups resolved        {gs.groups_total}",
                f"  greedy fallback      {gs.groups_greedy}",
                f"conflict-free groups   {gs.groups_conflict_free} "
                f"({gs.conflict_free_fraction:.1%})",
                f"combinations evaluated {gs.combinations_enumerated}",
            ]
        )
    lines.append("")
    return "\n".join(lines)


def render_figures(report: RunReport, fig_dir: str | Path) -> list[Path]:
    """Render the CSR breakdown and histogram to PNG files.

    Matplotlib is imported lazily so report-free paths stay fast.
    """
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig_dir = Path(fig_dir)
    fig_dir.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []

    names = list(report.per_constraint_mean_csr)
    means = [report.per_constraint_mean_csr[n] for n in names]
    if report.composite_mean_csr is not None:
        names.append("composite")
        means.append(report.composite_mean_csr)
    if names:
        fig, ax = plt.subplots(figsize=(max(4.0, 1.2 * len(names) + 1.5), 3.2))
        bars = ax.bar(range(len(names)), means, color="#4878d0")
        ax.set_xticks(range(len(names)))
        ax.set_xticklabels(names, rotation=20, ha="right")
        ax.set_ylim(0, 1.05)
        ax.set_ylabel("mean CSR")
        ax.set_title("Mean CSR by constraint")
        for bar, mean in zip(bars, means):
            ax.annotate(
                f"{mean:.2f}",
                (bar.get_x() + bar.get_width() / 2, mean),
                ha="center",
                va="bottom",
                fontsize=8,
            )
        fig.tight_layout()
        path = fig_dir / "csr_by_constraint.png"
        fig.savefig(path, dpi=150)
        plt.close(fig)
        written.append(path)

    fig, ax = plt.subplots(figsize=(5.0, 3.2))
    edges = [i / HISTOGRAM_BINS for i in range(HISTOGRAM_BINS)]
    ax.bar(edges, report.csr_histogram, width=1 / HISTOGRAM_BINS, align="edge",
           color="#6acc64", edgecolor="white")
    ax.set_xlabel("composite CSR")
    ax.set_ylabel("candidates")
    ax.set_title("CSR distribution")
    ax.set_xlim(0, 1)
    fig.tight_layout()
    path = fig_dir / "csr_histogram.png"
    fig.savefig(path, dpi=150)
    plt.close(fig)
    written.append(path)
    return written


def emit_report(
    report: RunReport,
    out_dir: str | Path,
    *,
    figures: bool = True,
) -> dict[str, Path]:
    """Write report.json, report.txt and (optionally) the figures."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths: dict[str, Path] = {}

    json_path = out_dir / "report.json"
    json_path.write_text(
        json.dumps(report.as_dict(), indent=2, ensure_ascii=False) + "\n",
        encoding="utf-8",
    )
    paths["report_json"] = json_path

    txt_path = out_dir / "report.txt"
    txt_path.write_text(render_text(report), encoding="utf-8")
    paths["report_txt"] = txt_path

    if figures:
        for fig_path in render_figures(report, out_dir / "figures"):
            paths[fig_path.stem] = fig_path
    return paths
