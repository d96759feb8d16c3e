"""Post-hoc reports over completed run directories.

Tables are the contract (CSV); charts are a convenience rendered with
matplotlib. Reporting only reads run data and never mutates it.
"""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .errors import UsageError  # noqa: E402
from .runner import RunDir  # noqa: E402


def open_rundir(path) -> RunDir:
    path = Path(path)
    rd = RunDir(path.parent, path.name)
    if not rd.metrics_path.exists():
        raise UsageError(f"{path}: not a run directory (no metrics.csv)")
    return rd


def curve_table(rundirs: list[RunDir], out_path) -> list[dict]:
    """Per-phase LEP/GEP values, one column pair per run."""
    if not rundirs:
        raise UsageError("no run directories given")
    phases: set[int] = set()
    series: dict[str, dict[str, dict[int, float]]] = {}
    for rd in rundirs:
        lep = rd.metric_by_phase("lep")
        gep = rd.metric_by_phase("gep")
        series[rd.run_id] = {"lep": lep, "gep": gep}
        phases |= set(gep)
    rows = []
    for t in sorted(phases):
        row: dict = {"phase": t}
        for run_id, s in series.items():
            row[f"{run_id}/lep"] = s["lep"].get(t, "")
            row[f"{run_id}/gep"] = s["gep"].get(t, "")
        rows.append(row)
    fieldnames = ["phase"] + [
        f"{rid}/{m}" for rid in series for m in ("lep", "gep")
    ]
    with Path(out_path).open("w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fieldnames)
        writer.writeheader()
        writer.writerows(rows)
    return rows


def detail_table(rd: RunDir, out_path) -> list[dict]:
    """GEP detail per phase, with the size-weighted mean recomputed as a check."""
    metrics = rd.read_metrics()
    details: dict[int, dict[int, float]] = {}
    gep: dict[int, float] = {}
    for row in metrics:
        t = int(row["phase"])
        if row["metric"].startswith("gep_detail_"):
            sub = int(row["metric"].rsplit("_", 1)[1])
            details.setdefault(t, {})[sub] = float(row["value"])
        elif row["metric"] == "gep":
            gep[t] = float(row["value"])
    rows = []
    for t in sorted(details):
        row: dict = {"phase": t, "gep": gep.get(t, "")}
        for sub in sorted(details[t]):
            row[f"subset_{sub}"] = details[t][sub]
        rows.append(row)
    if rows:
        fieldnames = list(rows[0].keys())
        with Path(out_path).open("w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=fieldnames)
            writer.writeheader()
            writer.writerows(rows)
    return rows


def curve_chart(rundirs: list[RunDir], out_path) -> None:
    fig, ax = plt.subplots(figsize=(6, 4))
    for rd in rundirs:
        for metric, style in (("lep", "-o"), ("gep", "--s")):
            by_phase = rd.metric_by_phase(metric)
            if by_phase:
                xs = sorted(by_phase)
                ax.plot(xs, [100 * by_phase[t] for t in xs], style,
                        label=f"{rd.run_id} {metric.upper()}")
    ax.set_xlabel("phase")
    ax.set_ylabel("top-1 accuracy (%)")
    ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)


def detail_chart(rd: RunDir, out_path) -> None:
    rows = detail_table(rd, Path(out_path).with_suffix(".csv"))
    if not rows:
        return
    subsets = [k for k in rows[0] if k.startswith("subset_")]
    fig, ax = plt.subplots(figsize=(6, 4))
    width = 0.8 / max(1, len(rows))
    for i, row in enumerate(rows):
        xs = [j + i * width for j in range(len(subsets))]
        ax.bar(xs, [100 * row[s] for s in subsets], width=width,
               label=f"phase {row['phase']}")
    ax.set_xticks([j + 0.4 for j in range(len(subsets))])
    ax.set_xticklabels([s.replace("subset_", "D") for s in subsets])
    ax.set_ylabel("top-1 accuracy (%)")
    ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)


def write_report(run_paths: list[str], out_dir) -> list[Path]:
    """Emit curve table/chart for all runs and a detail table/chart per run."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rundirs = [open_rundir(p) for p in run_paths]
    written = []
    curve_csv = out_dir / "curves.csv"
    curve_table(rundirs, curve_csv)
    written.append(curve_csv)
    curve_png = out_dir / "curves.png"
    curve_chart(rundirs, curve_png)
    written.append(curve_png)
    for rd in rundirs:
        png = out_dir / f"gep_detail_{rd.run_id}.png"
        detail_chart(rd, png)
        if png.with_suffix(".csv").exists():
            written.extend([png.with_suffix(".csv"), png])
    return written
