"""Task-level distributional analysis and plot-ready report emission.

Extreme-outcome rates and F1 histograms characterize whether a condition is
brittle (mass at exact failure) or saturated (mass at exact success), which
mean-only scores hide. Reports are static CSV/JSON/markdown files; numbers
render at 4 decimals in tables and one-decimal percentages for rates, and
derived quantities (gains, deltas) are always computed before rendering.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

from .canonical import write_canonical
from .errors import EmptyOutcomeSet, MissingEndpoint
from .metrics import AggregateScore, PairedDelta, TaskOutcome
from .prompt_gen import Granularity

MISSING_MARKER = "NA"


@dataclass(frozen=True)
class ExtremeRates:
    prec_zero_rate: float
    rec_zero_rate: float
    rec_one_rate: float
    f1_one_rate: float
    n: int


@dataclass(frozen=True)
class Histogram:
    """Exact-0 and exact-1 land in dedicated bins; the interior covers (0,1)."""

    bin_edges: tuple[float, ...]
    counts: tuple[int, ...]
    labels: tuple[str, ...]


@dataclass(frozen=True)
class TableRow:
    repo: str
    model: str
    level: Granularity
    recall: float | None
    precision: float | None
    f1: float | None
    missing: bool = False


@dataclass(frozen=True)
class ReportTable:
    rows: tuple[TableRow, ...]


@dataclass(frozen=True)
class GainRow:
    repo: str
    model: str
    f1_minimal: float
    f1_guided: float
    gain: float


@dataclass(frozen=True)
class AnalysisBundle:
    table: ReportTable
    extremes: Mapping[str, ExtremeRates]
    histograms: Mapping[str, Histogram]
    scores: Mapping[str, AggregateScore]
    paired: PairedDelta | None = None
    gains: tuple[GainRow, ...] = ()


def format_4dec(value: float | None) -> str:
    return MISSING_MARKER if value is None else f"{value:.4f}"


def format_percent(value: float) -> str:
    return f"{value * 100:.1f}%"


def extreme_outcome_rates(outcomes: Sequence[TaskOutcome]) -> ExtremeRates:
    if not outcomes:
        raise EmptyOutcomeSet("extreme rates need at least one outcome")
    n = len(outcomes)
    return ExtremeRates(
        prec_zero_rate=sum(o.flags.prec_zero for o in outcomes) / n,
        rec_zero_rate=sum(o.flags.rec_zero for o in outcomes) / n,
        rec_one_rate=sum(o.flags.rec_one for o in outcomes) / n,
        f1_one_rate=sum(o.flags.f1_one for o in outcomes) / n,
        n=n,
    )


def _edge_label(value: float) -> str:
    return f"{value:g}"


def f1_histogram(outcomes: Sequence[TaskOutcome], interior_bins: int = 5) -> Histogram:
    """Bin per-task F1 with dedicated exact-0/exact-1 bins.

    Interior bin *i* covers the half-open slice (edge_i, edge_{i+1}]; the
    last interior bin is open at 1 because exact matches get their own bin.
    """
    if interior_bins < 1:
        raise ValueError("interior_bins must be >= 1")
    edges = tuple(i / interior_bins for i in range(interior_bins + 1))
    counts = [0] * (interior_bins + 2)
    for o in outcomes:
        f1 = o.triple.f1
        if f1 == 0.0:
            counts[0] += 1
        elif f1 == 1.0:
            counts[-1] += 1
        else:
            idx = min(int(f1 * interior_bins - 1e-12), interior_bins - 1)
            counts[1 + idx] += 1
    labels = ["0"]
    for i in range(interior_bins):
        closer = ")" if i == interior_bins - 1 else "]"
        labels.append(f"({_edge_label(edges[i])},{_edge_label(edges[i + 1])}{closer}")
    labels.append("1")
    return Histogram(bin_edges=edges, counts=tuple(counts), labels=tuple(labels))


def cross_condition_table(
    results: Mapping[tuple[str, str, Granularity], AggregateScore]
) -> ReportTable:
    """One row per (repo, model, level); absent levels become marked rows."""
    if not results:
        raise EmptyOutcomeSet("cross_condition_table needs at least one result")
    pairs = sorted({(repo, model) for repo, model, _ in results})
    rows = []
    for repo, model in pairs:
        for level in sorted(Granularity, key=lambda g: g.ordinal):
            score = results.get((repo, model, level))
            if score is None:
                rows.append(
                    TableRow(
                        repo=repo, model=model, level=level,
                        recall=None, precision=None, f1=None, missing=True,
                    )
                )
            else:
                rows.append(
                    TableRow(
                        repo=repo,
                        model=model,
                        level=level,
                        recall=score.mean_recall,
                        precision=score.mean_precision,
                        f1=score.mean_f1,
                    )
                )
    return ReportTable(rows=tuple(rows))


def minimal_to_guided_gain(table: ReportTable) -> tuple[GainRow, ...]:
    """Absolute F1 improvement from the minimal to the guided level per (repo, model)."""
    by_key = {(r.repo, r.model, r.level): r for r in table.rows}
    gains = []
    for repo, model in sorted({(r.repo, r.model) for r in table.rows}):
        lo = by_key.get((repo, model, Granularity.MINIMAL))
        hi = by_key.get((repo, model, Granularity.GUIDED))
        if lo is None or hi is None or lo.missing or hi.missing:
            raise MissingEndpoint(
                f"({repo}, {model}) lacks a minimal or guided row for gain computation"
            )
        gains.append(
            GainRow(
                repo=repo,
                model=model,
                f1_minimal=lo.f1,  # type: ignore[arg-type]
                f1_guided=hi.f1,  # type: ignore[arg-type]
                gain=hi.f1 - lo.f1,  # type: ignore[operator]
            )
        )
    return tuple(gains)


# --- emission ---

TABLE_HEADER = "repo,model,level,recall,precision,f1"


def table_csv_lines(table: ReportTable) -> list[str]:
    lines = [TABLE_HEADER]
    for r in table.rows:
        lines.append(
            f"{r.repo},{r.model},{r.level.level},"
            f"{format_4dec(r.recall)},{format_4dec(r.precision)},{format_4dec(r.f1)}"
        )
    return lines


def _extremes_csv_lines(extremes: Mapping[str, ExtremeRates]) -> list[str]:
    lines = ["condition,n,prec_zero,rec_zero,rec_one,f1_one"]
    for condition in sorted(extremes):
        r = extremes[condition]
        lines.append(
            f"{condition},{r.n},{format_percent(r.prec_zero_rate)},"
            f"{format_percent(r.rec_zero_rate)},{format_percent(r.rec_one_rate)},"
            f"{format_percent(r.f1_one_rate)}"
        )
    return lines


def _hist_csv_lines(hist: Histogram) -> list[str]:
    lines = ["bin,lo,hi,count"]
    lines.append(f"{hist.labels[0]},0,0,{hist.counts[0]}")
    for i in range(len(hist.bin_edges) - 1):
        lines.append(
            f"{hist.labels[1 + i]},{hist.bin_edges[i]:g},{hist.bin_edges[i + 1]:g},"
            f"{hist.counts[1 + i]}"
        )
    lines.append(f"{hist.labels[-1]},1,1,{hist.counts[-1]}")
    return lines


def _write_csv(path: Path, lines: list[str]) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
    return path


def _summary_markdown(bundle: AnalysisBundle) -> str:
    out = ["# Benchmark report", ""]
    for repo in sorted({r.repo for r in bundle.table.rows}):
        out += [f"## {repo}", "", "| model | level | recall | precision | f1 |", "|---|---|---|---|---|"]
        for r in bundle.table.rows:
            if r.repo != repo:
                continue
            out.append(
                f"| {r.model} | {r.level.level} | {format_4dec(r.recall)} | "
                f"{format_4dec(r.precision)} | {format_4dec(r.f1)} |"
            )
        out.append("")
    if bundle.gains:
        out += ["## Minimal-to-guided gains", "", "| repo | model | f1 minimal | f1 guided | gain |", "|---|---|---|---|---|"]
        for g in bundle.gains:
            out.append(
                f"| {g.repo} | {g.model} | {format_4dec(g.f1_minimal)} | "
                f"{format_4dec(g.f1_guided)} | {format_4dec(g.gain)} |"
            )
        out.append("")
    out += ["## Extreme outcomes", "", "| condition | n | Prec.=0 | Rec.=0 | Rec.=1 | F1=1 |", "|---|---|---|---|---|---|"]
    for condition in sorted(bundle.extremes):
        r = bundle.extremes[condition]
        out.append(
            f"| {condition} | {r.n} | {format_percent(r.prec_zero_rate)} | "
            f"{format_percent(r.rec_zero_rate)} | {format_percent(r.rec_one_rate)} | "
            f"{format_percent(r.f1_one_rate)} |"
        )
    out.append("")
    if bundle.paired is not None:
        out += ["## Paired base-vs-aug deltas", ""]
        out.append(f"Mean F1 delta (aug - base): {format_4dec(bundle.paired.mean_delta)}")
        out += ["", "| task | f1 base | f1 aug | delta |", "|---|---|---|---|"]
        for row in bundle.paired.per_task:
            flag = " *" if row.flagged else ""
            out.append(
                f"| {row.task_id}{flag} | {format_4dec(row.f1_base)} | "
                f"{format_4dec(row.f1_aug)} | {format_4dec(row.delta)} |"
            )
        out.append("")
    return "\n".join(out)


def _table_json(table: ReportTable) -> list[dict]:
    return [
        {
            "repo": r.repo,
            "model": r.model,
            "level": r.level.level,
            "recall": r.recall,
            "precision": r.precision,
            "f1": r.f1,
            "missing": r.missing,
        }
        for r in table.rows
    ]


def _extremes_json(extremes: Mapping[str, ExtremeRates]) -> dict:
    return {
        condition: {
            "n": r.n,
            "prec_zero_rate": r.prec_zero_rate,
            "rec_zero_rate": r.rec_zero_rate,
            "rec_one_rate": r.rec_one_rate,
            "f1_one_rate": r.f1_one_rate,
        }
        for condition, r in sorted(extremes.items())
    }


def _hist_json(hist: Histogram) -> dict:
    return {
        "bin_edges": list(hist.bin_edges),
        "labels": list(hist.labels),
        "counts": list(hist.counts),
    }


def emit_report(
    bundle: AnalysisBundle,
    out_dir: str | Path,
    formats: set[str] | None = None,
) -> list[Path]:
    """Write the report file set; returns the written paths sorted by name."""
    formats = formats if formats is not None else {"csv", "json", "markdown"}
    out_dir = Path(out_dir)
    written: list[Path] = []
    if "csv" in formats:
        written.append(_write_csv(out_dir / "table.csv", table_csv_lines(bundle.table)))
        written.append(
            _write_csv(out_dir / "extremes.csv", _extremes_csv_lines(bundle.extremes))
        )
        for condition in sorted(bundle.histograms):
            written.append(
                _write_csv(
                    out_dir / f"hist_{condition}.csv",
                    _hist_csv_lines(bundle.histograms[condition]),
                )
            )
    if "json" in formats:
        written.append(write_canonical(out_dir / "table.json", _table_json(bundle.table)))
        written.append(
            write_canonical(out_dir / "extremes.json", _extremes_json(bundle.extremes))
        )
        for condition in sorted(bundle.histograms):
            written.append(
                write_canonical(
                    out_dir / f"hist_{condition}.json",
                    _hist_json(bundle.histograms[condition]),
                )
            )
    if "markdown" in formats:
        path = out_dir / "summary.md"
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(_summary_markdown(bundle))
        written.append(path)
    return sorted(written)
