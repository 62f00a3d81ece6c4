"""Shared formatting helpers for human-readable CLI and MCP tool output."""
import math
from collections.abc import Sequence

from wakerom.neuralnet import LossReport
from wakerom.fullorder import SnapshotSet
from wakerom.optimize import OptResult
from wakerom.rom import SensitivityAggregate


def format_percent(value) -> str:
    """Format a relative error as a percentage: '3.89%'.

    Handles None and NaN (failed cells) as 'n/a'.
    """
    if value is None:
        return "n/a"
    try:
        value = float(value)
    except (TypeError, ValueError):
        return str(value)
    if math.isnan(value):
        return "n/a"
    return f"{100.0 * value:.3g}%"


def format_fit_report(report: LossReport, label: str = "Parametrization network") -> str:
    """Format a training summary: epochs, stop reason and final loss terms."""
    lines = [f"{label} trained:"]
    lines.append(f"  Epochs: {report.epochs} ({report.stop_reason})")
    lines.append(f"  Final loss: {report.final_loss:.4e}")
    lines.append(f"  MSE: {report.final_mse:.4e}")
    if report.final_penalty:
        lines.append(f"  Continuity penalty: {report.final_penalty:.4e}")
    if report.final_weight_decay:
        lines.append(f"  Weight decay term: {report.final_weight_decay:.4e}")
    for key, value in report.extra.items():
        lines.append(f"  {key}: {value}")
    return "\n".join(lines)


def format_snapshot_summary(snapshots: SnapshotSet) -> str:
    provider = snapshots.meta.get("provider", {})
    kind = provider.get("kind", "unknown") if isinstance(provider, dict) else provider
    return (
        f"Snapshots generated:\n"
        f"  M: {snapshots.M} | p: {snapshots.p} | P: {snapshots.P}\n"
        f"  Provider: {kind}"
    )


def format_sensitivity_table(aggregates: Sequence[SensitivityAggregate]) -> str:
    """Format mean test errors as an M x variant grid, with min/max per cell.

    Returns 'No sensitivity results.' if the list is empty.
    """
    if not aggregates:
        return "No sensitivity results."

    variants = list(dict.fromkeys(a.variant for a in aggregates))
    sizes = sorted({a.M for a in aggregates})
    cell = {(a.variant, a.M): a for a in aggregates}

    lines = ["Test error (mean [min, max]) by training size:"]
    lines.append("")
    for M in sizes:
        lines.append(f"  M = {M}")
        for v in variants:
            a = cell.get((v, M))
            if a is None:
                continue
            if a.runs_ok == 0:
                lines.append(f"     {v:<13} failed")
                continue
            lines.append(
                f"     {v:<13} {format_percent(a.test_mean)} "
                f"[{format_percent(a.test_min)}, {format_percent(a.test_max)}] "
                f"| train {format_percent(a.train_mean)}"
            )
        lines.append("")

    return "\n".join(lines).rstrip()


def format_opt_result(result: OptResult) -> str:
    """Format an optimization outcome with its evaluation counts."""
    mu = ", ".join(f"{v:.4g}" for v in result.best_mu)
    lines = [f"Optimization ({result.method.upper()}):"]
    lines.append(f"  Best fitness: {format_percent(result.best_fitness)}")
    lines.append(f"  Best mu: [{mu}]")
    lines.append(
        f"  Evaluations: {result.evaluations.get('function', 0)} function, "
        f"{result.evaluations.get('gradient', 0)} gradient"
    )
    if result.method == "ga":
        lines.append(f"  Generations: {result.iterations}")
    else:
        lines.append(f"  Iterations: {result.iterations}")
    if result.stalled:
        lines.append(f"  Stalled: {result.message}")
    return "\n".join(lines)
