"""MCP tools that read stage results back from a run directory."""

import logging
from pathlib import Path

from fastmcp.server.context import Context

from wakerom.errors import WakeRomError
from wakerom.formatting import format_percent
from wakerom.pipeline import read_optimum, read_sensitivity
from wakerom.server import mcp, AppContext

logger = logging.getLogger("wakerom.tools.reports")


def _get_app(ctx: Context) -> AppContext:
    """Extract AppContext from the MCP request context."""
    return ctx.request_context.lifespan_context


def _run_dir(app: AppContext, run: str) -> Path:
    path = Path(run)
    return path if path.is_absolute() or path.exists() else app.settings.out_dir / run


@mcp.tool()
async def sensitivity_summary(run: str, ctx: Context = None) -> str:
    """Mean, min and max test errors per ROM variant and training size.

    run is a run directory, or a name under WAKEROM_OUT_DIR (e.g. 'quick').
    """
    app = _get_app(ctx)
    try:
        return read_sensitivity(_run_dir(app, run))
    except WakeRomError as e:
        return f"Error: {e}"


@mcp.tool()
async def optimization_summary(run: str, ctx: Context = None) -> str:
    """Best parameter vector and fitness found by each optimizer in a run."""
    app = _get_app(ctx)
    try:
        results = read_optimum(_run_dir(app, run))
    except WakeRomError as e:
        return f"Error: {e}"

    lines = []
    for r in results:
        mu = ", ".join(f"{v:.4g}" for v in r["best_mu"])
        line = f"{r['method'].upper()}: fitness {format_percent(r['best_fitness'])} at mu = [{mu}]"
        if r.get("stalled"):
            line += f" (stalled: {r['message']})"
        lines.append(line)
    return "\n".join(lines)
