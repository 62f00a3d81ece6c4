"""MCP tools that run pipeline stages."""

import asyncio
import logging
from pathlib import Path

from fastmcp.server.context import Context

from wakerom.config import load_pipeline_config
from wakerom.errors import WakeRomError
from wakerom import pipeline
from wakerom.server import mcp, AppContext

logger = logging.getLogger("wakerom.tools.stages")


def _get_app(ctx: Context) -> AppContext:
    """Extract AppContext from the MCP request context."""
    return ctx.request_context.lifespan_context


def _resolve(app: AppContext, config: str, out_dir: str | None, seed: int | None):
    cfg = load_pipeline_config(config)
    if seed is not None:
        cfg = cfg.model_copy(update={"rng_seed": seed})
    out = Path(out_dir) if out_dir else app.settings.out_dir / Path(config).stem
    return cfg, out


@mcp.tool()
async def run_stage(
    stage: str,
    config: str = "quick",
    out_dir: str | None = None,
    seed: int | None = None,
    variant: str | None = None,
    ctx: Context = None,
) -> str:
    """Run one pipeline stage: parametrize, snapshots, rom or optimize.

    config is a JSON path or a bundled case name (case1, case2, quick).
    Stages read the artifacts of earlier stages from out_dir, so run them in order.

    Example:
        run_stage(stage="rom", config="quick", out_dir="runs/quick", variant="POD-RBF")
    """
    app = _get_app(ctx)
    if stage not in pipeline.STAGES:
        return f"Error: unknown stage '{stage}', expected one of {', '.join(pipeline.STAGES)}"
    try:
        cfg, out = _resolve(app, config, out_dir, seed)
        result = await asyncio.to_thread(
            pipeline.run_stage, stage, cfg, out, variant, app.settings
        )
    except WakeRomError as e:
        logger.warning(f"Stage {stage} failed: {e}")
        return f"Error: {e}"
    files = "\n".join(f"  {p}" for p in result.artifacts)
    return f"{result.summary}\n\nArtifacts:\n{files}"


@mcp.tool()
async def run_pipeline(
    config: str = "quick",
    out_dir: str | None = None,
    seed: int | None = None,
    variant: str | None = None,
    ctx: Context = None,
) -> str:
    """Run every stage in order and return the combined summaries.

    Full-size cases take a long time; 'quick' finishes in minutes.
    """
    app = _get_app(ctx)
    try:
        cfg, out = _resolve(app, config, out_dir, seed)
        results = await asyncio.to_thread(pipeline.cmd_pipeline, cfg, out, variant, app.settings)
    except WakeRomError as e:
        logger.warning(f"Pipeline failed: {e}")
        return f"Error: {e}"
    return "\n\n".join(r.summary for r in results) + f"\n\nRun directory: {out}"
