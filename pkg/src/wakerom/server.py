"""FastMCP server instance with lifespan-managed settings."""
import sys
import logging
from contextlib import asynccontextmanager
from collections.abc import AsyncIterator
from dataclasses import dataclass

from fastmcp import FastMCP

from wakerom.config import Settings, get_settings

# ALL logging to stderr (stdio transport uses stdout for protocol)
logging.basicConfig(
    stream=sys.stderr,
    level=logging.INFO,
    format="%(asctime)s [%(levelname)s] %(name)s: %(message)s",
)
logger = logging.getLogger("wakerom")


@dataclass
class AppContext:
    settings: Settings


@asynccontextmanager
async def app_lifespan(server: FastMCP) -> AsyncIterator[AppContext]:
    settings = get_settings()
    logging.getLogger("wakerom").setLevel(settings.log_level.upper())
    logger.info(f"Starting wakerom MCP server (out_dir={settings.out_dir}, workers={settings.workers})")
    try:
        yield AppContext(settings=settings)
    finally:
        logger.info("MCP server shutdown")


mcp = FastMCP("Wake ROM", lifespan=app_lifespan)

# Import tools to register them
import wakerom.tools.stages   # noqa: F401
import wakerom.tools.reports  # noqa: F401
