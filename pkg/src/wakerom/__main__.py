"""Entry point for `python -m wakerom`."""
import sys

from wakerom.cli import main

if __name__ == "__main__":
    sys.exit(main())
