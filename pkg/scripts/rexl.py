#!/usr/bin/env python
"""
Run the rexl command-line interface.

Examples:
    python scripts/rexl.py synth-data --out data/shapes
    python scripts/rexl.py train --steps 200000 --out runs/oracle
    python scripts/rexl.py compare --weights runs/oracle/agent.json --out runs/compare
"""

import sys
from pathlib import Path

# Add src to path
sys.path.insert(0, str(Path(__file__).parent.parent / "src"))

from rexl.cli import main


if __name__ == "__main__":
    sys.exit(main())
