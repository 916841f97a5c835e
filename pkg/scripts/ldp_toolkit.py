#!/usr/bin/env python3
"""
LDP Toolkit - Command-line entry point

Usage:
    python scripts/ldp_toolkit.py simulate --config configs/figure2.json
    python scripts/ldp_toolkit.py spectral --config configs/mm1_rho05.json --threads 4
    python scripts/ldp_toolkit.py tail --config configs/toy.json --both
    python scripts/ldp_toolkit.py reproduce --figure 2 --seeds 100
"""
import os
import sys

# Add the project root directory to sys.path
sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

from src.cli import main

if __name__ == "__main__":
    sys.exit(main())
