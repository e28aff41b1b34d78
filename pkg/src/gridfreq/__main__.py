#!/usr/bin/env python3
"""
Entry point for running gridfreq as a module.
"""

import sys

from .main import main

if __name__ == "__main__":
    sys.exit(main())
