#!/usr/bin/env python3
"""Entry point for the skillfocus command line."""

import sys

from skillfocus.main import main

if __name__ == "__main__":
    sys.exit(main())
