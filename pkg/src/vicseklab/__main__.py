"""``python -m vicseklab`` delegates to the command-line driver."""

import sys

from .cli import main

if __name__ == "__main__":
    sys.exit(main())
