"""``python -m irisbench`` entry point."""

import sys

from irisbench.cli import main

if __name__ == "__main__":
    sys.exit(main())
