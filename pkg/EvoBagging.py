import sys

from evobagging.cli import main

# ----------------------------
# Hauptanwendung
# ----------------------------
if __name__ == "__main__":
    sys.exit(main())
