"""Module entry point so ``python -m ensmc`` behaves like the ``ensmc`` script."""
import sys

from .cli import main

sys.exit(main())
