"""Allow ``python -m kinetic_moment_closure``."""

import sys

from kinetic_moment_closure.cli import main

sys.exit(main())
