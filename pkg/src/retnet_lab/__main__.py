"""Allow ``python -m retnet_lab``."""

import sys

from retnet_lab.bench.cli import main

sys.exit(main())
