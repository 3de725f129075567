"""Allow python -m kochtype."""

import sys

from kochtype.main import main

sys.exit(main())
