import sys

from flipped_risk.cli import main

sys.exit(main())
