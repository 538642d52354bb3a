import sys

from fullsub.cli import main

sys.exit(main())
