import sys

from cmgn.cli import main

sys.exit(main())
