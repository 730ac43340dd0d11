import sys

from tsd.cli import main

sys.exit(main())
