import sys

from fixsmooth.cli import main

sys.exit(main())
