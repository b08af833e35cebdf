import sys

from estmap.cli import main

sys.exit(main())
