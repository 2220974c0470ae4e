import sys

from swarmcover.cli import main

sys.exit(main())
