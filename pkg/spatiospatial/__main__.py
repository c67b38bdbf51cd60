import sys

from spatiospatial.cli import main

sys.exit(main())
