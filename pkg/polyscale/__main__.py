import sys

from polyscale.cli import main

sys.exit(main())
