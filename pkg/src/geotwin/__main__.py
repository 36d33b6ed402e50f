import sys

from geotwin.harness.cli import main

sys.exit(main())
