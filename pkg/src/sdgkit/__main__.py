import sys

from sdgkit.cli import main

sys.exit(main())
