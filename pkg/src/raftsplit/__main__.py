import sys

from raftsplit.cli import main

sys.exit(main())
