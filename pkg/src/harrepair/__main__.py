import sys

from harrepair.cli import main

sys.exit(main())
