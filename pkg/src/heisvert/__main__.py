import sys

from heisvert.cli import main

sys.exit(main())
