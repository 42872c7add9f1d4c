import sys

from ftrom.cli import main

sys.exit(main())
