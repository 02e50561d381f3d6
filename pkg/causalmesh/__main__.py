import sys

from causalmesh.cli import main

sys.exit(main())
