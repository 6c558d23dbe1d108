import sys

from nsbandit.cli import main

sys.exit(main())
