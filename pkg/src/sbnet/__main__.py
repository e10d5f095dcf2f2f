import sys

from sbnet.cli import main

sys.exit(main())
