import sys

from rdeepc.expcli.main import main

sys.exit(main())
