import sys

from l2f.cli import main

sys.exit(main())
