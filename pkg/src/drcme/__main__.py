import sys

from drcme.cli import main

sys.exit(main())
