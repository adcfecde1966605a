import sys

from snipcheck.cli import main

sys.exit(main())
