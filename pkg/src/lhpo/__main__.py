import sys

from lhpo.cli import main

sys.exit(main())
