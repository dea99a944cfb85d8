import sys

from byzla.cli import main

sys.exit(main())
