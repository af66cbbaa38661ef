import sys

from repsel.cli import main

sys.exit(main())
