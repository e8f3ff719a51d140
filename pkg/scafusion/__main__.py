import sys

from scafusion.cli import main

sys.exit(main())
