import sys

from facehop.cli import main

sys.exit(main())
