import sys

from darksqueeze.cli import main

sys.exit(main())
