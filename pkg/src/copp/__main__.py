import sys

from .exp_harness import main

sys.exit(main())
