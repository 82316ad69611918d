import sys

from curvopt.cli import main

sys.exit(main())
