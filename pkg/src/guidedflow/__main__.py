import sys

from guidedflow.cli import main

sys.exit(main())
