import sys

from repokg.cli import main

sys.exit(main())
