import sys
from tinyghost.cli import main

sys.exit(main())
