import sys

from bloomgs.main import main

sys.exit(main())
