import sys

from btnsim.cli import main


sys.exit(main())
