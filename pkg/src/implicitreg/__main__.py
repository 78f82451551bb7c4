from implicitreg.cli import main
import sys

sys.exit(main())
