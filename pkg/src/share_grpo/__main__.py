import sys

from share_grpo.cli import main

sys.exit(main())
