"""python -m probscale <command>"""
import sys

from .cli import main

sys.exit(main())
