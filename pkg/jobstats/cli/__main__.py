# -*- coding: utf-8 -*-

"""Run the ``jobstats`` command line interface."""

import sys

from .api import dispatch

if __name__ == '__main__':
    sys.exit(dispatch())
