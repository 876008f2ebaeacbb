# -*- coding: utf-8 -*-

"""The ``jobstats`` command line interface."""
