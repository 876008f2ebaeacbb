# Sphinx configuration for the jobstats documentation.
import os
import sys
sys.path.insert(0, os.path.abspath('..'))

project = 'jobstats'
copyright = '2026, jobstats developers'
author = 'jobstats developers'

extensions = [
    'sphinx.ext.autodoc',
    'sphinx.ext.napoleon',
]
autodoc_member_order = 'bysource'

templates_path = ['_templates']
exclude_patterns = ['_build', 'Thumbs.db', '.DS_Store']

html_theme = 'sphinx_rtd_theme'
html_static_path = []
