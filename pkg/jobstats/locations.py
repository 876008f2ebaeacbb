"""Paths to jobstats resource files and runtime defaults."""
import os

JOBSTATS_PATH = os.path.dirname(os.path.abspath(__file__))
RESOURCES_PATH = os.path.join(JOBSTATS_PATH, 'resources')
TEMPLATES_PATH = os.path.join(JOBSTATS_PATH, 'templates')

# Captured host text, one file per type_name
FIXTURES_PATH = os.path.join(RESOURCES_PATH, 'fixtures')
EXAMPLE_SCENARIO_PATH = os.path.join(RESOURCES_PATH, 'stripes.cfg')

# Environment variables consulted by the CLI and the collectors
STATS_DIR_ENV = 'JOBSTATS_DIR'
STORE_ENV = 'JOBSTATS_STORE'
FIXTURES_ENV = 'JOBSTATS_FIXTURES'
HOSTNAME_ENV = 'JOBSTATS_HOSTNAME'
ARCH_ENV = 'JOBSTATS_ARCH'
SOURCE_TIMEOUT_ENV = 'JOBSTATS_SOURCE_TIMEOUT'

DEFAULT_STATS_DIR = os.path.join(os.sep, 'var', 'log', 'jobstats')
DEFAULT_STORE = os.path.join(os.getcwd(), 'store')

# Ten minute collection period
DEFAULT_INTERVAL = 600
DEFAULT_SOURCE_TIMEOUT = 5.0

# Host paths read by the procfs sources
PROC_ROOT = os.path.join(os.sep, 'proc')
SYS_ROOT = os.path.join(os.sep, 'sys')
