__version__ = '0.1.0'

from jobstats.record_format import *
from jobstats.collectors import *
from jobstats.scenario import *
from jobstats.jobhooks import *
from jobstats.load import *
from jobstats.ingest import *
from jobstats.store import *
from jobstats.metrics import *
from jobstats.report import *
