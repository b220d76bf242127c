"""Spatio-temporal forecasting with prompt-based adaptation.

The compiled extension carries the full toolkit: preprocessing, graph
algebra, the forecaster and prompt editor, the tuning pipeline, metrics and
the distribution-shift bench utilities.
"""

from stprompt._core import *  # noqa: F401,F403
from stprompt._core import __doc__  # noqa: F401
