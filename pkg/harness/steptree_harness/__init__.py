"""Child-process test runner for candidate solutions.

The runnable artifact is ``harness.py``, a single stdlib-only file invoked
as ``<interpreter> harness.py <job_file>`` so it can execute inside a bare
sandbox interpreter with nothing installed.
"""

from .harness import compare_values, harness_main

__all__ = ["compare_values", "harness_main"]
