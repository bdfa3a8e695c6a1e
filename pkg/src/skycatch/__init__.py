"""skycatch: impact-point prediction and catching of thrown objects.

Submodules: trajkit (trajectories, windows, splits), synthgen (physics
generator and object catalog), analysis (parabola deviation scoring),
baselines (ballistic RANSAC, linear SVR), neurnet (dense/LSTM engine),
predictors (learned models, training, checkpoints), catchsim
(closed-loop catching), evalkit (metrics, significance, reports), cli
(command line).
"""

import os

__version__ = "0.1.0"

# The working set is many small-matrix products, where BLAS thread
# dispatch costs far more than the arithmetic; one thread is both much
# faster and bitwise reproducible run to run.  Override with
# SKYCATCH_BLAS_THREADS if you know better.
try:
    import numpy as _np  # noqa: F401 - loads the BLAS pools so they can be limited
    import threadpoolctl as _threadpoolctl

    # The controller restores the old limits when garbage collected, so
    # it must stay referenced for the lifetime of the process.
    _blas_limiter = _threadpoolctl.threadpool_limits(
        limits=int(os.environ.get("SKYCATCH_BLAS_THREADS", "1")))
except (ImportError, ValueError):
    _blas_limiter = None
