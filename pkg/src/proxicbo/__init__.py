"""Consensus-based optimization with proximal-gradient coupling.

The package is organized around a small set of layers:

* :mod:`proxicbo.prox`        -- proximal operators (L1, boxes, total variation)
* :mod:`proxicbo.objectives`  -- composite objectives E = f + g and their models
* :mod:`proxicbo.consensus`   -- particle ensembles and the weighted consensus point
* :mod:`proxicbo.solvers`     -- particle and proximal-gradient solvers
* :mod:`proxicbo.simulate`    -- synthetic measurement generators and error bounds
* :mod:`proxicbo.bench`       -- benchmark harness producing CSV tables and figures
* :mod:`proxicbo.cli`         -- ``proxicbo`` command line front end
"""

__version__ = "0.1.0"
