"""Fail-slow failure simulation, tracing, and root-cause localization
for 2D-mesh many-core platforms.

The pipeline has three legs:

* simulate a dataflow workload on a mesh of cores with injected
  fail-slow failures (``workload``, ``platform``),
* record execution through configurable probes and compress the trace
  with a two-stage pattern sketch (``probes``, ``sketch``),
* localize the root-cause core or link from the compressed patterns
  (``tracer``), with a closed-loop evaluation harness (``evaluation``).
"""

__version__ = "0.1.0"

from .errors import ConfigError, DeadlockError, PipelineError

__all__ = ["ConfigError", "DeadlockError", "PipelineError", "__version__"]
