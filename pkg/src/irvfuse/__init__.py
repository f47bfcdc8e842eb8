"""Thermal-visible image fusion toolkit.

Fuses heterogeneous thermal/visual image pairs of mismatched resolution via
registration-aware guided filtering (rgif) and reliability-gated
modality-attention fusion (rgmaf), alongside classical fusion baselines,
detection metrics, and a latency/FPS benchmark harness.
"""

__version__ = "0.1.0"

from . import baselines, evalbench, imgcore, pipelines, registration, rgif, rgmaf  # noqa: F401
