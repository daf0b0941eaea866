"""Photorealistic reference generation for layerlens jobs.

Exports a print job as a renderer-agnostic scene manifest (camera pose,
marker positions, per-layer toolpath polylines, lighting schedule and a
plastic-like material description), then drives an external path-tracing
renderer in background mode to produce one reference frame per layer.
The manifest can be written and validated without the renderer installed;
only batch rendering needs it.
"""

__version__ = "0.1.0"
