"""Layer-wise monitoring for extrusion 3D printing.

Parses sliced G-code into per-layer toolpaths, renders synthetic
reference images of each layer, and compares them against captured
photographs via gradient-orientation descriptors and a family of
normalized similarity measures.  Blocks whose similarity falls under a
threshold are segmented into candidate defect regions.
"""

__version__ = "0.1.0"
