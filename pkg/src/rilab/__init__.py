"""Random interlacements laboratory.

Sampling of occupation-time fields and vacant sets of continuous-time random
interlacements in finite windows of Z^d, together with the discrete and
Brownian potential theory needed to analyse them.
"""

__version__ = "0.1.0"
