"""Toolkit for planning hybrid fiber/microwave wide-area networks that
operate close to speed-of-light latency.

Subpackages cover geodesic arithmetic (`geo`), line-of-sight hop
feasibility (`los`), graph algorithms (`graphcore`), the fiber-only
baseline (`fiberbase`), traffic matrices (`traffic`), budgeted topology
design (`designer`), capacity augmentation and costing (`capacity`),
weather-failure analysis (`weather`), packet simulation (`simnet`), and
a batch CLI (`cli`).
"""

__version__ = "0.1.0"
