"""Private cross-network user embedding.

Thin wrappers over the C++ core: privacy mechanisms, graph sanitization,
per-network embedding, adversarial alignment, fusion, and evaluation.
"""

from ._dpfuse import *  # noqa: F401,F403
from ._dpfuse import __version__, Error  # noqa: F401
