"""Pseudo-spectral simulator and diagnostics for stochastic convective
Brinkman-Forchheimer extended Darcy equations on a periodic torus, driven
by Brownian motion or by small random kicks.
"""

from importlib.metadata import PackageNotFoundError, version

from .analysis import *  # noqa: F401,F403
from .basis import *  # noqa: F401,F403
from .errors import *  # noqa: F401,F403
from .integrator import *  # noqa: F401,F403
from .noise import *  # noqa: F401,F403
from .operators import *  # noqa: F401,F403
from .runner import *  # noqa: F401,F403
from .spectral import *  # noqa: F401,F403

try:
    __version__ = version("artifact")
except PackageNotFoundError:  # running from a source tree
    __version__ = "0.1.0"
