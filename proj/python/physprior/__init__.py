from ._physprior import *  # noqa: F401,F403
from ._physprior import __version__  # noqa: F401
