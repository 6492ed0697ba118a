"""latentdrive: a desk-scale workbench for generalizable driving policies.

The pipeline: a 2D multi-scenario traffic simulator produces ego-centric
multi-channel VelocityMap observations; a tied-weight denoising autoencoder
compresses them through a narrow latent bottleneck; a DQN learner trains a
driving policy either on the raw observations (baseline) or on the frozen
latent code (bottleneck mode).

Hot numeric kernels are numba-compiled when numba is available; set
``LATENTDRIVE_DISABLE_NUMBA=1`` to force the pure-numpy fallback.
"""

__version__ = "0.1.0"

from .accel import USE_NUMBA  # noqa: F401
