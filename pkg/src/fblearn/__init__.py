"""Learning feedback-linearizing controllers by model-free policy optimization.

Library layout:

- ``numerics``: RK4, nilpotent matrix exponentials, LQR, seeded RNG
- ``dynamics``: control-affine plants (double pendulum, 14D quadrotor)
- ``fbl``: decoupling terms, exact linearizing control, reference models
- ``policy``: learned controllers (RBF basis / tanh network) and gradients
- ``objective``: the averaged linearization loss and its convexity oracle
- ``rl``: sampled-data environment and policy-gradient trainers
- ``tracking``: LQR trajectory tracking and evaluation reports
- ``cli``: config-driven experiment runner (``fblearn`` command)
"""

from ._kernels import backend_name

__version__ = "0.1.0"

__all__ = ["backend_name", "__version__"]
