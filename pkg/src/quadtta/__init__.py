"""Language-routed quadrotor control with online latent adaptation.

Subpackages: simcore (6-DOF dynamics), tasks (episodes, reward, curriculum),
grounding (command routing), nets (dense heads + checkpoints), tta (latent
updates), ppo (trainer), evalharness (mismatch suite), cli (entry point).
"""

__version__ = "0.1.0"

from . import simcore, tasks, grounding, nets, tta, ppo, evalharness  # noqa: F401
