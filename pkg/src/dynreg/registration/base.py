from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

from ..errors import InvalidParameterError
from ..geom import PointCloud, Pose


@dataclass(frozen=True)
class RegistrationConfig:
    max_iterations: int = 50
    translation_epsilon: float = 1e-4
    rotation_epsilon: float = 1e-4
    max_correspondence_distance: float = 1.0
    ndt_voxel: float = 1.0
    initial_guess: Pose = field(default_factory=Pose.identity)

    def __post_init__(self):
        if self.max_iterations < 1:
            raise InvalidParameterError("max_iterations must be >= 1")
        for name in ("translation_epsilon", "rotation_epsilon", "max_correspondence_distance", "ndt_voxel"):
            if not getattr(self, name) > 0:
                raise InvalidParameterError(f"{name} must be positive")


@dataclass(frozen=True)
class RegistrationResult:
    """``pose`` maps source (current frame) coordinates into the target (previous) frame.

    ``cost_history`` holds the objective after each accepted iteration, starting
    with the value at the initial guess: the truncated mean squared distance for
    ICP, the negated mean Gaussian score for NDT. Lower is better for both.
    """

    pose: Pose
    final_cost: float
    iterations_used: int
    converged: bool
    cost_history: tuple[float, ...] = ()


Registrar = Callable[[PointCloud, PointCloud, RegistrationConfig], RegistrationResult]
