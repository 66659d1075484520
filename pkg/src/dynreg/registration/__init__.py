"""Scan matchers behind a common ``(target, source, cfg) -> RegistrationResult`` contract."""

from .base import Registrar, RegistrationConfig, RegistrationResult
from .icp import best_fit_transform, icp_register
from .ndt import build_grid, ndt_register, ndt_score

BACKENDS: dict[str, Registrar] = {"icp": icp_register, "ndt": ndt_register}

__all__ = [
    "BACKENDS",
    "Registrar",
    "RegistrationConfig",
    "RegistrationResult",
    "best_fit_transform",
    "build_grid",
    "icp_register",
    "ndt_register",
    "ndt_score",
]
