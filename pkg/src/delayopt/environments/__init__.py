from delayopt.environments.base import Environment
from delayopt.environments.hard_quadratic import HardQuadraticConfig, HardQuadraticProblem
from delayopt.environments.lqr import LQRConfig, LQRProblem
from delayopt.environments.sinkhorn_flow import SinkhornConfig, SinkhornProblem
from delayopt.environments.grid_path import GridPathConfig, GridPathProblem

_FACTORIES = {
    "hard_quadratic": (HardQuadraticConfig, HardQuadraticProblem),
    "lqr": (LQRConfig, LQRProblem),
    "sinkhorn": (SinkhornConfig, SinkhornProblem),
    "grid_path": (GridPathConfig, GridPathProblem),
}


def environment_names() -> list[str]:
    return sorted(_FACTORIES)


def make_environment(name: str, seed: int, **overrides) -> Environment:
    """Build a freshly seeded environment instance by registry name."""
    if name not in _FACTORIES:
        raise ValueError(f"unknown environment {name!r}; known: {', '.join(environment_names())}")
    cfg_cls, env_cls = _FACTORIES[name]
    cfg = cfg_cls(**overrides)
    return env_cls(cfg, seed=seed)
