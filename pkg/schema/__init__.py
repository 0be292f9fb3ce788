# =====================================
# schema/__init__.py  - public API
# =====================================
from .build import build_spec  # noqa: E402
from .scenario import ScenarioModel  # noqa: E402

__all__ = ["build_spec", "ScenarioModel"]
