"""Parameter checks shared by the estimator and the command line."""
from numbers import Integral

from .exceptions import ConfigError

MESH_NAMES = ("unit-square-crisscross", "unit-cube-kuhn")


def check_mesh_name(name):
    if not isinstance(name, str) or not (name in MESH_NAMES or name.startswith("file:")):
        raise ConfigError(f"mesh must be one of {MESH_NAMES} or file:PATH, got {name!r}")
    return name


def check_family(family):
    if family in ("minus", "full"):
        return family
    if isinstance(family, str) and family.startswith("mixed:") and len(family) > 6:
        return family
    raise ConfigError(f"family must be minus, full or mixed:SPEC, got {family!r}")


def check_positive_int(value, name, minimum=1):
    if isinstance(value, bool) or not isinstance(value, Integral) or value < minimum:
        raise ConfigError(f"{name} must be an integer >= {minimum}, got {value!r}")
    return int(value)


def check_form_degree(k, n):
    if isinstance(k, bool) or not isinstance(k, Integral) or not 0 <= k <= n:
        raise ConfigError(f"form degree must be an integer in 0..{n}, got {k!r}")
    return int(k)
