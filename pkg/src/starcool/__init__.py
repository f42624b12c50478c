"""Heat-bath algorithmic cooling in star-topology spin registers."""

__version__ = "0.1.0"

from .core import (  # noqa: E402
    CoolingTrace,
    HbacSchedule,
    ModelValidityWarning,
    NoUniqueFixedPointError,
    StarState,
    StarSystem,
    SwapProfile,
    ThermalConfig,
    apply_ac,
    equilibrium_state,
    exact_spin_temperature,
    hbac_iterate,
    magnetization,
    magnetization_series,
    relax_inter,
    relax_intra,
    run_schedule,
    spin_temperature,
    steady_state,
    swap_profile_from_m,
)

__all__ = [name for name in dir() if not name.startswith("_")]
