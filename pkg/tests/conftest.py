import functools

from mcastsim.experiment import ScenarioConfig, run_scenario
from mcastsim.sim_core import SEC


@functools.lru_cache(maxsize=None)
def cached_run(**kwargs):
    """One simulation per distinct configuration for the whole test session."""
    kwargs.setdefault("duration", 60 * SEC)
    return run_scenario(ScenarioConfig(**kwargs))
