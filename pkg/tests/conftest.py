import numpy as np

from deltaucb.core import AgentProfile
from deltaucb.environment import ClickRealization


def make_profiles(ctrs, valuations=None, bids=None):
    """Profiles with ids 1..K from parallel value lists."""
    ctrs = list(ctrs)
    valuations = list(valuations) if valuations is not None else [1.0] * len(ctrs)
    bids = list(bids) if bids is not None else [None] * len(ctrs)
    return [
        AgentProfile(id=i + 1, ctr=ctrs[i], valuation=valuations[i], bid=bids[i])
        for i in range(len(ctrs))
    ]


def make_realization(intrinsic, observations=None, seed=0):
    """Hand-crafted realization from explicit 0/1 matrices."""
    intrinsic = np.asarray(intrinsic, dtype=np.uint8)
    obs = None if observations is None else np.asarray(observations, dtype=np.uint8)
    num_slots = 1 if obs is None else obs.shape[0]
    return ClickRealization(
        seed=seed, num_slots=num_slots, intrinsic_clicks=intrinsic, observations=obs
    )


def random_instance(rng, num_agents, v_max=1.0, truthful=False):
    """A random test instance with distinct welfares (almost surely)."""
    ctrs = rng.uniform(0.05, 0.95, num_agents)
    valuations = rng.uniform(0.1 * v_max, v_max, num_agents)
    bids = valuations if truthful else rng.uniform(0.0, v_max, num_agents)
    return [
        AgentProfile(id=i + 1, ctr=float(ctrs[i]), valuation=float(valuations[i]), bid=float(bids[i]))
        for i in range(num_agents)
    ]
