import numpy as np
import pytest

from canids.data_model import BusConfig, CanMessage, MessageDef, trace_from_messages


@pytest.fixture
def mini_bus():
    return BusConfig(
        [
            MessageDef("a", 2, 20_000),
            MessageDef("b", 1, 30_000),
            MessageDef("c", 1, 50_000),
        ]
    )


def make_messages(bus, n, seed=0, start_us=0, step_us=10_000):
    """Deterministic round-robin messages with pseudo-random payloads."""
    rng = np.random.default_rng(seed)
    out = []
    for k in range(n):
        d = bus.defs[k % len(bus.defs)]
        out.append(
            CanMessage(
                time_us=start_us + k * step_us,
                id=d.id,
                values=rng.uniform(0.0, 1.0, size=d.n_signals),
            )
        )
    return out


@pytest.fixture
def mini_trace(mini_bus):
    return trace_from_messages(mini_bus, make_messages(mini_bus, 60))
