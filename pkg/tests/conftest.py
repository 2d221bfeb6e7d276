import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from chainbench.synth_chain import SynthConfig, generate


@pytest.fixture(scope="session")
def small_dataset():
    """Shared mid-size synthetic dataset for read-only tests."""
    return generate(
        SynthConfig(seed=42, n_blocks=60, mean_tx_per_block=15, address_pool=80, n_tokens=8)
    )
