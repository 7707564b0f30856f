from hl2ss.emulator import EmulatorConfig, serve

import pytest

CLOCK_MULTIPLIER = 10.0

# half a simulated second lost every two seconds, for well over a test run
TRACKING_LOSS = [(2 * k + 1.0, 2 * k + 1.5) for k in range(5000)]


@pytest.fixture(scope="session")
def emulator():
    config = EmulatorConfig(
        host="127.0.0.1",
        clock_multiplier=CLOCK_MULTIPLIER,
        tracking_loss=TRACKING_LOSS,
        version=(1, 0, 0, 0),
    )
    handle = serve(config)
    yield handle
    handle.stop()
