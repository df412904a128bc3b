import sys
from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, str(Path(__file__).parent))

settings.register_profile(
    "default", max_examples=25, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")


@pytest.fixture(scope="session")
def two_block():
    from qvelab.profile import two_block_profile

    return two_block_profile(1000)


@pytest.fixture(scope="session")
def two_block_dos(two_block):
    from qvelab.dos import density_of_states

    return density_of_states(two_block, np.linspace(-2.5, 2.5, 2001))


@pytest.fixture(scope="session")
def two_block_support(two_block, two_block_dos):
    from qvelab.dos import detect_support

    return detect_support(two_block_dos, profile=two_block)


@pytest.fixture(scope="session")
def semicircle_curve():
    from qvelab.dos import density_of_states
    from qvelab.profile import constant_profile

    return density_of_states(constant_profile(1000), np.linspace(-2.5, 2.5, 2001))


# Large-block intra-variance at which the pair of gaps of the 0.85/0.15 two-block
# family closes; found by bisection on min rho(tau + 1e-12 i) over a scan.
CUSP_INTRA = 0.1699087416451988


@pytest.fixture(scope="session")
def cusp_profile():
    from qvelab.profile import ProfileSpec, build_profile

    params = {"sizes": [850, 150], "scaled_variances": [[CUSP_INTRA, 1.0], [1.0, 0.02]]}
    return build_profile(ProfileSpec("block-constant", 1000, params))


@pytest.fixture(scope="session")
def cusp_curve(cusp_profile):
    from qvelab.dos import density_of_states, detect_support

    dos = density_of_states(cusp_profile, np.linspace(-2.5, 2.5, 2001))
    return dos, detect_support(dos, profile=cusp_profile)


# --------------------------------------------------------------------------- #
# Acceptance summary: tests record (criterion, part, passed, detail); one line per
# criterion is printed at the end of the run.

def pytest_configure(config):
    config._acceptance = {}


@pytest.fixture
def criterion(request):
    def record(number: int, part: str, passed: bool, detail: str) -> None:
        request.config._acceptance.setdefault(number, []).append((part, bool(passed), detail))
        print(f"criterion {number:2d} [{part}] {'PASS' if passed else 'FAIL'}: {detail}")

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = getattr(config, "_acceptance", {})
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(lines):
        parts = lines[k]
        verdict = "PASS" if all(p[1] for p in parts) else "FAIL"
        detail = "; ".join(f"{name} {'ok' if ok else 'FAILED'} ({info})" for name, ok, info in parts)
        terminalreporter.write_line(f"criterion {k:2d}: {verdict}  {detail}")
