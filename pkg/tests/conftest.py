import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(__file__))

from toydata import NATURAL, natural_image  # noqa: E402


@pytest.fixture(scope="session")
def natural_images():
    return {name: natural_image(name) for name in NATURAL}


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_image(rng):
    return rng.uniform(0.05, 0.95, (24, 32, 3))


@pytest.fixture(scope="session")
def real_jp2k(tmp_path_factory):
    """Executable wrapper around the Pillow/OpenJPEG reference hook."""
    import stat

    from PIL import features

    if not features.check("jpg_2000"):
        pytest.skip("Pillow built without OpenJPEG")
    script = tmp_path_factory.mktemp("hook") / "jp2k"
    script.write_text(f'#!/bin/sh\nexec "{sys.executable}" -m iqarank.jp2k_hook "$@"\n')
    script.chmod(script.stat().st_mode | stat.S_IXUSR)
    return str(script)


def pytest_terminal_summary(terminalreporter):
    """One PASS/FAIL line per acceptance criterion that ran."""
    from test_acceptance import RESULTS

    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(RESULTS):
        status, title, detail = RESULTS[number]
        terminalreporter.write_line(f"criterion {number} {status}: {title}  [{detail}]")
