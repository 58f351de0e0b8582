import shutil
import subprocess
from pathlib import Path

import pytest

from alloctune import driver as driver_mod

DATA_DIR = Path(__file__).parent / "data"
REPO_ROOT = Path(__file__).parent.parent
INTERPOSER_DIR = REPO_ROOT / "interposer"


def have_compiler() -> bool:
    return shutil.which("cc") is not None or shutil.which("gcc") is not None


def have_valgrind() -> bool:
    return shutil.which("valgrind") is not None


requires_compiler = pytest.mark.skipif(not have_compiler(), reason="needs a C compiler")
requires_valgrind = pytest.mark.skipif(not have_valgrind(), reason="needs the heap profiler")


@pytest.fixture(scope="session")
def driver_binary(tmp_path_factory):
    if not have_compiler():
        pytest.skip("needs a C compiler")
    return driver_mod.ensure_driver(build_dir=tmp_path_factory.mktemp("driver-build"))


@pytest.fixture(scope="session")
def shim_library():
    if not have_compiler():
        pytest.skip("needs a C compiler")
    shim = INTERPOSER_DIR / "libtracealloc.so"
    proc = subprocess.run(
        ["make", "-C", str(INTERPOSER_DIR), "libtracealloc.so", "tests/fixture_basic",
         "tests/fixture_script", "tests/fixture_threads"],
        capture_output=True,
        text=True,
    )
    if proc.returncode != 0:
        pytest.skip(f"interposer build failed: {proc.stderr[-300:]}")
    return shim
