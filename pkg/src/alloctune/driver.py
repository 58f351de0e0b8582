"""Build and run the native schedule replayer.

The replayer is a small C program shipped as package data and compiled on
demand with the system compiler; replaying through a real process keeps
the measured heap free of interpreter baseline noise and lets preloaded
allocators and environment tunables take effect.  Binaries are cached per
source digest, so editing the source invalidates stale builds.
"""

from __future__ import annotations

import hashlib
import os
import re
import shutil
import subprocess
import tempfile
from importlib import resources
from pathlib import Path

DRIVER_NAME = "heapreplay"

EXIT_OK = 0
EXIT_PROFILE_ERROR = 2
EXIT_ALLOC_FAILURE = 3


class DriverBuildError(RuntimeError):
    """The replay driver could not be compiled."""


def driver_source() -> str:
    return resources.files("alloctune").joinpath("driver_src/heapreplay.c").read_text()


def default_build_dir() -> Path:
    env = os.environ.get("ALLOCTUNE_BUILD_DIR")
    if env:
        return Path(env)
    return Path.home() / ".cache" / "alloctune"


def ensure_driver(build_dir: Path | None = None, cc: str | None = None) -> Path:
    """Return the path of a compiled driver binary, building it if needed."""
    source = driver_source()
    digest = hashlib.sha256(source.encode()).hexdigest()[:12]
    out_dir = Path(build_dir) if build_dir else default_build_dir()
    binary = out_dir / f"{DRIVER_NAME}-{digest}"
    if binary.exists():
        return binary

    compiler = cc or os.environ.get("CC") or shutil.which("cc") or shutil.which("gcc")
    if compiler is None:
        raise DriverBuildError("no C compiler found (set CC or install cc/gcc)")
    out_dir.mkdir(parents=True, exist_ok=True)
    with tempfile.TemporaryDirectory(dir=out_dir) as tmp:
        src = Path(tmp) / f"{DRIVER_NAME}.c"
        src.write_text(source)
        obj = Path(tmp) / DRIVER_NAME
        cmd = [compiler, "-O2", "-std=c11", "-Wall", "-o", str(obj), str(src), "-lm"]
        proc = subprocess.run(cmd, capture_output=True, text=True)
        if proc.returncode != 0:
            raise DriverBuildError(f"compile failed:\n{proc.stderr}")
        os.replace(obj, binary)  # atomic publish
    return binary


def driver_command(
    driver: Path | str, profile_path, seed: int, touch: bool = True, page_size: int | None = None
) -> list[str]:
    cmd = [str(driver), str(profile_path), "--seed", str(seed)]
    if touch:
        cmd.append("--touch")
    if page_size is not None:
        cmd += ["--page-size", str(page_size)]
    return cmd


_SUMMARY = re.compile(r"^ops=(\d+) max_live_bytes=(\d+)\s*$", re.MULTILINE)


def parse_summary(stdout: str) -> tuple[int, int]:
    """Parse the driver's summary line into (ops executed, max live bytes)."""
    match = _SUMMARY.search(stdout)
    if match is None:
        raise ValueError(f"no driver summary line in {stdout!r}")
    return int(match.group(1)), int(match.group(2))
