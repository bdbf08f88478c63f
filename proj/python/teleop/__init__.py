"""Python bindings for the camera-arm teleoperation core.

Positions are in mm, orientations are (w, x, y, z) quaternions, joint vectors
have seven entries in rad. Wire messages are plain dicts.
"""

import json

from . import _core
from ._core import (
    TeleopError,
    forward_kinematics,
    home,
    inverse_kinematics,
    jacobian,
    manipulability,
    rcm_constrain,
    register_points,
)

__all__ = [
    "TeleopError",
    "decode",
    "encode",
    "forward_kinematics",
    "gen_task",
    "home",
    "inverse_kinematics",
    "jacobian",
    "manipulability",
    "rcm_constrain",
    "register_points",
    "replay",
]


def encode(message: dict) -> str:
    """Canonical NDJSON line (sorted keys, trailing newline)."""
    return _core.encode(json.dumps(message))


def decode(line: str) -> dict:
    return json.loads(_core.decode(line))


def gen_task(task: int, seed: int = 1) -> dict:
    return json.loads(_core.gen_task(task, seed))


def replay(script: dict) -> dict:
    """Replays a task script on simulated time and returns the report."""
    return json.loads(_core.replay(json.dumps(script)))
