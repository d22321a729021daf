"""Forward and closed-form inverse kinematics for the printing arm.

The arm is a yaw base joint followed by three parallel pitch joints
(shoulder, elbow, wrist) and a wrist roll.  Only the position equations
and the tool frame they imply are modelled; joint 6 is not.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import OutOfReach, Singular

TWO_PI = 2.0 * math.pi

# slack on the law-of-cosines argument before a target counts as unreachable
_REACH_EPS = 1e-12


def wrap_angle(angle: float) -> float:
    """Wrap ``angle`` into (-pi, pi]."""
    if not math.isfinite(angle):
        raise ValueError(f"angle must be finite, got {angle!r}")
    wrapped = math.remainder(angle, TWO_PI)
    if wrapped <= -math.pi:
        wrapped += TWO_PI
    return wrapped


class Elbow(str, enum.Enum):
    UP = "up"
    DOWN = "down"


@dataclass(frozen=True)
class ArmGeometry:
    """Link lengths in millimetres."""

    d1: float  # base to shoulder
    a2: float  # upper arm
    a3: float  # forearm
    d6: float  # wrist to nozzle tip

    def __post_init__(self):
        for name in ("d1", "a2", "a3", "d6"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise ValueError(f"{name} must be finite and > 0, got {value!r}")


@dataclass(frozen=True)
class JointAngles:
    """Joint angles in radians, wrapped into (-pi, pi] on construction."""

    theta1: float = 0.0
    theta2: float = 0.0
    theta3: float = 0.0
    theta4: float = 0.0
    theta5: float = 0.0

    def __post_init__(self):
        for name in ("theta1", "theta2", "theta3", "theta4", "theta5"):
            object.__setattr__(self, name, wrap_angle(float(getattr(self, name))))

    @property
    def theta23(self) -> float:
        return self.theta2 + self.theta3

    @property
    def theta234(self) -> float:
        return self.theta2 + self.theta3 + self.theta4

    def as_tuple(self) -> tuple[float, float, float, float, float]:
        return (self.theta1, self.theta2, self.theta3, self.theta4, self.theta5)


@dataclass(frozen=True)
class Pose:
    rotation: np.ndarray
    position: np.ndarray

    def __post_init__(self):
        rotation = np.asarray(self.rotation, dtype=float).reshape(3, 3)
        position = np.asarray(self.position, dtype=float).reshape(3)
        rotation.flags.writeable = False
        position.flags.writeable = False
        object.__setattr__(self, "rotation", rotation)
        object.__setattr__(self, "position", position)

    def is_rotation(self, tol: float = 1e-9) -> bool:
        r = self.rotation
        return bool(
            np.allclose(r.T @ r, np.eye(3), rtol=0, atol=tol)
            and abs(np.linalg.det(r) - 1.0) <= tol
        )


@dataclass(frozen=True)
class IkRequest:
    target: tuple[float, float, float]
    pitch: float = 0.0  # desired theta2 + theta3 + theta4
    elbow: Elbow = field(default=Elbow.UP)

    def __post_init__(self):
        target = tuple(float(c) for c in self.target)
        if len(target) != 3 or not all(math.isfinite(c) for c in target):
            raise ValueError(f"target must be three finite coordinates, got {self.target!r}")
        if not math.isfinite(self.pitch):
            raise ValueError("pitch must be finite")
        object.__setattr__(self, "target", target)
        object.__setattr__(self, "elbow", Elbow(self.elbow))


def forward_kinematics(joints: JointAngles, geom: ArmGeometry) -> Pose:
    """Nozzle pose for the given joint angles.

    The third rotation column is the tool (approach) axis, which is the
    direction the ``d6`` offset is applied along, so
    ``position == wrist_center + d6 * rotation[:, 2]``.  Joint 5 rolls the
    tool frame about that axis and does not move the nozzle tip.
    """
    c1, s1 = math.cos(joints.theta1), math.sin(joints.theta1)
    c2, s2 = math.cos(joints.theta2), math.sin(joints.theta2)
    c23, s23 = math.cos(joints.theta23), math.sin(joints.theta23)
    c234, s234 = math.cos(joints.theta234), math.sin(joints.theta234)
    c5, s5 = math.cos(joints.theta5), math.sin(joints.theta5)

    reach = geom.a2 * c2 + geom.a3 * c23 + geom.d6 * s234
    position = (
        c1 * reach,
        s1 * reach,
        geom.d1 + geom.a2 * s2 + geom.a3 * s23 - geom.d6 * c234,
    )

    rotation = (
        (c1 * c234 * c5 + s1 * s5, -c1 * c234 * s5 + s1 * c5, c1 * s234),
        (s1 * c234 * c5 - c1 * s5, -s1 * c234 * s5 - c1 * c5, s1 * s234),
        (s234 * c5, -s234 * s5, -c234),
    )
    return Pose(rotation=rotation, position=position)


def inverse_kinematics(req: IkRequest, geom: ArmGeometry) -> JointAngles:
    """Joint angles placing the nozzle tip at ``req.target``.

    The tool pitch is fixed by the request, which removes the redundancy
    of three pitch joints solving a planar two-coordinate problem.  Joint 5
    is returned as zero.
    """
    px, py, pz = req.target
    if px == 0.0 and py == 0.0:
        raise Singular(f"target {req.target} lies on the base axis; base yaw is undefined")

    theta1 = math.atan2(py, px)
    radial = math.hypot(px, py)

    # wrist centre in the arm plane, relative to the shoulder
    wr = radial - geom.d6 * math.sin(req.pitch)
    wz = pz - geom.d1 + geom.d6 * math.cos(req.pitch)
    dist_sq = wr * wr + wz * wz

    cos3 = (dist_sq - geom.a2 ** 2 - geom.a3 ** 2) / (2.0 * geom.a2 * geom.a3)
    if abs(cos3) > 1.0 + _REACH_EPS:
        dist = math.sqrt(dist_sq)
        raise OutOfReach(
            f"wrist centre distance {dist:.6g} mm outside "
            f"[{abs(geom.a2 - geom.a3):.6g}, {geom.a2 + geom.a3:.6g}] mm"
        )
    cos3 = max(-1.0, min(1.0, cos3))
    theta3 = math.acos(cos3)
    if req.elbow is Elbow.UP:
        theta3 = -theta3

    theta2 = math.atan2(wz, wr) - math.atan2(
        geom.a3 * math.sin(theta3), geom.a2 + geom.a3 * math.cos(theta3)
    )
    theta4 = req.pitch - theta2 - theta3
    return JointAngles(theta1, theta2, theta3, theta4, 0.0)


def reachable(target, geom: ArmGeometry, pitch: float = 0.0) -> bool:
    try:
        inverse_kinematics(IkRequest(tuple(target), pitch), geom)
    except (OutOfReach, Singular):
        return False
    return True
