"""Viewpoint parameterization and camera geometry.

Coordinate conventions
======================
World frame (right-handed):
  - The object of interest is centered at the origin.
  - +z is up. The default camera orbit starts at ``[0, 4, 0]``.

Viewpoint vector ``v`` (canonical order)::

    [psi, theta, phi, dx, dy, dz]

  - ``psi``, ``theta``, ``phi``: camera rotation in DEGREES about the world
    z, y, x axes, composed as ``R = Rz(psi) @ Ry(theta) @ Rx(phi)``.
  - ``dx``, ``dy``, ``dz``: camera translation offsets in scene units,
    added in the WORLD frame after the base position is rotated.

Camera frame (OpenCV-style): the columns of ``CameraPose.rotation`` are the
world-space directions of (image right, image down, camera forward). The
camera is oriented to look at the world origin with world +z as the up
reference; when the look direction is parallel to +z the up reference falls
back to world +x and the pose is flagged as ``gimbal_fallback``.

Bounded reparameterization: a viewpoint is produced from an unconstrained
vector ``u`` via ``v = a * tanh(u) + b`` with ``a = (v_max - v_min) / 2``
and ``b = (v_max + v_min) / 2``, which keeps ``v`` strictly inside its box
for every finite ``u``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateBounds, NonFiniteInput, OutOfBounds

VIEW_DIM_NAMES = ("psi", "theta", "phi", "dx", "dy", "dz")
VIEW_DIMS = len(VIEW_DIM_NAMES)

DEFAULT_CAMERA_POSITION = (0.0, 4.0, 0.0)

# tanh output is clipped to +/- (1 - _TANH_GUARD) so that saturated inputs
# still map to the open interval (v_min, v_max).
_TANH_GUARD = 1e-12

_WORLD_UP = np.array([0.0, 0.0, 1.0])
_FALLBACK_UP = np.array([1.0, 0.0, 0.0])
_PARALLEL_TOL = 1e-9


@dataclass(frozen=True)
class Viewpoint:
    """A 6-DoF camera viewpoint: three rotations (degrees), three offsets."""

    psi: float
    theta: float
    phi: float
    dx: float
    dy: float
    dz: float

    def as_array(self) -> np.ndarray:
        return np.array([self.psi, self.theta, self.phi, self.dx, self.dy, self.dz])

    @classmethod
    def from_array(cls, v) -> "Viewpoint":
        v = np.asarray(v, dtype=float)
        if v.shape != (VIEW_DIMS,):
            raise ValueError(f"expected a {VIEW_DIMS}-vector, got shape {v.shape}")
        return cls(*(float(x) for x in v))


@dataclass(frozen=True)
class ViewpointBounds:
    """Box constraints on the viewpoint vector, with the derived half-width
    ``a`` and midpoint ``b`` of each interval.

    Construct through :func:`make_bounds`, which validates the box and
    computes ``a``/``b`` so they can never go stale.
    """

    v_min: np.ndarray
    v_max: np.ndarray
    a: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        for arr in (self.v_min, self.v_max, self.a, self.b):
            arr.setflags(write=False)

    @property
    def widths(self) -> np.ndarray:
        return self.v_max - self.v_min

    def contains(self, v: Viewpoint | np.ndarray, strict: bool = False) -> bool:
        arr = v.as_array() if isinstance(v, Viewpoint) else np.asarray(v, dtype=float)
        if strict:
            return bool(np.all(arr > self.v_min) and np.all(arr < self.v_max))
        return bool(np.all(arr >= self.v_min) and np.all(arr <= self.v_max))

    def to_dict(self) -> dict:
        return {"v_min": self.v_min.tolist(), "v_max": self.v_max.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "ViewpointBounds":
        return make_bounds(d["v_min"], d["v_max"])


def make_bounds(v_min, v_max) -> ViewpointBounds:
    """Build viewpoint box constraints with half-widths a = (max-min)/2 and
    midpoints b = (max+min)/2.

    Raises DegenerateBounds unless v_min < v_max on every axis.
    """
    v_min = np.asarray(v_min, dtype=float).copy()
    v_max = np.asarray(v_max, dtype=float).copy()
    if v_min.shape != (VIEW_DIMS,) or v_max.shape != (VIEW_DIMS,):
        raise ValueError("bounds must be 6-vectors")
    if not (np.all(np.isfinite(v_min)) and np.all(np.isfinite(v_max))):
        raise NonFiniteInput("bounds must be finite")
    if np.any(v_min >= v_max):
        bad = [VIEW_DIM_NAMES[i] for i in np.nonzero(v_min >= v_max)[0]]
        raise DegenerateBounds(f"v_min >= v_max on axes {bad}")
    a = (v_max - v_min) / 2.0
    b = (v_max + v_min) / 2.0
    return ViewpointBounds(v_min=v_min, v_max=v_max, a=a, b=b)


def default_bounds() -> ViewpointBounds:
    """Default desk-scale viewpoint ranges: full azimuth, moderate tilt,
    elevation sweeping from low over the top to the far side, and small
    translation offsets.
    """
    return make_bounds(
        v_min=[-180.0, -30.0, 20.0, -0.5, -1.0, -0.5],
        v_max=[180.0, 30.0, 160.0, 0.5, 1.0, 0.5],
    )


def tanh_transform_array(u, bounds: ViewpointBounds) -> np.ndarray:
    """Vectorized ``v = a * tanh(u) + b``.

    Accepts shape (6,) or (n, 6); returns the same shape. Output is strictly
    inside the open box for all finite input (saturated tanh values are
    nudged off +/-1 by a 1e-12 guard).
    """
    u = np.asarray(u, dtype=float)
    if not np.all(np.isfinite(u)):
        raise NonFiniteInput("unconstrained viewpoint vector must be finite")
    t = np.clip(np.tanh(u), -1.0 + _TANH_GUARD, 1.0 - _TANH_GUARD)
    return bounds.a * t + bounds.b


def tanh_transform(u, bounds: ViewpointBounds) -> Viewpoint:
    """Map an unconstrained 6-vector to a Viewpoint strictly inside bounds."""
    v = tanh_transform_array(u, bounds)
    if v.shape != (VIEW_DIMS,):
        raise ValueError("tanh_transform expects a single 6-vector")
    return Viewpoint.from_array(v)


def inverse_transform(v: Viewpoint | np.ndarray, bounds: ViewpointBounds) -> np.ndarray:
    """Invert the bounded transform: u = atanh((v - b) / a).

    The viewpoint must be strictly interior; coordinates at or beyond the
    interval endpoints raise OutOfBounds.
    """
    arr = v.as_array() if isinstance(v, Viewpoint) else np.asarray(v, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise NonFiniteInput("viewpoint must be finite")
    z = (arr - bounds.b) / bounds.a
    if np.any(np.abs(z) >= 1.0):
        bad = [VIEW_DIM_NAMES[i] for i in np.nonzero(np.abs(z) >= 1.0)[0]]
        raise OutOfBounds(f"viewpoint at or beyond interval endpoints on axes {bad}")
    return np.arctanh(z)


def log_sech2(u) -> np.ndarray:
    """Numerically stable ``log(1 - tanh(u)^2)``.

    Uses ``sech^2(u) = 4 e^{-2|u|} / (1 + e^{-2|u|})^2`` so the result stays
    finite where the naive expression underflows to log(0).
    """
    u = np.asarray(u, dtype=float)
    return np.log(4.0) - 2.0 * np.abs(u) - 2.0 * np.log1p(np.exp(-2.0 * np.abs(u)))


def log_abs_det_jacobian(u, bounds: ViewpointBounds) -> np.ndarray:
    """log |dv/du| for the bounded transform, summed over the 6 axes.

    Accepts shape (6,) or (n, 6); returns a scalar or (n,) array of
    ``sum_d log(a_d * sech^2(u_d))``.
    """
    u = np.asarray(u, dtype=float)
    return np.sum(np.log(bounds.a) + log_sech2(u), axis=-1)


def _rot_x(deg: float) -> np.ndarray:
    c, s = np.cos(np.radians(deg)), np.sin(np.radians(deg))
    return np.array([[1, 0, 0], [0, c, -s], [0, s, c]], dtype=float)


def _rot_y(deg: float) -> np.ndarray:
    c, s = np.cos(np.radians(deg)), np.sin(np.radians(deg))
    return np.array([[c, 0, s], [0, 1, 0], [-s, 0, c]], dtype=float)


def _rot_z(deg: float) -> np.ndarray:
    c, s = np.cos(np.radians(deg)), np.sin(np.radians(deg))
    return np.array([[c, -s, 0], [s, c, 0], [0, 0, 1]], dtype=float)


def rotation_matrix(psi: float, theta: float, phi: float) -> np.ndarray:
    """Rotation about world z, y, x axes (degrees): Rz(psi) Ry(theta) Rx(phi)."""
    angles = np.array([psi, theta, phi], dtype=float)
    if not np.all(np.isfinite(angles)):
        raise NonFiniteInput("rotation angles must be finite")
    return _rot_z(psi) @ _rot_y(theta) @ _rot_x(phi)


@dataclass(frozen=True)
class CameraPose:
    """World-space camera placement.

    ``rotation`` is camera-to-world with columns (right, down, forward);
    ``position`` is the camera center. ``gimbal_fallback`` records that the
    look direction was parallel to the up reference and the deterministic
    +x fallback was used.
    """

    rotation: np.ndarray
    position: np.ndarray
    gimbal_fallback: bool = False

    def __post_init__(self):
        if not np.allclose(self.rotation.T @ self.rotation, np.eye(3), atol=1e-9):
            raise ValueError("camera rotation must be orthonormal")
        if not np.isclose(np.linalg.det(self.rotation), 1.0, atol=1e-9):
            raise ValueError("camera rotation must be proper (det +1)")
        self.rotation.setflags(write=False)
        self.position.setflags(write=False)

    @property
    def forward(self) -> np.ndarray:
        return self.rotation[:, 2]


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole camera and ray-march sampling settings."""

    width: int = 32
    height: int = 32
    fov_y: float = 50.0
    t_near: float = 1.0
    t_far: float = 8.0
    samples_per_ray: int = 64

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ValueError("image dimensions must be >= 1")
        if not (0.0 < self.t_near < self.t_far):
            raise ValueError("need 0 < t_near < t_far")
        if self.samples_per_ray < 2:
            raise ValueError("need at least 2 samples per ray")
        if not (0.0 < self.fov_y < 180.0):
            raise ValueError("fov_y must be in (0, 180) degrees")

    @property
    def num_pixels(self) -> int:
        return self.width * self.height


def _look_at(position: np.ndarray, target: np.ndarray) -> tuple[np.ndarray, bool]:
    forward = target - position
    norm = np.linalg.norm(forward)
    if norm == 0.0:
        raise ValueError("camera position coincides with the look target")
    forward = forward / norm

    up = _WORLD_UP
    fallback = False
    right = np.cross(forward, up)
    if np.linalg.norm(right) < _PARALLEL_TOL:
        up = _FALLBACK_UP
        fallback = True
        right = np.cross(forward, up)
    right = right / np.linalg.norm(right)
    down = np.cross(forward, right)
    rotation = np.column_stack([right, down, forward])
    return rotation, fallback


def camera_pose(
    v: Viewpoint,
    base_position=DEFAULT_CAMERA_POSITION,
) -> CameraPose:
    """Place the camera for a viewpoint.

    The base position is rotated about the world origin by
    Rz(psi) Ry(theta) Rx(phi), the translation offsets are added in the
    world frame, and the camera is oriented to look at the origin.
    """
    base = np.asarray(base_position, dtype=float)
    rot = rotation_matrix(v.psi, v.theta, v.phi)
    position = rot @ base + np.array([v.dx, v.dy, v.dz])
    rotation, fallback = _look_at(position, np.zeros(3))
    return CameraPose(rotation=rotation, position=position, gimbal_fallback=fallback)


def generate_rays(pose: CameraPose, intr: CameraIntrinsics) -> tuple[np.ndarray, np.ndarray]:
    """Pinhole rays for every pixel, in row-major pixel order.

    Returns ``(origins, directions)`` of shape (H*W, 3); directions are
    unit-norm and the ray through the image center coincides with the
    camera forward axis.
    """
    h, w = intr.height, intr.width
    tan_y = np.tan(np.radians(intr.fov_y) / 2.0)
    tan_x = tan_y * w / h

    cols = (2.0 * (np.arange(w) + 0.5) / w - 1.0) * tan_x
    rows = (2.0 * (np.arange(h) + 0.5) / h - 1.0) * tan_y
    xs, ys = np.meshgrid(cols, rows)  # row-major: ys varies over image rows

    dirs_cam = np.stack([xs.ravel(), ys.ravel(), np.ones(h * w)], axis=1)
    dirs = dirs_cam @ pose.rotation.T
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    origins = np.broadcast_to(pose.position, (h * w, 3)).copy()
    return origins, dirs
