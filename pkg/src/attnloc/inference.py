"""Pose inference: single-shot GPS-based correction and EKF-smoothed filtering.

The extended Kalman filter runs a constant turn rate and velocity (CTRV)
motion model on the state [x, y, phi, v, omega] and consumes the corrected
network pose as a 3D measurement [x, y, phi]. One filter session is a
sequential state machine; independent sessions may run concurrently over
shared immutable network parameters and map.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import attention_net as net
from .geometry import Pose, correct_pose, utm_to_vehicle, wrap_angle
from .map_store import DEFAULT_FOV_RADIUS, LandmarkMap, query_fov


class NoLandmarksInFov(ValueError):
    """FoV query produced no landmarks; inference is impossible."""


class InnovationError(FloatingPointError):
    """Innovation covariance lost positive definiteness."""


def _default_r() -> tuple:
    return (0.25, 0.25, math.radians(2.0) ** 2)


@dataclass(frozen=True)
class EkfConfig:
    """Filter tuning: white accel/yaw-accel process noise and measurement noise.

    r_diag is the diagonal of the pose measurement covariance
    (m^2, m^2, rad^2). Velocity and turn-rate states initialize with
    variance init_rate_var.
    """

    sigma_accel: float = 0.5
    sigma_yaw_accel: float = 0.1
    r_diag: tuple = field(default_factory=_default_r)
    init_rate_var: float = 100.0

    def __post_init__(self) -> None:
        if self.sigma_accel <= 0 or self.sigma_yaw_accel <= 0:
            raise ValueError("process noise densities must be > 0")
        if len(self.r_diag) != 3 or any(v <= 0 for v in self.r_diag):
            raise ValueError("r_diag must be 3 positive variances")

    def r_matrix(self) -> np.ndarray:
        return np.diag(np.asarray(self.r_diag, dtype=np.float64))


@dataclass
class EkfState:
    """CTRV filter state: mean [x, y, phi, v, omega] and 5x5 covariance."""

    mean: np.ndarray
    cov: np.ndarray

    def pose(self) -> Pose:
        return Pose(self.mean[0], self.mean[1], self.mean[2])


def init_state(p: Pose, cfg: EkfConfig) -> EkfState:
    """Start a filter from a single (GPS) pose with zero rates."""
    mean = np.array([p.x, p.y, p.phi, 0.0, 0.0])
    cov = np.diag([cfg.r_diag[0], cfg.r_diag[1], cfg.r_diag[2], cfg.init_rate_var, cfg.init_rate_var])
    return EkfState(mean=mean, cov=cov)


_OMEGA_EPS = 1e-6


def ekf_predict(s: EkfState, cfg: EkfConfig, dt: float) -> EkfState:
    """Closed-form CTRV propagation with analytic Jacobian.

    Below |omega| = 1e-6 rad/s the constant-velocity limit form is used.
    The covariance is re-symmetrized after F P F^T + Q.
    """
    if dt <= 0:
        raise ValueError(f"dt must be > 0, got {dt}")
    x, y, phi, v, omega = s.mean
    F = np.eye(5)
    if abs(omega) < _OMEGA_EPS:
        c, si = math.cos(phi), math.sin(phi)
        mean = np.array([x + v * c * dt, y + v * si * dt, wrap_angle(phi + omega * dt), v, omega])
        F[0, 2] = -v * si * dt
        F[0, 3] = c * dt
        F[0, 4] = -0.5 * v * si * dt * dt  # limit of the CTRV terms as omega -> 0
        F[1, 2] = v * c * dt
        F[1, 3] = si * dt
        F[1, 4] = 0.5 * v * c * dt * dt
        F[2, 4] = dt
    else:
        phi2 = phi + omega * dt
        s1, c1 = math.sin(phi), math.cos(phi)
        s2, c2 = math.sin(phi2), math.cos(phi2)
        r = v / omega
        mean = np.array([x + r * (s2 - s1), y + r * (c1 - c2), wrap_angle(phi2), v, omega])
        F[0, 2] = r * (c2 - c1)
        F[0, 3] = (s2 - s1) / omega
        F[0, 4] = v * dt * c2 / omega - v * (s2 - s1) / omega**2
        F[1, 2] = r * (s2 - s1)
        F[1, 3] = (c1 - c2) / omega
        F[1, 4] = v * dt * s2 / omega - v * (c1 - c2) / omega**2
        F[2, 4] = dt
    # noise enters through acceleration and yaw acceleration held over dt
    c, si = math.cos(phi), math.sin(phi)
    g = np.array([
        [0.5 * dt * dt * c, 0.0],
        [0.5 * dt * dt * si, 0.0],
        [0.0, 0.5 * dt * dt],
        [dt, 0.0],
        [0.0, dt],
    ])
    q = g @ np.diag([cfg.sigma_accel**2, cfg.sigma_yaw_accel**2]) @ g.T
    cov = F @ s.cov @ F.T + q
    return EkfState(mean=mean, cov=0.5 * (cov + cov.T))


def ekf_update(s: EkfState, z: Pose, cfg: EkfConfig) -> EkfState:
    """Pose-measurement update, H = [I3 | 0], Joseph-form covariance.

    The heading innovation is wrapped, so measurements across the +-pi seam
    stay small.
    """
    h = np.zeros((3, 5))
    h[:3, :3] = np.eye(3)
    r = cfg.r_matrix()
    innov = np.array([z.x - s.mean[0], z.y - s.mean[1], wrap_angle(z.phi - s.mean[2])])
    s_mat = h @ s.cov @ h.T + r
    try:
        np.linalg.cholesky(s_mat)
    except np.linalg.LinAlgError as exc:
        raise InnovationError("innovation covariance is not positive definite") from exc
    k = s.cov @ h.T @ np.linalg.inv(s_mat)
    mean = s.mean + k @ innov
    mean[2] = wrap_angle(mean[2])
    ikh = np.eye(5) - k @ h
    cov = ikh @ s.cov @ ikh.T + k @ r @ k.T
    return EkfState(mean=mean, cov=0.5 * (cov + cov.T))


def gps_inference(
    params: net.ModelParams,
    lmap: LandmarkMap,
    measurements,
    p_gps: Pose,
    fov_radius: float = DEFAULT_FOV_RADIUS,
) -> Pose:
    """Single-shot correction of a noisy GPS pose.

    Landmarks in the field of view are transformed into the GPS frame, the
    network regresses the pose offset, and the offset is subtracted from
    the GPS pose.
    """
    m = np.asarray(measurements, dtype=np.float64)
    if m.size == 0:
        raise ValueError("gps_inference needs at least one measurement")
    fov = query_fov(lmap, p_gps, fov_radius)
    if fov.shape[0] == 0:
        raise NoLandmarksInFov("no landmarks in field of view")
    offset = net.predict_offset(m, utm_to_vehicle(fov, p_gps), params)
    return correct_pose(p_gps, offset)


class FilterSession:
    """EKF-smoothed localization needing only one GPS pose to initialize.

    Each step transforms map landmarks with the previous estimate, corrects
    it by the network offset, and feeds the corrected pose to the filter as
    a measurement.
    """

    def __init__(
        self,
        params: net.ModelParams,
        lmap: LandmarkMap,
        p_init: Pose,
        ekf_cfg: EkfConfig | None = None,
        fov_radius: float = DEFAULT_FOV_RADIUS,
    ):
        self.params = params
        self.lmap = lmap
        self.cfg = ekf_cfg if ekf_cfg is not None else EkfConfig()
        self.fov_radius = fov_radius
        self.state = init_state(p_init, self.cfg)

    def step(self, measurements, dt: float) -> Pose:
        """Advance one frame; returns the smoothed pose estimate."""
        if dt <= 0:
            raise ValueError(f"dt must be > 0, got {dt}")
        m = np.asarray(measurements, dtype=np.float64)
        if m.size == 0:
            raise ValueError("filter step needs at least one measurement")
        p_prev = self.state.pose()
        fov = query_fov(self.lmap, p_prev, self.fov_radius)
        if fov.shape[0] == 0:
            raise NoLandmarksInFov("no landmarks in field of view")
        offset = net.predict_offset(m, utm_to_vehicle(fov, p_prev), self.params)
        z = correct_pose(p_prev, offset)
        self.state = ekf_predict(self.state, self.cfg, dt)
        self.state = ekf_update(self.state, z, self.cfg)
        return self.state.pose()
