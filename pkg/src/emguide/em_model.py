"""Analytic force models for the electromagnet / pen-magnet pair.

All quantities are strict SI (m, N, A·m²). The fast in-plane model treats
both magnets as vertical point dipoles separated by a fixed height h, which
reduces the general dipole-dipole force to a scalar profile of the in-plane
separation d. A first-order tilt extension covers small pen tilts.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

log = logging.getLogger(__name__)

MU0 = 4.0 * math.pi * 1e-7  # vacuum permeability [H/m]

# Below this separation the point-dipole model diverges and no longer
# describes the hardware (h is ~27 mm); clamp and warn instead of blowing up.
MIN_SEPARATION = 1e-3


class EmModelError(ValueError):
    """Invalid parameters or inputs to the force models."""


class SingularityError(EmModelError):
    """Dipole positions coincide; the force is undefined."""


@dataclass(frozen=True)
class EmParams:
    """Physical constants of the electromagnet / pen-magnet pair.

    m_p may be omitted (None) and is then derived as br*volume/mu0. If both
    m_p and (br, volume) are given, they must agree to 1e-3 relative.
    """

    br: float  # residual magnetization of the pen magnet [T]
    volume: float  # pen magnet volume [m^3]
    m_m: float  # electromagnet full-strength dipole moment [A m^2]
    h_p: float  # pen-tip-to-magnet height [m]
    h_m: float  # plane-to-EM-dipole vertical distance [m]
    m_p: float = None  # pen dipole moment [A m^2]; derived if None
    mu0: float = MU0
    h: float = field(init=False)  # total vertical dipole separation [m]

    def __post_init__(self):
        if self.mu0 != MU0:
            raise EmModelError(f"mu0 must be 4*pi*1e-7 exactly, got {self.mu0}")
        for name in ("br", "volume", "m_m", "h_p", "h_m"):
            if not getattr(self, name) > 0:
                raise EmModelError(f"{name} must be strictly positive")
        derived = self.br * self.volume / self.mu0
        if self.m_p is None:
            object.__setattr__(self, "m_p", derived)
        elif abs(self.m_p - derived) > 1e-3 * abs(self.m_p):
            raise EmModelError(
                f"m_p={self.m_p} inconsistent with br*volume/mu0={derived:.6g} "
                "(must agree to 1e-3 relative)"
            )
        if not self.m_p > 0:
            raise EmModelError("m_p must be strictly positive")
        object.__setattr__(self, "h", self.h_p + self.h_m)

    @classmethod
    def table_defaults(cls) -> "EmParams":
        """Hardware constants of the reference prototype (N42 ring magnet pen)."""
        return cls(br=1.3, volume=0.66e-6, m_m=1.286, h_p=0.0140, h_m=0.0131)


@dataclass(frozen=True)
class DipoleState:
    """Oriented point magnet: moment [A m^2] and position [m], both 3-vectors."""

    moment: np.ndarray
    position: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.moment, dtype=float).reshape(3)
        p = np.asarray(self.position, dtype=float).reshape(3)
        if not (np.all(np.isfinite(m)) and np.all(np.isfinite(p))):
            raise EmModelError("dipole moment/position must be finite")
        object.__setattr__(self, "moment", m)
        object.__setattr__(self, "position", p)


@dataclass(frozen=True)
class PlanarForce:
    """Force on the pen split into drawing-plane and vertical parts."""

    in_plane: np.ndarray  # 2-vector [N]
    vertical: float  # z component [N]; reported but never used by the planar loop

    def __post_init__(self):
        f = np.asarray(self.in_plane, dtype=float).reshape(2)
        if not (np.all(np.isfinite(f)) and np.isfinite(self.vertical)):
            raise EmModelError("force components must be finite")
        object.__setattr__(self, "in_plane", f)


def force_constant(params: EmParams) -> float:
    """Characteristic force scale 3*mu0*m_p*m_m / (4*pi*h^4) of the pair [N]."""
    if not params.h > 0:
        raise EmModelError("vertical separation h must be positive")
    return 3.0 * params.mu0 * params.m_p * params.m_m / (4.0 * math.pi * params.h**4)


def radial_profile(d: float, params: EmParams) -> float:
    """Dimensionless in-plane force profile f0(d) of two vertical dipoles.

    Zero at d=0 and d=2h, peaking at ~0.914 near d=0.389h.
    """
    u = (d / params.h) ** 2
    return (d / params.h) * (4.0 - u) / (1.0 + u) ** 3.5


def _radial_over_d(d2: float, params: EmParams) -> float:
    # f0(d)/d as a smooth function of d^2; finite at d=0 (-> 4/h).
    u = d2 / params.h**2
    return (4.0 - u) / (params.h * (1.0 + u) ** 3.5)


def actuation_force(d: float, alpha: float, direction, params: EmParams) -> np.ndarray:
    """In-plane force [N] the energized magnet exerts on the pen.

    d is the in-plane pen-magnet separation, direction the unit vector from
    pen toward magnet; positive magnitude means attraction toward the magnet.
    """
    if d < 0:
        raise EmModelError(f"separation d must be >= 0, got {d}")
    if not 0.0 <= alpha <= 1.0:
        raise EmModelError(f"intensity alpha must be in [0, 1], got {alpha}")
    e_d = np.asarray(direction, dtype=float).reshape(2)
    return alpha * force_constant(params) * radial_profile(d, params) * e_d


def actuation_force_from_positions(
    pen_pos, magnet_pos, alpha: float, params: EmParams
) -> np.ndarray:
    """Same as actuation_force but from in-plane positions; smooth at d=0."""
    if not 0.0 <= alpha <= 1.0:
        raise EmModelError(f"intensity alpha must be in [0, 1], got {alpha}")
    d_vec = np.asarray(magnet_pos, dtype=float) - np.asarray(pen_pos, dtype=float)
    d2 = float(d_vec @ d_vec)
    return alpha * force_constant(params) * _radial_over_d(d2, params) * d_vec


def dipole_dipole_force(pen: DipoleState, em: DipoleState) -> np.ndarray:
    """Force [N] on the pen dipole exerted by the electromagnet dipole.

    Point-dipole interaction force; exact for point dipoles at any
    orientation, singular as the separation vanishes.
    """
    r_vec = pen.position - em.position
    r = float(np.linalg.norm(r_vec))
    if r == 0.0:
        raise SingularityError("dipole positions coincide")
    if r < MIN_SEPARATION:
        log.warning(
            "dipole separation %.2e m below %.0e m guard; clamping", r, MIN_SEPARATION
        )
        r_vec = r_vec * (MIN_SEPARATION / r)
        r = MIN_SEPARATION
    mp, me = pen.moment, em.moment
    mp_r = float(mp @ r_vec)
    me_r = float(me @ r_vec)
    mp_me = float(mp @ me)
    pref = 3.0 * MU0 / (4.0 * math.pi * r**5)
    return pref * (mp_r * me + me_r * mp + mp_me * r_vec - 5.0 * mp_r * me_r / r**2 * r_vec)


def planar_force(pen_pos, magnet_pos, alpha: float, params: EmParams) -> PlanarForce:
    """Decomposition of the full vertical-dipole force at in-plane offset d.

    The vertical part pulls the pen down; it is reported for completeness but
    never enters the planar control loop.
    """
    pen3 = np.array([pen_pos[0], pen_pos[1], params.h], dtype=float)
    mag3 = np.array([magnet_pos[0], magnet_pos[1], 0.0], dtype=float)
    pen = DipoleState(np.array([0.0, 0.0, params.m_p]), pen3)
    em = DipoleState(np.array([0.0, 0.0, alpha * params.m_m]), mag3)
    f = dipole_dipole_force(pen, em)
    return PlanarForce(in_plane=f[:2], vertical=float(f[2]))


def tilt_profile(d: float, params: EmParams) -> float:
    """First-order tilt coefficient f1(d) of the in-plane force.

    Derived by expanding the dipole-dipole force to first order in the pen
    tilt: the dipole moment gains an in-plane component and its position
    swings by h_p * tilt. Matches the numerical derivative of the full
    dipole model to machine precision.
    """
    u = (d / params.h) ** 2
    q = params.h_p / params.h
    return (
        (4.0 * q - 1.0) / (1.0 + u) ** 2.5
        + 5.0 * u / (1.0 + u) ** 3.5
        - 35.0 * q * u / (1.0 + u) ** 4.5
    )


def angle_aware_force(
    d: float, tilt_theta: float, tilt_phi: float, alpha: float, params: EmParams
) -> float:
    """Scalar in-plane force [N] for a pen tilted by tilt_theta at azimuth tilt_phi.

    Small-angle model, first order in tilt_theta; valid for |tilt_theta| <=
    pi/6. tilt_phi = 0 tilts the pen top away from the magnet. At
    tilt_theta = 0 this is exactly the upright-pen magnitude.
    """
    if abs(tilt_theta) > math.pi / 6 + 1e-12:
        raise EmModelError(f"|tilt_theta| <= pi/6 required, got {tilt_theta}")
    f0 = radial_profile(d, params)
    f1 = tilt_profile(d, params)
    return alpha * force_constant(params) * (f0 + tilt_theta * math.cos(tilt_phi) * f1)


def desired_force(r_theta, stiffness_c: float = None, params: EmParams = None) -> np.ndarray:
    """Spring-like guidance force [N] pulling the pen along r_theta.

    Magnitude c * F0 * |r_theta| toward the setpoint, vanishing on arrival.
    Default stiffness c = 5/h.
    """
    if params is None:
        raise EmModelError("params required")
    if stiffness_c is None:
        stiffness_c = 5.0 / params.h
    if not stiffness_c > 0:
        raise EmModelError(f"stiffness must be positive, got {stiffness_c}")
    r = np.asarray(r_theta, dtype=float).reshape(2)
    # c * F0 * |r| * unit(r) == c * F0 * r; smooth through r = 0
    return stiffness_c * force_constant(params) * r


# --- parameter file I/O ----------------------------------------------------

# Config mirrors the hardware table field-for-field; heights in cm and the
# magnet volume in cm^3 as in the datasheet, converted to SI here.
_EM_CONFIG_FIELDS = ("br", "volume_cm3", "m_p", "m_m", "h_cm", "h_p_cm", "h_m_cm")


def em_params_from_dict(cfg: dict) -> EmParams:
    """Build EmParams from a config mapping, converting cm units to SI."""
    unknown = set(cfg) - set(_EM_CONFIG_FIELDS)
    if unknown:
        raise EmModelError(f"unknown EM parameter fields: {sorted(unknown)}")
    try:
        br = float(cfg["br"])
        volume = float(cfg["volume_cm3"]) * 1e-6
        m_m = float(cfg["m_m"])
        h_p = float(cfg["h_p_cm"]) * 1e-2
        h_m = float(cfg["h_m_cm"]) * 1e-2
    except KeyError as exc:
        raise EmModelError(f"missing EM parameter field: {exc.args[0]}") from exc
    m_p = float(cfg["m_p"]) if "m_p" in cfg else None
    params = EmParams(br=br, volume=volume, m_m=m_m, h_p=h_p, h_m=h_m, m_p=m_p)
    if "h_cm" in cfg:
        h = float(cfg["h_cm"]) * 1e-2
        if abs(h - params.h) > 1e-9 + 1e-6 * abs(h):
            raise EmModelError(f"h_cm={cfg['h_cm']} inconsistent with h_p_cm + h_m_cm")
    return params


def em_params_to_dict(params: EmParams) -> dict:
    """Inverse of em_params_from_dict (values back in table units)."""
    return {
        "br": params.br,
        "volume_cm3": params.volume * 1e6,
        "m_p": params.m_p,
        "m_m": params.m_m,
        "h_cm": params.h * 1e2,
        "h_p_cm": params.h_p * 1e2,
        "h_m_cm": params.h_m * 1e2,
    }
