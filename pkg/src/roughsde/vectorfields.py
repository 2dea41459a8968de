"""Built-in vector fields.

All callables act on states of shape (..., m) and broadcast over leading
batch axes:  V0 -> (..., m),  V -> (..., m, d),  dV -> (..., m, d, m) with
dV[..., k, j, l] = d/dy_l V_j^k.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Dict, Optional

import numpy as np

from .errors import ConfigError

__all__ = ["VectorFieldSpec", "REGISTRY", "get_field", "linear1d"]

Array = np.ndarray


@dataclass(frozen=True)
class VectorFieldSpec:
    name: str
    m: int
    d: int
    V: Callable[[Array], Array]
    dV: Optional[Callable[[Array], Array]] = None
    V0: Optional[Callable[[Array], Array]] = None
    d2V: Optional[Callable[[Array], Array]] = None
    smoothness: str = "C4"
    linear: bool = False  # V(y) = y, V0 = 0, m = d = 1: exact solution a*exp(x)


def _linear_V(y):
    return y[..., :, None]


def _linear_dV(y):
    return np.ones(y.shape[:-1] + (1, 1, 1))


def _sine_V(y):
    return np.sin(y)[..., :, None]


def _sine_dV(y):
    return np.cos(y)[..., :, None, None]


def _sine_d2V(y):
    return (-np.sin(y))[..., :, None, None, None]


def _rot_V(y):
    # bounded rotation-like field: (-sin y2, sin y1)
    out = np.empty(y.shape[:-1] + (2, 1))
    out[..., 0, 0] = -np.sin(y[..., 1])
    out[..., 1, 0] = np.sin(y[..., 0])
    return out


def _rot_dV(y):
    out = np.zeros(y.shape[:-1] + (2, 1, 2))
    out[..., 0, 0, 1] = -np.cos(y[..., 1])
    out[..., 1, 0, 0] = np.cos(y[..., 0])
    return out


def _poly_V(y):
    y1, y2 = y[..., 0], y[..., 1]
    out = np.empty(y.shape[:-1] + (2, 2))
    out[..., 0, 0] = 1.0 / (1.0 + y2**2)
    out[..., 1, 0] = y1 / (1.0 + y1**2)
    out[..., 0, 1] = 0.5 * np.tanh(y2)
    out[..., 1, 1] = 1.0 / (1.0 + y1**2)
    return out


def _poly_dV(y):
    y1, y2 = y[..., 0], y[..., 1]
    out = np.zeros(y.shape[:-1] + (2, 2, 2))
    out[..., 0, 0, 1] = -2.0 * y2 / (1.0 + y2**2) ** 2
    out[..., 1, 0, 0] = (1.0 - y1**2) / (1.0 + y1**2) ** 2
    out[..., 0, 1, 1] = 0.5 / np.cosh(y2) ** 2
    out[..., 1, 1, 0] = -2.0 * y1 / (1.0 + y1**2) ** 2
    return out


def _poly_V0(y):
    return -0.1 * y / (1.0 + np.sum(y * y, axis=-1, keepdims=True))


linear1d = VectorFieldSpec("linear1d", 1, 1, _linear_V, _linear_dV, linear=True, smoothness="linear")

REGISTRY: Dict[str, VectorFieldSpec] = {
    "linear1d": linear1d,
    "sine1d": VectorFieldSpec("sine1d", 1, 1, _sine_V, _sine_dV, d2V=_sine_d2V),
    "rotation2d": VectorFieldSpec("rotation2d", 2, 1, _rot_V, _rot_dV),
    "poly2x2": VectorFieldSpec("poly2x2", 2, 2, _poly_V, _poly_dV, V0=_poly_V0),
}


def get_field(name: str) -> VectorFieldSpec:
    try:
        return REGISTRY[name]
    except KeyError:
        raise ConfigError(
            f"unknown vector field {name!r}; available: {', '.join(sorted(REGISTRY))}"
        ) from None
