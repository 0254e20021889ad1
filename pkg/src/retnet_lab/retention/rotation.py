"""Position rotations applied to queries and keys."""

from typing import Any, Optional, Sequence, Union

import numpy as np

from numpy.typing import NDArray

from retnet_lab.numerics import ops
from retnet_lab.numerics.tensor import Tensor

ROTATION_BASE = 10000.0


def rotation_angles(features: int, base: float = ROTATION_BASE) -> NDArray[np.float64]:
    """The base angles theta_k = base^(-2k / d) for k < d / 2.

    Args:
        features: The even feature count d.
        base: The wavelength base.

    Returns:
        The d / 2 angles.
    """
    if features % 2:
        raise ValueError(f"Rotations need an even feature count, got {features}.")
    return np.power(base, -2.0 * np.arange(features // 2) / features)


def apply_xpos(
    x: Tensor,
    positions: Union[Sequence[int], NDArray[np.int64]],
    sign: int = 1,
    angles: Optional[NDArray[Any]] = None,
) -> Tensor:
    """Rotate row n of x by ``sign * positions[n] * theta``.

    Queries and keys are both rotated with sign +1: the real inner product of two rotated pairs
    already equals the real part of q times the conjugate of k, so q_n . k_m depends on n - m only.

    Args:
        x: A tensor of shape (..., length, d).
        positions: The absolute position of each row.
        sign: The rotation direction.
        angles: Precomputed base angles, defaults to ``rotation_angles(d)``.

    Returns:
        The rotated tensor.
    """
    if angles is None:
        angles = rotation_angles(x.shape[-1])
    return ops.rotate_pairs(x, angles, np.asarray(positions, dtype=np.int64), sign)
