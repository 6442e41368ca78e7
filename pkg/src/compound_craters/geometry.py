"""In-plane geometry helpers: periodic minimal image and beam-frame rotation."""

import numpy as np


def minimal_image(delta, cell):
    """Wrap in-plane separation vectors into the minimal periodic image.

    Parameters
    ----------
    delta : array_like, shape (..., 2)
        Separation vectors in the surface plane (nm).
    cell : array_like, shape (2,)
        Periodic extents ``(L_x, L_y)`` (nm).

    Returns
    -------
    numpy.ndarray
        Vectors with each component in ``[-L/2, L/2]``.
    """
    delta = np.asarray(delta, dtype=float)
    cell = np.asarray(cell, dtype=float)
    return delta - cell * np.round(delta / cell)


def to_beam_frame(xy, azimuth_deg):
    """Rotate lab-frame in-plane vectors so +x points along the projected beam."""
    phi = np.deg2rad(azimuth_deg)
    c, s = np.cos(phi), np.sin(phi)
    xy = np.asarray(xy, dtype=float)
    out = np.empty_like(xy)
    out[..., 0] = c * xy[..., 0] + s * xy[..., 1]
    out[..., 1] = -s * xy[..., 0] + c * xy[..., 1]
    return out


def from_beam_frame(xy, azimuth_deg):
    """Inverse of :func:`to_beam_frame`."""
    return to_beam_frame(xy, -azimuth_deg)
