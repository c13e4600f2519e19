"""Rotations between a device dq frame and the common network frame.

Convention: ``network = [[cos d, -sin d], [sin d, cos d]] @ device``, i.e.
the device frame is the network frame rotated forward by ``d`` radians.
"""
from .numeric import cos, sin


def device_to_network(d, q, delta):
    c, s = cos(delta), sin(delta)
    return c * d - s * q, s * d + c * q


def network_to_device(r, i, delta):
    c, s = cos(delta), sin(delta)
    return c * r + s * i, -s * r + c * i


def power(vd, vq, id_, iq):
    """Active and reactive power v * conj(i) from dq components."""
    return vd * id_ + vq * iq, vq * id_ - vd * iq
