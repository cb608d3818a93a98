"""Pure-Python (numpy) versions of the pairwise propagation kernels.

Both kernels evaluate log-distance path loss from every source transmitter to
every destination receiver. Used when the compiled ``_kernels`` extension is
not available, and as the reference side of the kernel benchmark.
"""
import numpy as np


def _rx_matrix(sx, sy, sp, dx, dy, ref_loss, d0, exponent, min_distance):
    d = np.hypot(dx[:, None] - sx[None, :], dy[:, None] - sy[None, :])
    d = np.maximum(d, min_distance)
    return sp[None, :] - (ref_loss + 10.0 * exponent * np.log10(d / d0))


def pairwise_rx_dbm(sx, sy, sp, dx, dy, ref_loss, d0, exponent, min_distance):
    """Received power (dBm) at each destination from each source, shape (n_dst, n_src)."""
    return _rx_matrix(np.asarray(sx), np.asarray(sy), np.asarray(sp),
                      np.asarray(dx), np.asarray(dy),
                      ref_loss, d0, exponent, min_distance)


def aggregate_mw(sx, sy, sp, s_ch, s_owner, dx, dy, d_ch, d_owner,
                 ref_loss, d0, exponent, min_distance):
    """Linear-domain interference sum (mW) at each destination.

    Source j contributes to destination i unless ``d_ch[i] >= 0`` and the
    channels differ, or ``d_owner[i] >= 0`` and the owners match.
    """
    s_ch = np.asarray(s_ch)
    s_owner = np.asarray(s_owner)
    d_ch = np.asarray(d_ch)
    d_owner = np.asarray(d_owner)
    if len(sx) == 0 or len(dx) == 0:
        return np.zeros(len(dx))
    rx = _rx_matrix(np.asarray(sx), np.asarray(sy), np.asarray(sp),
                    np.asarray(dx), np.asarray(dy),
                    ref_loss, d0, exponent, min_distance)
    keep = (d_ch[:, None] < 0) | (s_ch[None, :] == d_ch[:, None])
    keep &= (d_owner[:, None] < 0) | (s_owner[None, :] != d_owner[:, None])
    return np.where(keep, 10.0 ** (rx / 10.0), 0.0).sum(axis=1)
