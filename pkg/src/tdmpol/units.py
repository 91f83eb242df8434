"""Power unit conversions."""
import numpy as np


def dbm_to_w(p_dbm):
    return 1e-3 * 10.0 ** (np.asarray(p_dbm, dtype=float) / 10.0)


def w_to_dbm(p_w):
    p_w = np.asarray(p_w, dtype=float)
    with np.errstate(divide="ignore"):
        return 10.0 * np.log10(p_w / 1e-3)


def db_to_amplitude(loss_db):
    """Field amplitude factor of a loss given in dB."""
    return 10.0 ** (-np.asarray(loss_db, dtype=float) / 20.0)
