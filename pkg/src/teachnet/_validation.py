"""Input validation helpers shared by the estimators and pipeline functions."""

import numpy as np
from sklearn.utils import check_array

N_JOINTS = 17
N_HUMAN_KEYPOINTS = 21


def check_joint_vector(theta, n=N_JOINTS):
    """Return ``theta`` as a finite float64 vector of length ``n``."""
    arr = np.asarray(theta, dtype=float)
    if arr.shape != (n,):
        raise ValueError(f"joint vector must have length {n}, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("joint vector contains non-finite values")
    return arr


def check_joint_matrix(Y, n=N_JOINTS, name="joint matrix"):
    """``(n_frames, n)`` finite float array; at least one frame."""
    Y = check_array(Y, ensure_2d=True, dtype=np.float64, input_name=name)
    if Y.shape[1] != n:
        raise ValueError(f"{name} must have {n} columns, got {Y.shape[1]}")
    return Y


def check_keypoints(kp):
    """A single 21x3 human pose with finite entries and positive bone lengths."""
    arr = np.asarray(kp, dtype=float)
    if arr.shape != (N_HUMAN_KEYPOINTS, 3):
        raise ValueError(f"human keypoints must be {N_HUMAN_KEYPOINTS}x3, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("human keypoints contain non-finite values")
    return arr


def check_images(X, size=None, ndim=3, name="images"):
    """Float32 image batch of shape ``(n, H, W)`` (``ndim=3``) or ``(n, V, H, W)``
    (``ndim=4``); ``ndim`` may also be a tuple of accepted ranks."""
    X = np.asarray(X, dtype=np.float32)
    allowed = (ndim,) if np.isscalar(ndim) else tuple(ndim)
    if X.ndim not in allowed:
        raise ValueError(f"{name} must be {' or '.join(map(str, allowed))}-D, got shape {X.shape}")
    if len(X) == 0:
        raise ValueError(f"{name} is empty")
    if size is not None and X.shape[-2:] != (size, size):
        raise ValueError(f"{name} must be {size}x{size}, got {X.shape[-2:]}")
    if not np.all(np.isfinite(X)):
        raise ValueError(f"{name} contain non-finite values")
    return X
