"""Independent numerical oracles used by the unit and acceptance suites."""

import numpy as np
import torch
import torch.nn.functional as F


def finite_difference_param_grads(model, x_t, z_src, m, target, h=1e-5):
    """Central-difference gradients of the MSE loss w.r.t. every parameter.

    Perturbs each scalar parameter in place; the model must be in eval mode
    and float64 for the differences to be trustworthy.
    """
    def loss_value():
        with torch.no_grad():
            pred = model(x_t, z_src, m)
            return float(F.mse_loss(pred, target))

    grads = {}
    for name, p in model.named_parameters():
        g = torch.zeros_like(p)
        flat = p.data.view(-1)
        gflat = g.view(-1)
        for i in range(flat.numel()):
            orig = float(flat[i])
            flat[i] = orig + h
            f_plus = loss_value()
            flat[i] = orig - h
            f_minus = loss_value()
            flat[i] = orig
            gflat[i] = (f_plus - f_minus) / (2.0 * h)
        grads[name] = g
    return grads


def relative_grad_error(analytic: dict, numeric: dict) -> dict:
    """Per-tensor ||g_an - g_fd|| / max(||g_fd||, tiny)."""
    out = {}
    for name in numeric:
        diff = float(torch.linalg.vector_norm(analytic[name] - numeric[name]))
        ref = float(torch.linalg.vector_norm(numeric[name]))
        out[name] = diff / max(ref, 1e-12)
    return out


def least_squares_pixel_map(z1: np.ndarray, z2: np.ndarray):
    """Best per-pixel affine map z2 ~ A z1 + b, fit over all latent pixels.

    z1, z2: (N, c, h, w). Returns (A, b) with A (c, c), b (c,).
    """
    c = z1.shape[1]
    x = z1.transpose(0, 2, 3, 1).reshape(-1, c).astype(np.float64)
    y = z2.transpose(0, 2, 3, 1).reshape(-1, c).astype(np.float64)
    x_aug = np.concatenate([x, np.ones((x.shape[0], 1))], axis=1)
    coef, *_ = np.linalg.lstsq(x_aug, y, rcond=None)
    return coef[:c].T, coef[c]


def apply_pixel_map(a: np.ndarray, b: np.ndarray, z1: np.ndarray) -> np.ndarray:
    n, c, h, w = z1.shape
    x = z1.transpose(0, 2, 3, 1).reshape(-1, c).astype(np.float64)
    y = x @ a.T + b
    return y.reshape(n, h, w, c).transpose(0, 3, 1, 2)
