"""Central finite-difference helpers used to verify hand-written gradients."""
import numpy as np


def numeric_gradient(f, x, step=1e-5):
    """Central differences of scalar ``f`` w.r.t. array ``x`` (perturbed in place, then restored)."""
    grad = np.zeros_like(x, dtype=float)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        orig = x[idx]
        x[idx] = orig + step
        fp = f()
        x[idx] = orig - step
        fm = f()
        x[idx] = orig
        grad[idx] = (fp - fm) / (2 * step)
    return grad


def max_relative_error(analytic, numeric, floor=1e-12):
    """Largest absolute discrepancy, scaled by the largest gradient magnitude."""
    analytic = np.asarray(analytic, dtype=float)
    numeric = np.asarray(numeric, dtype=float)
    scale = max(np.abs(analytic).max(initial=0.0), np.abs(numeric).max(initial=0.0), floor)
    return float(np.abs(analytic - numeric).max(initial=0.0) / scale)
