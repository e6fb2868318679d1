import numpy as np

from .tensor import Tensor, backward


def relative_error(a, b) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    den = np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-8)
    return np.abs(a - b) / den


def numerical_grad(fn, inputs: list[Tensor], eps: float = 1e-6) -> list[np.ndarray]:
    """Central differences of scalar ``fn(*inputs)`` w.r.t. each input."""
    grads = []
    for t in inputs:
        g = np.zeros_like(t.data)
        flat = t.data.reshape(-1)
        gflat = g.reshape(-1)
        for k in range(flat.size):
            orig = flat[k]
            flat[k] = orig + eps
            hi = float(fn(*inputs).data)
            flat[k] = orig - eps
            lo = float(fn(*inputs).data)
            flat[k] = orig
            gflat[k] = (hi - lo) / (2.0 * eps)
        grads.append(g)
    return grads


def analytic_grad(fn, inputs: list[Tensor]) -> list[np.ndarray]:
    for t in inputs:
        t.requires_grad = True
        t.grad = None
    loss = fn(*inputs)
    backward(loss)
    return [t.grad if t.grad is not None else np.zeros_like(t.data) for t in inputs]


def gradcheck(fn, inputs, eps: float = 1e-6, per_input: bool = False):
    """Largest elementwise relative error between reverse-mode and central differences.

    ``fn`` maps the input tensors to a scalar tensor.  With ``per_input`` the
    worst error is returned for each input separately.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    inputs = [t if isinstance(t, Tensor) else Tensor(t) for t in inputs]
    ana = analytic_grad(fn, inputs)
    num = numerical_grad(fn, inputs, eps)
    errs = [float(relative_error(a, n).max()) if a.size else 0.0 for a, n in zip(ana, num)]
    if per_input:
        return errs
    return max(errs) if errs else 0.0
