import numpy as np
import numexpr as ne


def _scalars(dtype, **values):
    # 0-d arrays keep numexpr from upcasting float32 operands to float64
    return {k: np.asarray(v, dtype=dtype) for k, v in values.items()}


def adam_moments(m, v, g, beta1, beta2):
    """
    In-place exponential moving averages of the gradient and its square.
    Args:
        m, v (np.ndarray): First/second moment buffers, updated in place.
        g (np.ndarray): Gradient.
        beta1, beta2 (float): Decay rates.
    """
    local_dict = {"m": m, "v": v, "g": g,
                  **_scalars(m.dtype, b1=beta1, c1=1.0 - beta1, b2=beta2, c2=1.0 - beta2)}
    ne.evaluate("b1 * m + c1 * g", local_dict=local_dict, out=m)
    ne.evaluate("b2 * v + c2 * g * g", local_dict=local_dict, out=v)


def adam_apply(p, m, v, lr, eps, bias_correction1, bias_correction2, weight_decay=0.0):
    """
    In-place parameter update p <- p - lr * (m_hat / (sqrt(v_hat) + eps) + wd * p).
    Args:
        p (np.ndarray): Parameter data, updated in place.
        m, v (np.ndarray): Moment buffers.
        lr, eps (float): Step size and denominator guard.
        bias_correction1, bias_correction2 (float): 1 - beta^t terms.
        weight_decay (float): L2 coefficient applied to the current value.
    """
    local_dict = {"p": p, "m": m, "v": v,
                  **_scalars(p.dtype, lr=lr, eps=eps, wd=weight_decay,
                                      bc1=bias_correction1, bc2=bias_correction2)}
    ne.evaluate("p - lr * ((m / bc1) / (sqrt(v / bc2) + eps) + wd * p)", local_dict=local_dict, out=p)


def clip_rescale(x, lo, hi):
    """
    Clip to [lo, hi] then map that interval affinely onto [0, 1].
    Args:
        x (np.ndarray): Intensities.
        lo, hi (float): Interval bounds, lo < hi.
    Returns:
        np.ndarray: Rescaled array (dtype of x).
    """
    local_dict = {"x": x, **_scalars(x.dtype, lo=lo, hi=hi)}
    return ne.evaluate("(where(x < lo, lo, where(x > hi, hi, x)) - lo) / (hi - lo)",
                       local_dict=local_dict)


def evaluate_field(expr, Z, Y, X, local_dict=None):
    """
    Evaluate a scalar field over a 3D grid from a string expression.
    Args:
        expr (str): Expression in Z, Y, X, e.g. '((Z-8)/3)**2 + ((X-8)/4)**2 <= 1'.
        Z, Y, X (np.ndarray): Meshgrid arrays.
        local_dict (dict): Additional variables.
    Returns:
        np.ndarray: Evaluated field.
    Example:
        mask = evaluate_field('(Z-c0)**2 + (Y-c1)**2 + (X-c2)**2 <= r**2', Z, Y, X,
                              {'c0': 8, 'c1': 8, 'c2': 8, 'r': 3})
    """
    if local_dict is None:
        local_dict = {}
    local_dict = {**local_dict, "Z": Z, "Y": Y, "X": X}
    return ne.evaluate(expr, local_dict=local_dict)
