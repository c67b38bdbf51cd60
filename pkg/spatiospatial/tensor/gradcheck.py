"""
Central finite-difference verification of analytic gradients.
"""
import logging
from dataclasses import dataclass, field

import numpy as np

from spatiospatial.tensor.core import GradTape, Tensor, backward

logger = logging.getLogger(__name__)


@dataclass
class GradCheckReport:
    max_rel_error: float
    passed: bool
    tol: float
    checked: int
    worst: tuple = None
    errors: list = field(default_factory=list)


def relative_error(analytic, numeric, floor=1e-6):
    """|a - n| / max(|a|, |n|, floor); the floor keeps vanishing gradients from dominating."""
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def _evaluate(function, *args):
    out = function(*args)
    value = out.data if isinstance(out, Tensor) else np.asarray(out)
    if value.size != 1:
        raise ValueError(f"grad_check needs a scalar-valued function, got shape {value.shape}")
    return float(value.reshape(()))


def _analytic(function, tensor):
    tensor.requires_grad = True
    tensor.zero_grad()
    with GradTape():
        out = function(tensor)
    backward(out)
    return tensor.grad.copy()


def _numeric(function, tensor, flat_index, step):
    flat = tensor.data.reshape(-1)
    original = flat[flat_index]
    flat[flat_index] = original + step
    f_plus = _evaluate(function, tensor)
    flat[flat_index] = original - step
    f_minus = _evaluate(function, tensor)
    flat[flat_index] = original
    return (f_plus - f_minus) / (2.0 * step)


def grad_check(function, input, step=1e-6, tol=1e-6, indices=None, floor=1e-6):
    """
    Compare analytic gradients with central differences.

    ``input`` is perturbed in place (and restored), so a parameter tensor of a
    model can be checked with a function that ignores its argument and runs
    the model.
    Args:
        function (callable): Tensor -> scalar Tensor.
        input (Tensor): Point of evaluation; should be 64-bit.
        step (float): Finite-difference half-width.
        tol (float): Pass threshold on the maximum relative error.
        indices (iterable[int]): Flat indices to check; all when None.
        floor (float): Denominator floor of the relative error.
    Returns:
        GradCheckReport
    """
    analytic = _analytic(function, input).reshape(-1)
    if indices is None:
        indices = range(input.size)
    report = GradCheckReport(max_rel_error=0.0, passed=True, tol=tol, checked=0)
    for idx in indices:
        numeric = _numeric(function, input, idx, step)
        err = relative_error(analytic[idx], numeric, floor)
        report.errors.append(err)
        report.checked += 1
        if err > report.max_rel_error:
            report.max_rel_error = err
            report.worst = (input.name, int(idx), float(analytic[idx]), numeric)
    report.passed = report.max_rel_error <= tol
    logger.debug("grad_check: %d entries, max rel err %.3e", report.checked, report.max_rel_error)
    return report


def grad_check_parameters(loss_fn, named_params, samples, rng, step=1e-6, tol=1e-4, floor=1e-6):
    """
    Finite-difference check of ``samples`` randomly chosen scalar parameters.

    Parameters are drawn with probability proportional to their size.
    Args:
        loss_fn (callable): () -> scalar Tensor, evaluated on the current
            parameter values.
        named_params (dict[str, Tensor]): Parameters to sample from.
        samples (int): Number of scalar entries to check.
        rng (np.random.Generator): Sampling source.
    Returns:
        GradCheckReport
    """
    names = list(named_params)
    sizes = np.array([named_params[n].size for n in names], dtype=np.float64)
    for p in named_params.values():
        p.zero_grad()
    with GradTape():
        loss = loss_fn()
    backward(loss)
    grads = {n: named_params[n].grad.reshape(-1).copy() for n in names}

    report = GradCheckReport(max_rel_error=0.0, passed=True, tol=tol, checked=0)
    picks = rng.choice(len(names), size=samples, p=sizes / sizes.sum())
    for which in picks:
        name = names[which]
        tensor = named_params[name]
        idx = int(rng.integers(tensor.size))
        numeric = _numeric(lambda _: loss_fn(), tensor, idx, step)
        err = relative_error(grads[name][idx], numeric, floor)
        report.errors.append(err)
        report.checked += 1
        if err > report.max_rel_error:
            report.max_rel_error = err
            report.worst = (name, idx, float(grads[name][idx]), numeric)
    report.passed = report.max_rel_error <= tol
    return report
