import numpy as np

from char2text import tensor as T
from char2text.tensor import Tensor


def gradient_error(build, arrays: dict[str, np.ndarray]) -> float:
    """Largest relative error between analytic and central-difference gradients.

    ``build`` receives a dict of 64-bit leaves and returns a scalar loss.
    """
    leaves = {k: Tensor(np.asarray(v, dtype=np.float64), requires_grad=True) for k, v in arrays.items()}
    grads = T.grad(build(leaves), leaves)
    worst = 0.0
    for k, t in leaves.items():
        num = T.numerical_grad(lambda: build(leaves).item(), t.data)
        worst = max(worst, T.max_relative_error(grads[k], num))
    return worst
