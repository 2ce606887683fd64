"""Finite-difference oracle shared by the gradient tests.

Central differences with eps=1e-5 on float64 give roughly 1e-10 absolute
accuracy for O(1) losses, comfortably below the 1e-5 relative tolerance the
tests assert.
"""

import numpy as np

EPS = 1e-5
RTOL = 1e-5


def numeric_grad(f, arr, eps=EPS):
    """Central-difference gradient of scalar ``f()`` w.r.t. ``arr`` in place.

    ``f`` must re-evaluate the loss from scratch, reading the current
    contents of ``arr``; entries are perturbed one at a time and restored.
    """
    out = np.zeros_like(arr)
    flat = arr.ravel()
    out_flat = out.ravel()
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        f_plus = float(f())
        flat[i] = orig - eps
        f_minus = float(f())
        flat[i] = orig
        out_flat[i] = (f_plus - f_minus) / (2.0 * eps)
    return out


def kink_margin(root):
    """Smallest |pre-activation| feeding any leaky_relu in the graph.

    Central differences straddle the kink when this is below ~eps * scale;
    config-sampling loops reject graphs with a small margin.
    """
    seen, stack, margin = set(), [root], np.inf
    while stack:
        node = stack.pop()
        if id(node) in seen:
            continue
        seen.add(id(node))
        if node.op == "leaky_relu":
            margin = min(margin, float(np.abs(node.inputs[0].value).min()))
        stack.extend(node.inputs)
    return margin


def max_rel_err(analytic, numeric, floor=1e-3):
    """Worst-case elementwise relative error, with an absolute floor.

    The floor keeps near-zero gradient entries from inflating the ratio;
    below it the comparison is effectively absolute at floor * RTOL.
    """
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float((np.abs(a - n) / denom).max())
