"""Central finite-difference verification of the analytic gradients.

Each check builds a seeded random configuration, evaluates a scalar probe
loss L = 0.5 * ||output - t||^2 (or the batch loss directly), and compares
every analytic gradient entry against (L(x+h) - L(x-h)) / 2h.
"""

from __future__ import annotations

import numpy as np

from .combiner import (
    CombinerParams,
    WhcParams,
    combiner_backward,
    combiner_forward,
    init_combiner,
    init_whc,
    whc_backward,
    whc_forward,
)
from .training import batch_loss


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-12) -> float:
    """Normwise relative error ||a - n||_inf / max(||a||_inf, ||n||_inf, floor).

    Measured per array: entrywise relative error is meaningless where the
    true gradient is tiny, because central differences carry an absolute
    roundoff noise of about machine_eps * |loss| / step regardless of the
    entry's magnitude.
    """
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    scale = max(np.abs(a).max(initial=0.0), np.abs(n).max(initial=0.0), floor)
    return float(np.abs(a - n).max(initial=0.0) / scale)


def fd_gradient(loss_fn, arrays: list[np.ndarray], step: float) -> list[np.ndarray]:
    """Central finite differences of ``loss_fn`` w.r.t. each array entry.

    The arrays are perturbed in place and restored, so they must be the very
    objects the loss closure reads.
    """
    grads = []
    for arr in arrays:
        grad = np.zeros_like(arr)
        for index in np.ndindex(arr.shape):
            original = arr[index]
            arr[index] = original + step
            up = loss_fn()
            arr[index] = original - step
            down = loss_fn()
            arr[index] = original
            grad[index] = (up - down) / (2.0 * step)
        grads.append(grad)
    return grads


def _mutable_combiner(params: CombinerParams) -> tuple[CombinerParams, list[np.ndarray]]:
    """A params object whose arrays can be perturbed in place for FD probing."""
    arrays = [np.array(arr, copy=True) for _, arr in params.named_arrays()]
    names = [name for name, _ in params.named_arrays()]
    rebuilt = CombinerParams.from_arrays(dict(zip(names, arrays)))
    live = [arr for _, arr in rebuilt.named_arrays()]
    return rebuilt, live


def check_combiner(seed: int, k: int, dim: int, hidden: int, step: float) -> dict[str, float]:
    """FD-check one combiner's parameter and input gradients; returns max rel errors."""
    rng = np.random.default_rng(seed)
    params, live = _mutable_combiner(init_combiner(seed, k, dim, hidden))
    inputs = [rng.standard_normal(dim) for _ in range(k)]
    target = rng.standard_normal(dim)

    def loss() -> float:
        out, _, _ = combiner_forward(params, inputs)
        return 0.5 * float(np.sum((out - target) ** 2))

    out, _, cache = combiner_forward(params, inputs)
    d_params, d_inputs = combiner_backward(params, cache, out - target)
    analytic = [arr for _, arr in d_params.named_arrays()] + d_inputs
    numeric = fd_gradient(loss, live + inputs, step)
    return {
        "params": max(relative_error(a, n) for a, n in zip(analytic[: len(live)], numeric[: len(live)])),
        "inputs": max(relative_error(a, n) for a, n in zip(analytic[len(live) :], numeric[len(live) :])),
    }


def check_whc(seed: int, dim: int, hidden: int, step: float) -> dict[str, float]:
    """FD-check the full hierarchy end to end."""
    rng = np.random.default_rng(seed)
    base = init_whc(seed, dim, hidden)
    arrays = [np.array(arr, copy=True) for _, arr in base.named_arrays()]
    names = [name for name, _ in base.named_arrays()]
    whc = WhcParams.from_arrays(dict(zip(names, arrays)))
    live = [arr for _, arr in whc.named_arrays()]
    streams = [rng.standard_normal(dim) for _ in range(4)]
    target = rng.standard_normal(dim)

    def loss() -> float:
        q, _ = whc_forward(whc, *streams)
        return 0.5 * float(np.sum((q - target) ** 2))

    q, trace = whc_forward(whc, *streams)
    grads, d_streams = whc_backward(whc, trace, q - target)
    analytic = [arr for _, arr in grads.named_arrays()] + list(d_streams)
    numeric = fd_gradient(loss, live + streams, step)
    return {
        "params": max(relative_error(a, n) for a, n in zip(analytic[: len(live)], numeric[: len(live)])),
        "inputs": max(relative_error(a, n) for a, n in zip(analytic[len(live) :], numeric[len(live) :])),
    }


def check_batch_loss(seed: int, batch: int, dim: int, tau: float, step: float) -> dict[str, float]:
    """FD-check the loss gradient with respect to every query vector."""
    rng = np.random.default_rng(seed)
    queries = rng.standard_normal((batch, dim))
    targets = rng.standard_normal((batch, dim))

    def loss() -> float:
        value, _ = batch_loss(queries, targets, tau)
        return value

    _, d_queries = batch_loss(queries, targets, tau)
    numeric = fd_gradient(loss, [queries], step)[0]
    return {"queries": relative_error(d_queries, numeric)}


def run_gradcheck(seed: int, dim: int, hidden: int, step: float, tol: float):
    """The CLI's gradient suite; returns (all_ok, [(name, max_rel_err), ...])."""
    results: list[tuple[str, float]] = []
    for k in (2, 3):
        errs = check_combiner(seed + k, k, dim, hidden, step)
        results.append((f"combiner_k{k}_params", errs["params"]))
        results.append((f"combiner_k{k}_inputs", errs["inputs"]))
    errs = check_whc(seed, dim, hidden, step)
    results.append(("whc_params", errs["params"]))
    results.append(("whc_inputs", errs["inputs"]))
    for tau in (1.0, 0.1):
        errs = check_batch_loss(seed, 4, dim, tau, step)
        results.append((f"batch_loss_tau{tau}", errs["queries"]))
    ok = all(err <= tol for _, err in results)
    return ok, results
