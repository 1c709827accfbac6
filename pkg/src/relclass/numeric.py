"""Dense float64 linear algebra, activations, and a finite-difference gradient oracle.

Matrices are 2-d ``numpy.ndarray`` of dtype float64 (row-major), vectors are
1-d arrays. All operations are pure and safe for concurrent use on read-only
inputs.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Mapping

import numpy as np

Params = dict[str, np.ndarray]


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible."""


class NonFiniteLossError(ArithmeticError):
    """Raised when a loss evaluation yields NaN or infinity."""


def as_matrix(a) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2:
        raise ShapeError(f"expected a matrix, got array of shape {a.shape}")
    return a


def as_vector(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ShapeError(f"expected a vector, got array of shape {x.shape}")
    return x


def matvec(a, x) -> np.ndarray:
    """Matrix-vector product; raises ShapeError naming both shapes on mismatch."""
    a = as_matrix(a)
    x = as_vector(x)
    if a.shape[1] != x.shape[0]:
        raise ShapeError(f"matvec: matrix {a.shape} incompatible with vector {x.shape}")
    return a @ x


def tanh_map(x) -> np.ndarray:
    """Elementwise tanh; output lies in (-1, 1) for finite input."""
    return np.tanh(np.asarray(x, dtype=np.float64))


def softmax(z) -> np.ndarray:
    """Numerically stable softmax (max-subtraction); entries sum to 1."""
    z = as_vector(z)
    if z.size == 0:
        raise ValueError("softmax of empty vector")
    shifted = z - np.max(z)
    e = np.exp(shifted)
    return e / e.sum()


def finite_diff_gradient(
    loss_fn: Callable[[Params], float],
    params: Mapping[str, np.ndarray],
    epsilon: float = 1e-5,
) -> Params:
    """Central-difference gradient of ``loss_fn`` w.r.t. every scalar in ``params``.

    ``loss_fn`` must be deterministic; it receives a params dict whose arrays
    may be perturbed copies. Raises NonFiniteLossError if a perturbed
    evaluation is not finite.
    """
    if epsilon <= 0:
        raise ValueError(f"epsilon must be positive, got {epsilon}")
    work = {name: np.array(a, dtype=np.float64) for name, a in params.items()}
    grads: Params = {}
    for name, arr in work.items():
        g = np.zeros_like(arr)
        flat = arr.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + epsilon
            up = loss_fn(work)
            flat[i] = orig - epsilon
            down = loss_fn(work)
            flat[i] = orig
            if not (np.isfinite(up) and np.isfinite(down)):
                raise NonFiniteLossError(
                    f"non-finite loss while perturbing {name}[{i}]: f+={up}, f-={down}"
                )
            gflat[i] = (up - down) / (2.0 * epsilon)
        grads[name] = g
    return grads


@dataclass
class GradCheckReport:
    max_relative_error: float
    worst_parameter: str
    per_parameter_errors: dict[str, float]

    def __str__(self) -> str:
        lines = [
            f"  {name}: {err:.3e}" for name, err in sorted(self.per_parameter_errors.items())
        ]
        head = (
            f"max relative error {self.max_relative_error:.3e}"
            f" (worst: {self.worst_parameter})"
        )
        return "\n".join([head] + lines)


def compare_gradients(
    analytic: Mapping[str, np.ndarray],
    numeric: Mapping[str, np.ndarray],
    floor: float = 1e-8,
) -> GradCheckReport:
    """Relative errors |ga - gn| / max(|ga| + |gn|, floor), per parameter and overall."""
    if set(analytic) != set(numeric):
        raise ValueError(
            f"parameter sets differ: {sorted(analytic)} vs {sorted(numeric)}"
        )
    per_param: dict[str, float] = {}
    for name in analytic:
        ga = np.asarray(analytic[name], dtype=np.float64)
        gn = np.asarray(numeric[name], dtype=np.float64)
        if ga.shape != gn.shape:
            raise ShapeError(f"gradient {name}: shapes {ga.shape} vs {gn.shape}")
        denom = np.maximum(np.abs(ga) + np.abs(gn), floor)
        err = np.abs(ga - gn) / denom
        per_param[name] = float(err.max()) if err.size else 0.0
    worst = max(per_param, key=per_param.get)
    return GradCheckReport(
        max_relative_error=per_param[worst],
        worst_parameter=worst,
        per_parameter_errors=per_param,
    )
