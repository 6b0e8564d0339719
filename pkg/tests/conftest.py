import numpy as np
import pytest

from gaae.grad import Tape, Tensor, backward


def central_diff_grad(f, arrays, wrt: int, eps: float = 1e-5) -> np.ndarray:
    """Finite-difference gradient of scalar f(*arrays) w.r.t. arrays[wrt].

    Independent of the tape: plain forward evaluations only.
    """
    x = arrays[wrt]
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        fp = float(f(*arrays))
        flat[i] = orig - eps
        fm = float(f(*arrays))
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * eps)
    return g


def assert_grads_close(analytic: np.ndarray, numeric: np.ndarray,
                       rtol: float = 1e-4, floor: float = 1e-7) -> None:
    denom = np.maximum(np.abs(numeric), floor)
    rel = np.abs(analytic - numeric) / denom
    worst = float(rel.max()) if rel.size else 0.0
    assert worst < rtol, f"gradient mismatch, worst relative error {worst:.3e}"


def check_op_gradients(build_loss, tensor_args: list[np.ndarray],
                       rtol: float = 1e-4, eps: float = 1e-5) -> None:
    """Compare tape gradients of build_loss(*Tensors) against central differences.

    build_loss must return a scalar Tensor and must be a pure function of its
    inputs (no persistent state mutation) so the numeric probe is valid.
    """
    tensors = [Tensor(a.copy(), requires_grad=True) for a in tensor_args]
    with Tape() as tape:
        loss = build_loss(*tensors)
    backward(loss, tape=tape)

    def eval_loss(*arrays):
        consts = [Tensor(a) for a in arrays]
        return build_loss(*consts).data

    for i, t in enumerate(tensors):
        numeric = central_diff_grad(eval_loss, [a.copy() for a in tensor_args], i, eps)
        analytic = t.grad if t.grad is not None else np.zeros_like(t.data)
        assert_grads_close(analytic, numeric, rtol=rtol)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
