import numpy as np
import pytest


def finite_difference_gradient(log_f, position, rel_step=1e-6):
    """Central-difference gradient with a step scaled to each coordinate."""
    position = np.asarray(position, dtype=float)
    grad = np.zeros_like(position)
    for d in range(position.size):
        step = rel_step * max(1.0, abs(position[d]))
        e = np.zeros_like(position)
        e[d] = step
        grad[d] = (log_f(position + e) - log_f(position - e)) / (2.0 * step)
    return grad


def assert_gradient_matches(target, points, rel_tol=1e-5):
    """Check analytic against finite-difference gradients at many points."""
    for x in points:
        analytic = target.grad_log_f(x)
        numeric = finite_difference_gradient(target.log_f, x)
        scale = np.maximum(1e-6, np.abs(numeric))
        rel = np.abs(analytic - numeric) / scale
        assert rel.max() < rel_tol, f"gradient mismatch at {x}: {analytic} vs {numeric}"


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
