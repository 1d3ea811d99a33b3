import numpy as np
import torch


def central_difference_grad(fn, x: torch.Tensor, h: float = 1e-6) -> torch.Tensor:
    """Numerical gradient of a scalar function w.r.t. every element of x."""
    grad = torch.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.numel()):
        orig = flat[i].item()
        flat[i] = orig + h
        up = float(fn(x))
        flat[i] = orig - h
        down = float(fn(x))
        flat[i] = orig
        gflat[i] = (up - down) / (2 * h)
    return grad


def max_rel_error(numeric: torch.Tensor, analytic: torch.Tensor) -> float:
    """Max absolute difference normalized by the largest gradient magnitude."""
    scale = max(float(analytic.abs().max()), float(numeric.abs().max()), 1e-12)
    return float((numeric - analytic).abs().max()) / scale


def autograd_gradient(fn, x: torch.Tensor) -> torch.Tensor:
    x = x.detach().clone().requires_grad_(True)
    fn(x).backward()
    return x.grad.detach().clone()


def random_prob_map(rng: np.random.Generator, shape, lo: float = 0.05, hi: float = 0.95):
    return torch.from_numpy(rng.uniform(lo, hi, size=shape)).double()


def random_binary_map(rng: np.random.Generator, shape):
    return torch.from_numpy(rng.integers(0, 2, size=shape).astype(np.float64))
