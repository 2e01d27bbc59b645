import torch
import torch.nn.functional as F


def init_params(shapes, generator):
    """Weight and bias drawn from the init seed; shapes = (x, weight, bias)."""
    _, w_shape, b_shape = shapes
    device = generator.device if hasattr(generator, "device") else "cpu"
    weight = torch.randn(*w_shape, generator=generator, device=device) * 0.1
    bias = torch.randn(*b_shape, generator=generator, device=device) * 0.1
    return [weight, bias]


def make_inputs(shapes, generator):
    x_shape = shapes[0]
    device = generator.device if hasattr(generator, "device") else "cpu"
    return [torch.randn(*x_shape, generator=generator, device=device)]


def forward(x, weight, bias):
    return F.relu(F.linear(x, weight, bias))
