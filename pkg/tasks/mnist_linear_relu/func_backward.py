import torch
import torch.nn.functional as F


def init_params(shapes, generator):
    """Weight and bias drawn from the init seed; shapes = (grad_out, x, weight, bias)."""
    _, _, w_shape, b_shape = shapes
    device = generator.device if hasattr(generator, "device") else "cpu"
    weight = torch.randn(*w_shape, generator=generator, device=device) * 0.1
    bias = torch.randn(*b_shape, generator=generator, device=device) * 0.1
    return [weight, bias]


def make_inputs(shapes, generator):
    grad_shape, x_shape = shapes[0], shapes[1]
    device = generator.device if hasattr(generator, "device") else "cpu"
    grad_out = torch.randn(*grad_shape, generator=generator, device=device)
    x = torch.randn(*x_shape, generator=generator, device=device)
    return [grad_out, x]


def backward(grad_out, x, weight, bias):
    """Gradients of relu(linear(x, w, b)) w.r.t. x, weight, and bias."""
    x = x.detach().requires_grad_(True)
    weight = weight.detach().requires_grad_(True)
    bias = bias.detach().requires_grad_(True)
    out = F.relu(F.linear(x, weight, bias))
    grads = torch.autograd.grad(out, (x, weight, bias), grad_outputs=grad_out)
    return [g.detach() for g in grads]
