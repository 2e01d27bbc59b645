"""Reference-implementation loading and deterministic input generation.

A reference file defines three callables:

    init_params(shapes, generator)  -> parameter tensors (init seed)
    make_inputs(shapes, generator)  -> data tensors (input seed)
    forward(*inputs, *params)       -> output tensor(s)   (or ``backward``)

Tensors are generated from per-role torch Generators, so a case's inputs are
a pure function of (shapes, init_seed, input_seed) across runner restarts.
"""

from __future__ import annotations

import torch


class ReferenceError(RuntimeError):
    """The reference source is missing a required callable or failed to exec."""


class Reference:
    def __init__(self, source: str, direction: str):
        namespace: dict = {}
        try:
            exec(compile(source, "<reference>", "exec"), namespace)
        except Exception as exc:
            raise ReferenceError(f"reference source failed to execute: {exc}") from exc
        for name in ("init_params", "make_inputs", direction):
            if name not in namespace or not callable(namespace[name]):
                raise ReferenceError(f"reference source must define {name}()")
        self.direction = direction
        self.init_params = namespace["init_params"]
        self.make_inputs = namespace["make_inputs"]
        self.entry = namespace[direction]

    def build_case(
        self, shapes, init_seed: int, input_seed: int, device: str = "cpu"
    ) -> list[torch.Tensor]:
        """All call arguments for one case: inputs first, then parameters."""
        shapes = [tuple(s) for s in shapes]
        init_gen = torch.Generator(device=device).manual_seed(int(init_seed))
        input_gen = torch.Generator(device=device).manual_seed(int(input_seed))
        inputs = list(self.make_inputs(shapes, input_gen))
        params = list(self.init_params(shapes, init_gen))
        return inputs + params

    def __call__(self, *args):
        return self.entry(*args)


def output_tensors(result) -> list[torch.Tensor]:
    """Normalize a reference or candidate result to a list of tensors."""
    if isinstance(result, torch.Tensor):
        return [result]
    if isinstance(result, (tuple, list)):
        tensors = []
        for item in result:
            if not isinstance(item, torch.Tensor):
                raise TypeError(f"output element is not a tensor: {type(item)}")
            tensors.append(item)
        return tensors
    raise TypeError(f"unsupported output type: {type(result)}")


def compare_outputs(candidate_out, reference_out, atol: float, rtol: float) -> tuple[bool, float]:
    """Elementwise |a - b| <= atol + rtol*|b| across all output tensors.

    Returns (ok, max_abs_diff); NaN in the candidate side always fails.
    """
    cand = output_tensors(candidate_out)
    ref = output_tensors(reference_out)
    if len(cand) != len(ref):
        return False, float("inf")
    ok = True
    max_abs_diff = 0.0
    for a, b in zip(cand, ref):
        a = a.detach().to(torch.float64).cpu()
        b = b.detach().to(torch.float64).cpu()
        if a.shape != b.shape:
            return False, float("inf")
        if a.numel() == 0:
            continue
        diff = (a - b).abs()
        max_abs_diff = max(max_abs_diff, float(diff.max()))
        if bool(torch.isnan(a).any()):
            ok = False
            continue
        if not bool((diff <= atol + rtol * b.abs()).all()):
            ok = False
    return ok, max_abs_diff
