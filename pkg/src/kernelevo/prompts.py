"""Prompt registry: versioned prompt texts loaded from data files.

Defaults ship with the package; a run can point at an override directory
whose files shadow the defaults name-by-name.  Templates are filled with a
literal token replacement (never str.format) so prompt bodies may contain
braces of their own.
"""

from __future__ import annotations

import hashlib
from importlib import resources
from pathlib import Path

PROMPT_NAMES = (
    "translate_forward_system",
    "translate_forward_iteration",
    "translate_backward_system",
    "translate_backward_iteration",
    "optimize_system",
    "optimize_iteration",
    "verifier_tuning_system",
    "verifier_tuning_iteration",
    "verifier_parsing_definition",
    "verifier_compilation_system",
    "verifier_compilation_instruction",
    "verifier_memory_system",
    "verifier_memory_instruction",
    "verifier_numerics_system",
    "verifier_numerics_instruction",
    "baseline_judge_system",
    "baseline_judge_instruction",
    "hints",
)


class UnknownPrompt(KeyError):
    """Requested prompt name is not in the registry."""


def fill(template: str, **values: str) -> str:
    """Replace ``{key}`` tokens for the supplied keys only."""
    out = template
    for key, value in values.items():
        out = out.replace("{" + key + "}", str(value))
    return out


class PromptRegistry:
    def __init__(self, override_dir: str | Path | None = None):
        self.override_dir = Path(override_dir) if override_dir else None
        self._cache: dict[str, str] = {}

    def text(self, name: str) -> str:
        if name not in PROMPT_NAMES:
            raise UnknownPrompt(name)
        if name not in self._cache:
            self._cache[name] = self._load(name)
        return self._cache[name]

    def _load(self, name: str) -> str:
        if self.override_dir is not None:
            candidate = self.override_dir / f"{name}.txt"
            if candidate.is_file():
                return candidate.read_text()
        return (
            resources.files("kernelevo").joinpath(f"prompts/{name}.txt").read_text()
        )

    def hint_list(self) -> list[str]:
        """Curated one-line CUDA optimization recommendations."""
        return [line.strip() for line in self.text("hints").splitlines() if line.strip()]

    def version(self) -> str:
        """Content hash over every registered prompt, override-aware."""
        digest = hashlib.sha256()
        for name in PROMPT_NAMES:
            digest.update(name.encode())
            digest.update(b"\x00")
            digest.update(self.text(name).encode())
            digest.update(b"\x00")
        return digest.hexdigest()[:16]
