"""Random one-time password generation."""
from __future__ import annotations

import random
import string
from dataclasses import dataclass, field

from .errors import InvalidPolicy

CHARACTER_CLASSES: dict[str, str] = {
    "upper": string.ascii_uppercase,
    "lower": string.ascii_lowercase,
    "digit": string.digits,
    "special": "!#$%&*@^",
}

_SYSTEM_RANDOM = random.SystemRandom()


@dataclass(frozen=True)
class OtpPolicy:
    length: int = 7
    classes: frozenset = field(default_factory=lambda: frozenset(CHARACTER_CLASSES))
    require_one_per_class: bool = True

    def validate(self) -> None:
        if self.length < 6:
            raise InvalidPolicy(f"OTP length {self.length} is below the minimum of 6")
        if not self.classes:
            raise InvalidPolicy("at least one character class is required")
        unknown = set(self.classes) - set(CHARACTER_CLASSES)
        if unknown:
            raise InvalidPolicy(f"unknown character classes: {sorted(unknown)}")
        if self.require_one_per_class and self.length < len(self.classes):
            raise InvalidPolicy(
                f"length {self.length} cannot hold one of each of {len(self.classes)} classes"
            )

    @property
    def ordered_classes(self) -> list[str]:
        return [name for name in CHARACTER_CLASSES if name in self.classes]

    @property
    def alphabet(self) -> str:
        return "".join(CHARACTER_CLASSES[name] for name in self.ordered_classes)


def generate_otp(policy: OtpPolicy = OtpPolicy(), entropy: random.Random | None = None) -> str:
    """Draw a password uniformly from the strings admissible under ``policy``.

    ``entropy`` defaults to the OS CSPRNG; pass a seeded ``random.Random``
    only for reproducible simulations.
    """
    policy.validate()
    rng = entropy if entropy is not None else _SYSTEM_RANDOM
    alphabet = policy.alphabet
    class_sets = [frozenset(CHARACTER_CLASSES[name]) for name in policy.ordered_classes]
    while True:
        candidate = "".join(rng.choice(alphabet) for _ in range(policy.length))
        if not policy.require_one_per_class:
            return candidate
        chars = set(candidate)
        # rejection keeps the output uniform over the admissible set
        if all(chars & cls for cls in class_sets):
            return candidate
