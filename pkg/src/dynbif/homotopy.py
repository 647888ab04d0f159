"""Formal homotopy types: the one-point type, pointed spheres, and finite wedges of spheres."""
from __future__ import annotations

import re
from dataclasses import dataclass

from dynbif.errors import InvalidArgument

__all__ = ["HomotopyType", "ZERO", "sphere", "wedge", "factor_through_sphere", "Contradiction"]


@dataclass(frozen=True, order=True)
class HomotopyType:
    """Canonical form: sorted tuple of sphere dimensions. () is the one-point type."""

    spheres: tuple[int, ...] = ()

    def __post_init__(self):
        if any((not isinstance(p, int)) or p < 0 for p in self.spheres):
            raise InvalidArgument(f"sphere dimensions must be nonnegative ints: {self.spheres}")
        if list(self.spheres) != sorted(self.spheres):
            object.__setattr__(self, "spheres", tuple(sorted(self.spheres)))

    @property
    def is_zero(self) -> bool:
        return not self.spheres

    @property
    def is_sphere(self) -> bool:
        return len(self.spheres) == 1

    @property
    def dimension(self) -> int:
        """Sphere dimension; only defined for spheres."""
        if not self.is_sphere:
            raise InvalidArgument(f"{self} is not a sphere")
        return self.spheres[0]

    def __str__(self) -> str:
        if self.is_zero:
            return "0"
        return " v ".join(f"S^{p}" for p in self.spheres)

    @classmethod
    def parse(cls, text: str) -> "HomotopyType":
        text = text.strip()
        if text == "0":
            return ZERO
        parts = [s.strip() for s in text.split(" v ")]
        dims = []
        for part in parts:
            m = re.fullmatch(r"S\^(\d+)", part)
            if not m:
                raise InvalidArgument(f"cannot parse homotopy type {text!r}")
            dims.append(int(m.group(1)))
        return cls(tuple(dims))

    def __or__(self, other: "HomotopyType") -> "HomotopyType":
        return wedge(self, other)


ZERO = HomotopyType(())


def sphere(p: int) -> HomotopyType:
    return HomotopyType((int(p),))


def wedge(a: HomotopyType, b: HomotopyType) -> HomotopyType:
    # the one-point type is the unit, so concatenation of sphere lists is the whole rule
    return HomotopyType(tuple(sorted(a.spheres + b.spheres)))


class Contradiction(Exception):
    """Raised when no representable X satisfies X v known = total."""


def factor_through_sphere(total: HomotopyType, known: HomotopyType) -> HomotopyType:
    """Solve X v known = S^m. A wedge equal to a sphere has a trivial factor."""
    if not total.is_sphere:
        raise InvalidArgument(f"total must be a sphere, got {total}")
    if known.is_zero:
        return total
    if known == total:
        return ZERO
    raise Contradiction(f"no X with X v {known} = {total}")
