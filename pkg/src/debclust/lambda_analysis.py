"""Behaviour of the single-anchor loss as a function of the smoothing exponent.

With ``P = exp(sim_pos / tau)`` and ``B = 1 + sum_j exp(sim_neg_j / tau)``
the anchor loss is ``L(lam) = log(P + B**lam) - log(P)``.  Because ``B > 1``
for any finite similarities, both derivatives in ``lam`` are strictly
positive: raising the exponent always increases the pressure from the
negatives, and does so convexly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Iterable, Sequence


@dataclass(frozen=True)
class LambdaScene:
    sim_pos: float
    sim_negs: tuple[float, ...]
    tau: float = 0.5
    lam: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "sim_negs", tuple(float(s) for s in self.sim_negs))
        if len(self.sim_negs) < 2 or len(self.sim_negs) % 2:
            raise ValueError(f"need an even number >= 2 of negatives, got {len(self.sim_negs)}")
        for s in (self.sim_pos, *self.sim_negs):
            if not -1.0 <= s <= 1.0:
                raise ValueError(f"similarity {s} outside [-1, 1]")
        if self.tau <= 0:
            raise ValueError(f"tau must be > 0, got {self.tau}")

    @property
    def batch_size(self) -> int:
        return len(self.sim_negs) // 2 + 1

    def with_lam(self, lam: float) -> "LambdaScene":
        return replace(self, lam=lam)


def positive_term(s: LambdaScene) -> float:
    return math.exp(s.sim_pos / s.tau)


def negative_base(s: LambdaScene) -> float:
    """``1 + sum exp(sim_neg / tau)``; always > 1."""
    return 1.0 + math.fsum(math.exp(x / s.tau) for x in s.sim_negs)


def lambda_loss(s: LambdaScene) -> float:
    p = positive_term(s)
    return math.log(p + negative_base(s) ** s.lam) - math.log(p)


def lambda_grad(s: LambdaScene) -> float:
    p, b = positive_term(s), negative_base(s)
    bl = b ** s.lam
    return bl * math.log(b) / (p + bl)


def lambda_hess(s: LambdaScene) -> float:
    p, b = positive_term(s), negative_base(s)
    bl = b ** s.lam
    return p * bl * math.log(b) ** 2 / (p + bl) ** 2


def limit_orthogonal_negatives(n: int, sim_pos: float, tau: float, lam: float) -> float:
    """Second derivative when every negative is orthogonal to the anchor (``B = 2N - 1``)."""
    if n < 2:
        raise ValueError(f"batch size must be >= 2, got {n}")
    p = math.exp(sim_pos / tau)
    b = 2 * n - 1
    bl = b ** lam
    return p * bl * math.log(b) ** 2 / (p + bl) ** 2


def eta(s: LambdaScene) -> float:
    """Negative base evaluated with the positive pair at similarity 1.

    The negatives do not enter the positive term, so this equals
    :func:`negative_base`; it exceeds ``2N - 1`` whenever all negatives have
    positive similarity to the anchor.
    """
    return negative_base(replace(s, sim_pos=1.0))


def sweep(s: LambdaScene, lams: Iterable[float]) -> list[tuple[float, float, float, float]]:
    """Rows ``(lam, L, L', L'')`` over ``lams``."""
    rows = []
    for lam in lams:
        t = s.with_lam(float(lam))
        rows.append((float(lam), lambda_loss(t), lambda_grad(t), lambda_hess(t)))
    return rows


DEFAULT_LAMBDAS: Sequence[float] = (0.0, 0.5, 1.0, 2.0, 3.0, 5.0)
