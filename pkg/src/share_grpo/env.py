"""GridSum questions and semantically consistent transformations.

A question shows a small grid of digits and asks for the digit-sum of one row,
modulo 10. Variants of a question are produced two ways:

* offline: the prompt is swapped for another paraphrase from a fixed bank;
* online: one structural transform (row permutation or transpose) is applied
  to the grid, and a tag is appended so the prompt still points at the same
  cells.

Every transform preserves the answer. ``read_answer`` recomputes it from the
grid, the target row and the tags, and tests use it instead of trusting the
stored ``answer`` field.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass, field, replace
from importlib import resources
from typing import Optional, Sequence

import numpy as np

ROW_PERMUTATION = "row_permutation"
TRANSPOSE = "transpose"


@dataclass(frozen=True)
class Question:
    grid: tuple[tuple[int, ...], ...]
    template_id: int
    target_row: int
    tau_tags: tuple[str, ...]
    answer: int

    @property
    def grid_dim(self) -> int:
        return len(self.grid)

    def as_array(self) -> np.ndarray:
        return np.array(self.grid, dtype=np.int64)

    def to_dict(self) -> dict:
        return {
            "grid": [list(r) for r in self.grid],
            "template_id": self.template_id,
            "target_row": self.target_row,
            "tau_tags": list(self.tau_tags),
            "answer": self.answer,
        }


@dataclass(frozen=True)
class TransformSpec:
    kind: str
    parameters: Optional[tuple[int, ...]]
    tag: str

    def __post_init__(self):
        if self.kind == ROW_PERMUTATION:
            perm = self.parameters
            if perm is None or sorted(perm) != list(range(len(perm))):
                raise ValueError(f"row_permutation needs a permutation vector, got {perm!r}")
        elif self.kind == TRANSPOSE:
            if self.parameters is not None:
                raise ValueError("transpose takes no parameters")
        else:
            raise ValueError(f"unknown transform kind {self.kind!r}")


@dataclass(frozen=True)
class Provenance:
    """What was done to produce one variant: paraphrase index and optional transform tag."""

    template_id: int
    transform: Optional[str] = None


@dataclass(frozen=True)
class VariantSet:
    seed_id: int
    variants: tuple[Question, ...]
    provenance: tuple[Provenance, ...] = field(default=())

    @property
    def m(self) -> int:
        return len(self.variants)

    @property
    def answer(self) -> int:
        return self.variants[0].answer


@functools.lru_cache(maxsize=None)
def paraphrase_bank() -> tuple[str, ...]:
    text = resources.files("share_grpo").joinpath("resources/paraphrases.txt").read_text()
    return tuple(line.strip() for line in text.splitlines() if line.strip())


# Tag order fixes the layout of the tau block in the policy features.
REGISTRY_TAGS = ("row_rotate", "row_reverse", "transpose")


def transform_registry(grid_dim: int = 3) -> tuple[TransformSpec, ...]:
    """The compiled-in transforms, instantiated for a ``grid_dim`` x ``grid_dim`` grid.

    ``row_rotate`` sends row r to row (r - 1) mod D; for D=3 that is the
    permutation 0->2, 1->0, 2->1. ``row_reverse`` flips the row order.
    """
    d = grid_dim
    return (
        TransformSpec(ROW_PERMUTATION, tuple((r - 1) % d for r in range(d)), "row_rotate"),
        TransformSpec(ROW_PERMUTATION, tuple(d - 1 - r for r in range(d)), "row_reverse"),
        TransformSpec(TRANSPOSE, None, "transpose"),
    )


def read_answer(q: Question) -> int:
    """Recompute the answer from the grid, honouring the transpose tag.

    After a transpose the prompt carries the ``transpose`` tag, which tells the
    reader that ``target_row`` now indexes a column.
    """
    g = q.grid
    if "transpose" in q.tau_tags:
        cells = [g[r][q.target_row] for r in range(len(g))]
    else:
        cells = g[q.target_row]
    return sum(cells) % 10


def generate_question(rng_seed: int, grid_dim: int = 3, *, rng=None) -> Question:
    """Draw a seed question with uniform digits and a uniform target row.

    ``rng`` overrides the generator built from ``rng_seed``; it only needs an
    ``integers(low, high, size=None)`` method.
    """
    if grid_dim < 2:
        raise ValueError(f"grid_dim must be >= 2, got {grid_dim}")
    if rng is None:
        rng = np.random.default_rng(rng_seed)
    cells = np.asarray(rng.integers(0, 10, size=(grid_dim, grid_dim))).reshape(grid_dim, grid_dim)
    grid = tuple(tuple(int(v) for v in row) for row in cells)
    target_row = int(rng.integers(0, grid_dim))
    answer = sum(grid[target_row]) % 10
    return Question(grid=grid, template_id=0, target_row=target_row, tau_tags=(), answer=answer)


def expand_offline(q: Question, m: int, seed_id: int = 0) -> VariantSet:
    """Rewrite the prompt into ``m`` paraphrases. Variant 1 keeps the seed's template."""
    bank = paraphrase_bank()
    if m < 1:
        raise ValueError(f"m must be >= 1, got {m}")
    if m > len(bank):
        raise ValueError(f"m={m} exceeds paraphrase bank size {len(bank)}")
    ids = [q.template_id] + [t for t in range(len(bank)) if t != q.template_id][: m - 1]
    variants = tuple(replace(q, template_id=t) for t in ids)
    return VariantSet(seed_id=seed_id, variants=variants, provenance=tuple(Provenance(t) for t in ids))


def apply_transform(spec: TransformSpec, q: Question) -> Question:
    """Apply one structural transform to the grid plus its prompt repair."""
    if q.tau_tags:
        raise ValueError("transforms are never composed; question already carries tags")
    g = q.as_array()
    if spec.kind == ROW_PERMUTATION:
        perm = spec.parameters
        if len(perm) != q.grid_dim:
            raise ValueError(f"permutation of length {len(perm)} on a {q.grid_dim}-row grid")
        out = np.empty_like(g)
        out[list(perm)] = g
        target_row = perm[q.target_row]
    else:
        out = g.T
        # Row r of the old grid is column r of the new one; the tag says so.
        target_row = q.target_row
    grid = tuple(tuple(int(v) for v in row) for row in out)
    return replace(q, grid=grid, target_row=target_row, tau_tags=q.tau_tags + (spec.tag,))


def expand_online(
    vs: VariantSet,
    p: float,
    rng_seed: int,
    registry: Optional[Sequence[TransformSpec]] = None,
) -> VariantSet:
    """With probability ``p`` apply one uniformly chosen transform to each variant."""
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"p must lie in [0, 1], got {p}")
    if p == 0.0:
        return vs
    if registry is None:
        registry = transform_registry(vs.variants[0].grid_dim)
    if not registry:
        raise ValueError("empty transform registry with p > 0")
    rng = np.random.default_rng(rng_seed)
    variants, prov = [], []
    provenance = vs.provenance or tuple(Provenance(v.template_id) for v in vs.variants)
    for q, pv in zip(vs.variants, provenance):
        # both draws happen for every variant so the stream layout is fixed
        hit = rng.random() < p
        pick = int(rng.integers(0, len(registry)))
        if hit:
            spec = registry[pick]
            q = apply_transform(spec, q)
            pv = replace(pv, transform=spec.tag)
        variants.append(q)
        prov.append(pv)
    return VariantSet(seed_id=vs.seed_id, variants=tuple(variants), provenance=tuple(prov))


def render(q: Question) -> str:
    """Human-readable prompt text, for listings and debugging."""
    text = paraphrase_bank()[q.template_id].format(row=q.target_row + 1)
    if "transpose" in q.tau_tags:
        text += " (The grid was transposed: read the row number as a column.)"
    elif q.tau_tags:
        text += " (The rows were reordered; the row number already accounts for it.)"
    grid = "\n".join(" ".join(str(v) for v in row) for row in q.grid)
    return f"{grid}\n{text}"
