"""Twelve-gene architecture genotype.

Genes, in order::

    g1   half the number of conv layers (L = 2 * g1), 1..15
    g2   kernel set, nonempty subset of {3, 5, 7, 9}
    g3   pooling request (clamped when decoded against an image size)
    g4   percent of pooling slots that average-pool
    g5   concatenation skips, percent of g1
    g6   residual (summation) skips, percent of g1
    g7   4-bit mask of kernels to eliminate, bit order (3, 5, 7, 9)
    g8   percent of g1 layers that receive elimination
    g9   4-bit mask of kernels to separate into (n,1)+(1,n)
    g10  percent of g1 layers that receive separation
    g11  optimizer, one of ADAM / SGD / RMSPROP / ADAGRAD
    g12  channels in the first layer, 1..10

g7 and g9 are stored independently of g2 and are intersected with it at
decode time, so every combination of gene values is a legal genome and
single-point crossover never needs repair.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, fields

import numpy as np

from .errors import GenomeParseError

KERNELS = (3, 5, 7, 9)
OPTIMIZERS = ("ADAM", "SGD", "RMSPROP", "ADAGRAD")
GENE_NAMES = ("g1", "g2", "g3", "g4", "g5", "g6", "g7", "g8", "g9", "g10", "g11", "g12")
N_GENES = len(GENE_NAMES)

MAX_HALF_LAYERS = 15
MAX_FIRST_CHANNELS = 10
# g3 is unbounded above in principle; the decoder clamps it to <= g1 <= 15,
# so sampling beyond 15 only adds duplicate phenotypes.
MAX_POOL_REQUEST = 15

PERCENT_GENES = ("g4", "g5", "g6", "g8", "g10")


@dataclass(frozen=True)
class Genome:
    g1: int
    g2: tuple[int, ...]
    g3: int
    g4: int
    g5: int
    g6: int
    g7: int
    g8: int
    g9: int
    g10: int
    g11: str
    g12: int

    @property
    def half_layers(self) -> int:
        return self.g1

    @property
    def kernel_set(self) -> tuple[int, ...]:
        return self.g2

    @property
    def optimizer(self) -> str:
        return self.g11

    @property
    def first_channels(self) -> int:
        return self.g12

    def eliminated_kernels(self) -> tuple[int, ...]:
        """Kernels named by g7 that are actually present in g2."""
        return tuple(k for k in mask_to_kernels(self.g7) if k in self.g2)

    def separated_kernels(self) -> tuple[int, ...]:
        return tuple(k for k in mask_to_kernels(self.g9) if k in self.g2)

    def genes(self) -> tuple:
        return tuple(getattr(self, name) for name in GENE_NAMES)

    @classmethod
    def from_genes(cls, genes) -> Genome:
        return cls(*genes)

    def replace(self, **changes) -> Genome:
        values = {f.name: getattr(self, f.name) for f in fields(self)}
        values.update(changes)
        return Genome(**values)

    def digest(self) -> str:
        return hashlib.blake2b(to_text(self).encode("utf-8"), digest_size=8).hexdigest()


def mask_to_kernels(mask: int) -> tuple[int, ...]:
    return tuple(k for bit, k in enumerate(KERNELS) if (mask >> bit) & 1)


def kernels_to_mask(kernels) -> int:
    mask = 0
    for k in kernels:
        mask |= 1 << KERNELS.index(k)
    return mask


def _mask_to_bits(mask: int) -> str:
    return "".join("1" if (mask >> bit) & 1 else "0" for bit in range(len(KERNELS)))


# -- sampling ---------------------------------------------------------------

def _sample_gene(name: str, rng: np.random.Generator):
    if name == "g1":
        return int(rng.integers(1, MAX_HALF_LAYERS + 1))
    if name == "g2":
        return mask_to_kernels(int(rng.integers(1, 16)))
    if name == "g3":
        return int(rng.integers(0, MAX_POOL_REQUEST + 1))
    if name in PERCENT_GENES:
        return int(rng.integers(0, 101))
    if name in ("g7", "g9"):
        return int(rng.integers(0, 16))
    if name == "g11":
        return OPTIMIZERS[int(rng.integers(len(OPTIMIZERS)))]
    if name == "g12":
        return int(rng.integers(1, MAX_FIRST_CHANNELS + 1))
    raise KeyError(name)


def random_genome(rng: np.random.Generator) -> Genome:
    """Draw every gene independently and uniformly from its domain."""
    return Genome(*(_sample_gene(name, rng) for name in GENE_NAMES))


def validate(g: Genome) -> list[str]:
    """Return the list of violated constraints; an empty list means valid."""
    problems = []

    def is_int(v):
        return isinstance(v, (int, np.integer)) and not isinstance(v, bool)

    if not is_int(g.g1) or not 1 <= g.g1 <= MAX_HALF_LAYERS:
        problems.append(f"g1 out of [1,{MAX_HALF_LAYERS}]")
    if not isinstance(g.g2, tuple) or len(g.g2) == 0:
        problems.append("kernel set empty")
    elif any(k not in KERNELS for k in g.g2) or len(set(g.g2)) != len(g.g2):
        problems.append("g2 kernels must be distinct members of {3,5,7,9}")
    elif tuple(sorted(g.g2)) != g.g2:
        problems.append("g2 kernels must be sorted")
    if not is_int(g.g3) or g.g3 < 0:
        problems.append("g3 must be a nonnegative integer")
    for name in PERCENT_GENES:
        v = getattr(g, name)
        if not is_int(v) or not 0 <= v <= 100:
            problems.append(f"{name} out of [0,100]")
    for name in ("g7", "g9"):
        v = getattr(g, name)
        if not is_int(v) or not 0 <= v <= 15:
            problems.append(f"{name} is not a 4-bit mask")
    if g.g11 not in OPTIMIZERS:
        problems.append(f"g11 not one of {', '.join(OPTIMIZERS)}")
    if not is_int(g.g12) or not 1 <= g.g12 <= MAX_FIRST_CHANNELS:
        problems.append(f"g12 out of [1,{MAX_FIRST_CHANNELS}]")
    return problems


def is_valid(g: Genome) -> bool:
    return not validate(g)


# -- variation --------------------------------------------------------------

def crossover(a: Genome, b: Genome, point: int) -> tuple[Genome, Genome]:
    """Single-point crossover after gene ``point`` (1..11)."""
    if not 1 <= point <= N_GENES - 1:
        raise ValueError(f"crossover point must be in [1, {N_GENES - 1}], got {point}")
    ga, gb = a.genes(), b.genes()
    return (
        Genome.from_genes(ga[:point] + gb[point:]),
        Genome.from_genes(gb[:point] + ga[point:]),
    )


def mutate_with_index(g: Genome, rng: np.random.Generator) -> tuple[Genome, int]:
    index = int(rng.integers(N_GENES))
    name = GENE_NAMES[index]
    return g.replace(**{name: _sample_gene(name, rng)}), index


def mutate(g: Genome, rng: np.random.Generator) -> Genome:
    """Resample one uniformly chosen gene; all other genes are kept."""
    return mutate_with_index(g, rng)[0]


# -- text format --------------------------------------------------------------

def to_text(g: Genome) -> str:
    lines = []
    for name in GENE_NAMES:
        v = getattr(g, name)
        if name == "g2":
            v = ",".join(str(k) for k in v)
        elif name in ("g7", "g9"):
            v = _mask_to_bits(v)
        lines.append(f"{name} = {v}")
    return "\n".join(lines) + "\n"


def _parse_int(name, raw):
    try:
        return int(raw)
    except ValueError:
        raise GenomeParseError(name, f"expected an integer, got {raw!r}") from None


def _parse_value(name, raw):
    if name == "g2":
        parts = [p.strip() for p in raw.split(",") if p.strip()]
        if not parts:
            raise GenomeParseError(name, "kernel set empty")
        kernels = tuple(sorted(_parse_int(name, p) for p in parts))
        if any(k not in KERNELS for k in kernels) or len(set(kernels)) != len(kernels):
            raise GenomeParseError(name, f"kernels must be distinct members of {KERNELS}")
        return kernels
    if name in ("g7", "g9"):
        if len(raw) != 4 or set(raw) - {"0", "1"}:
            raise GenomeParseError(name, f"expected a 4-character bit string, got {raw!r}")
        return sum(1 << i for i, ch in enumerate(raw) if ch == "1")
    if name == "g11":
        value = raw.upper()
        if value not in OPTIMIZERS:
            raise GenomeParseError(name, f"unknown optimizer {raw!r}")
        return value
    return _parse_int(name, raw)


def from_text(text: str) -> Genome:
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise GenomeParseError(f"line {lineno}", f"expected 'key = value', got {line!r}")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in GENE_NAMES:
            raise GenomeParseError(key, "unknown gene")
        if key in values:
            raise GenomeParseError(key, "duplicate gene")
        values[key] = _parse_value(key, raw)
    for name in GENE_NAMES:
        if name not in values:
            raise GenomeParseError(name, "missing")
    g = Genome(**values)
    problems = validate(g)
    if problems:
        field = problems[0].split()[0]
        raise GenomeParseError(field, "; ".join(problems))
    return g
