"""
The searchable architecture space: sampling, mutation, enumeration and size.

Genes may be pinned to a subset of their options for desk-scale subspaces.
"""
import itertools
import logging
import math
from typing import Any, Dict, Iterator, Optional, Sequence, Tuple

import numpy as np

from core.exceptions import InvalidOption
from models.genotype import GENE_NAMES, GENE_OPTIONS, FeatureSelection, Genotype, coerce_option, decode, encode
from nn.assembly import assemble, param_count

logger = logging.getLogger(__name__)


class SearchSpace:
    def __init__(self, pins: Optional[Dict[str, Sequence[Any]]] = None):
        pins = pins or {}
        unknown = set(pins) - set(GENE_NAMES)
        if unknown:
            gene = sorted(unknown)[0]
            raise InvalidOption(gene, pins[gene])
        self.options: Dict[str, Tuple[Any, ...]] = {}
        for gene in GENE_NAMES:
            if gene in pins:
                chosen = {coerce_option(gene, v) for v in pins[gene]}
                # keep the option-table order
                self.options[gene] = tuple(o for o in GENE_OPTIONS[gene] if o in chosen)
                if not self.options[gene]:
                    raise InvalidOption(gene, pins[gene])
            else:
                self.options[gene] = GENE_OPTIONS[gene]

    @classmethod
    def from_pins(cls, pins: Optional[Dict[str, Sequence[Any]]]) -> "SearchSpace":
        return cls(pins)

    @property
    def pinned(self) -> Tuple[str, ...]:
        return tuple(g for g in GENE_NAMES if len(self.options[g]) < len(GENE_OPTIONS[g]))

    def contains(self, g: Genotype) -> bool:
        for gene in GENE_NAMES:
            if gene == "fst" and g.fsm == FeatureSelection.NO_FILTER:
                continue
            if getattr(g, gene) not in self.options[gene]:
                return False
        return True

    def random_genotype(self, rng: np.random.Generator) -> Genotype:
        """Independent uniform choice per gene, canonicalized"""
        genes = {gene: options[int(rng.integers(len(options)))] for gene, options in self.options.items()}
        return Genotype(**genes)

    def mutate(self, g: Genotype, p_m: float, rng: np.random.Generator) -> Genotype:
        """Resample each gene with probability p_m to a different option"""
        if not 0.0 <= p_m <= 1.0:
            raise ValueError(f"p_m must lie in [0, 1], got {p_m}")
        genes = g.genes()
        for gene, options in self.options.items():
            hit = rng.random() < p_m
            others = [o for o in options if o != genes[gene]]
            if hit and others:
                genes[gene] = others[int(rng.integers(len(others)))]
        if genes["fst"] not in self.options["fst"]:
            # a threshold left inert under NoFilter may sit outside a pinned set
            genes["fst"] = self.options["fst"][int(rng.integers(len(self.options["fst"])))]
        return Genotype(**genes)

    def size(self, canonical: bool = False) -> int:
        """Product of option counts; canonical collapses the inert threshold under NoFilter"""
        raw = math.prod(len(options) for options in self.options.values())
        if not canonical:
            return raw
        fsm = self.options["fsm"]
        rest = raw // (len(fsm) * len(self.options["fst"]))
        no_filter = int(FeatureSelection.NO_FILTER in fsm)
        return rest * ((len(fsm) - no_filter) * len(self.options["fst"]) + no_filter)

    def enumerate(self) -> Iterator[Genotype]:
        """Every canonical genotype of the space, each exactly once"""
        seen = set()
        for combo in itertools.product(*self.options.values()):
            g = Genotype(**dict(zip(GENE_NAMES, combo)))
            if g.key not in seen:
                seen.add(g.key)
                yield g


DEFAULT_SPACE = SearchSpace()


def random_genotype(rng: np.random.Generator, space: Optional[SearchSpace] = None) -> Genotype:
    return (space or DEFAULT_SPACE).random_genotype(rng)


def mutate(g: Genotype, p_m: float, rng: np.random.Generator, space: Optional[SearchSpace] = None) -> Genotype:
    return (space or DEFAULT_SPACE).mutate(g, p_m, rng)


def space_size(space: Optional[SearchSpace] = None, canonical: bool = False) -> int:
    return (space or DEFAULT_SPACE).size(canonical)


__all__ = [
    "SearchSpace", "DEFAULT_SPACE", "random_genotype", "mutate", "space_size",
    "encode", "decode", "assemble", "param_count",
]
