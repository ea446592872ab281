from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from evorecon import genome as gn
from evorecon.errors import GenomeParseError

from conftest import small_genome


@st.composite
def genomes(draw):
    return gn.Genome(
        g1=draw(st.integers(1, 15)),
        g2=tuple(sorted(draw(st.sets(st.sampled_from(gn.KERNELS), min_size=1)))),
        g3=draw(st.integers(0, 40)),
        g4=draw(st.integers(0, 100)),
        g5=draw(st.integers(0, 100)),
        g6=draw(st.integers(0, 100)),
        g7=draw(st.integers(0, 15)),
        g8=draw(st.integers(0, 100)),
        g9=draw(st.integers(0, 15)),
        g10=draw(st.integers(0, 100)),
        g11=draw(st.sampled_from(gn.OPTIMIZERS)),
        g12=draw(st.integers(1, 10)),
    )


def test_random_genome_is_deterministic_per_seed():
    a = gn.random_genome(np.random.default_rng(0))
    b = gn.random_genome(np.random.default_rng(0))
    assert a == b


def test_random_genomes_are_valid_and_optimizers_uniform():
    rng = np.random.default_rng(7)
    samples = [gn.random_genome(rng) for _ in range(10_000)]
    assert all(gn.validate(g) == [] for g in samples)
    freq = Counter(g.g11 for g in samples)
    for opt in gn.OPTIMIZERS:
        assert abs(freq[opt] / 10_000 - 0.25) <= 0.02


def test_kernel_set_covers_all_fifteen_subsets():
    rng = np.random.default_rng(3)
    seen = {gn.random_genome(rng).g2 for _ in range(2000)}
    assert len(seen) == 15


@pytest.mark.parametrize("changes, message", [
    ({"g1": 16}, "g1 out of [1,15]"),
    ({"g1": 0}, "g1 out of [1,15]"),
    ({"g2": ()}, "kernel set empty"),
    ({"g12": 11}, "g12 out of [1,10]"),
])
def test_validate_reports_violations(changes, message):
    problems = gn.validate(small_genome(**changes))
    assert message in problems


def test_validate_lists_every_violated_field():
    problems = gn.validate(small_genome(g1=16, g2=(), g4=101, g11="LBFGS"))
    fields_hit = {p.split()[0] for p in problems}
    assert {"g1", "g4", "g11"} <= fields_hit
    assert "kernel set empty" in problems


def test_crossover_point_five():
    rng = np.random.default_rng(1)
    a, b = gn.random_genome(rng), gn.random_genome(rng)
    c1, c2 = gn.crossover(a, b, 5)
    assert c1.genes() == a.genes()[:5] + b.genes()[5:]
    assert c2.genes() == b.genes()[:5] + a.genes()[5:]


def test_crossover_of_identical_parents():
    g = gn.random_genome(np.random.default_rng(2))
    assert gn.crossover(g, g, 7) == (g, g)


@pytest.mark.parametrize("point", [0, 12, -1])
def test_crossover_rejects_bad_points(point):
    g = small_genome()
    with pytest.raises(ValueError):
        gn.crossover(g, g, point)


@settings(max_examples=200, deadline=None)
@given(genomes(), genomes(), st.integers(1, 11))
def test_crossover_closure_and_gene_conservation(a, b, point):
    c1, c2 = gn.crossover(a, b, point)
    assert gn.is_valid(c1) and gn.is_valid(c2)
    for i in range(gn.N_GENES):
        assert sorted(map(repr, (a.genes()[i], b.genes()[i]))) == \
            sorted(map(repr, (c1.genes()[i], c2.genes()[i])))


@settings(max_examples=200, deadline=None)
@given(genomes(), st.integers(0, 2**32 - 1))
def test_mutation_changes_at_most_one_gene_and_stays_valid(g, seed):
    m, idx = gn.mutate_with_index(g, np.random.default_rng(seed))
    diffs = [i for i in range(gn.N_GENES) if m.genes()[i] != g.genes()[i]]
    assert diffs in ([], [idx])
    assert gn.validate(m) == []


def test_mutation_index_frequencies():
    rng = np.random.default_rng(11)
    g = small_genome()
    counts = Counter(gn.mutate_with_index(g, rng)[1] for _ in range(10_000))
    for i in range(gn.N_GENES):
        assert abs(counts[i] / 10_000 - 1 / 12) <= 0.01


def test_text_round_trip_for_random_genomes():
    rng = np.random.default_rng(5)
    for _ in range(1000):
        g = gn.random_genome(rng)
        assert gn.from_text(gn.to_text(g)) == g


@settings(max_examples=200, deadline=None)
@given(genomes())
def test_text_round_trip_property(g):
    assert gn.from_text(gn.to_text(g)) == g


def test_text_format_is_human_readable():
    g = small_genome(g2=(3, 5, 9), g7=gn.kernels_to_mask((3, 7)))
    text = gn.to_text(g)
    assert "g2 = 3,5,9" in text.splitlines()
    assert "g7 = 1010" in text.splitlines()


def test_parse_rejects_g12_out_of_range():
    text = gn.to_text(small_genome()).replace("g12 = 4", "g12 = 11")
    with pytest.raises(GenomeParseError) as info:
        gn.from_text(text)
    assert info.value.field == "g12"


def test_parse_names_missing_field():
    text = "\n".join(ln for ln in gn.to_text(small_genome()).splitlines()
                     if not ln.startswith("g6 "))
    with pytest.raises(GenomeParseError) as info:
        gn.from_text(text)
    assert info.value.field == "g6"


@pytest.mark.parametrize("bad", ["g1 == 3", "g1 = three", "g13 = 1", "g2 = 3,4", "g7 = 10x1"])
def test_parse_rejects_malformed_lines(bad):
    lines = gn.to_text(small_genome()).splitlines()
    key = bad.split("=")[0].strip()
    lines = [ln for ln in lines if ln.split("=")[0].strip() != key] + [bad]
    with pytest.raises(GenomeParseError):
        gn.from_text("\n".join(lines))


def test_parse_rejects_duplicate_keys():
    text = gn.to_text(small_genome()) + "g1 = 2\n"
    with pytest.raises(GenomeParseError) as info:
        gn.from_text(text)
    assert info.value.field == "g1"


def test_masks_intersect_with_kernel_set():
    g = small_genome(g2=(3, 7), g7=0b1111, g9=0b0110)
    assert g.eliminated_kernels() == (3, 7)
    assert g.separated_kernels() == (7,)
