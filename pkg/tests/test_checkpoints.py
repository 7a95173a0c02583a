import math
import os

import numpy as np
import pytest

from voxevo.checkpoints import (
    MAGIC,
    CheckpointIntegrityError,
    atomic_write_bytes,
    load_individual,
    load_population,
    save_individual,
    save_population,
)
from voxevo.control import GLOBAL_KIND, MODULAR_KIND, init_controller
from voxevo.evolution import KIND_BODY, KIND_FRESH, Individual
from voxevo.morphology import random_morphology


def make_individual(ident=3, kind=KIND_BODY, controller_kind=MODULAR_KIND,
                    fitness=1.25, parent=1, parent_fitness=0.5, age=2):
    return Individual(
        morphology=random_morphology(np.random.default_rng(ident)),
        controller=init_controller(controller_kind, np.random.default_rng(ident)),
        age=age,
        id=ident,
        parent_id=parent,
        mutation_kind=kind,
        parent_fitness_at_birth=parent_fitness,
        fitness=fitness,
    )


def assert_same_individual(a, b):
    assert a.id == b.id
    assert a.parent_id == b.parent_id
    assert a.age == b.age
    assert a.mutation_kind == b.mutation_kind
    assert a.morphology == b.morphology
    assert a.controller.kind == b.controller.kind
    assert np.array_equal(a.controller.params.to_flat(), b.controller.params.to_flat())
    for x, y in ((a.fitness, b.fitness),
                 (a.parent_fitness_at_birth, b.parent_fitness_at_birth)):
        assert x == y or (x is None and y is None)


class TestIndividualRoundTrip:
    def test_modular(self, tmp_path):
        path = str(tmp_path / "ind.ckpt")
        ind = make_individual()
        save_individual(path, ind)
        assert_same_individual(load_individual(path), ind)

    def test_global(self, tmp_path):
        path = str(tmp_path / "ind.ckpt")
        ind = make_individual(controller_kind=GLOBAL_KIND)
        save_individual(path, ind)
        loaded = load_individual(path)
        assert loaded.controller.kind == GLOBAL_KIND
        assert_same_individual(loaded, ind)

    def test_none_fields(self, tmp_path):
        path = str(tmp_path / "ind.ckpt")
        ind = make_individual(kind=KIND_FRESH, fitness=None, parent=None,
                              parent_fitness=None, age=0)
        save_individual(path, ind)
        loaded = load_individual(path)
        assert loaded.fitness is None
        assert loaded.parent_id is None
        assert loaded.parent_fitness_at_birth is None

    def test_fitness_bits_preserved(self, tmp_path):
        path = str(tmp_path / "ind.ckpt")
        ind = make_individual(fitness=0.1 + 0.2)
        save_individual(path, ind)
        assert load_individual(path).fitness == 0.1 + 0.2


class TestPopulationRoundTrip:
    def test_round_trip(self, tmp_path):
        path = str(tmp_path / "pop.ckpt")
        population = [make_individual(i) for i in range(5)]
        save_population(path, population)
        loaded = load_population(path)
        assert len(loaded) == 5
        for a, b in zip(loaded, population):
            assert_same_individual(a, b)

    def test_empty_population(self, tmp_path):
        path = str(tmp_path / "pop.ckpt")
        save_population(path, [])
        assert load_population(path) == []

    def test_kind_confusion_rejected(self, tmp_path):
        ind_path = str(tmp_path / "ind.ckpt")
        save_individual(ind_path, make_individual())
        with pytest.raises(CheckpointIntegrityError):
            load_population(ind_path)
        pop_path = str(tmp_path / "pop.ckpt")
        save_population(pop_path, [make_individual()])
        with pytest.raises(CheckpointIntegrityError):
            load_individual(pop_path)


class TestIntegrity:
    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.ckpt"
        path.write_bytes(b"NOPE" + b"\x00" * 64)
        with pytest.raises(CheckpointIntegrityError):
            load_individual(str(path))

    def test_truncated_file(self, tmp_path):
        path = str(tmp_path / "ind.ckpt")
        save_individual(path, make_individual())
        blob = open(path, "rb").read()
        truncated = tmp_path / "trunc.ckpt"
        truncated.write_bytes(blob[: len(blob) // 2])
        with pytest.raises(CheckpointIntegrityError):
            load_individual(str(truncated))

    def test_trailing_garbage(self, tmp_path):
        path = str(tmp_path / "ind.ckpt")
        save_individual(path, make_individual())
        blob = open(path, "rb").read()
        padded = tmp_path / "padded.ckpt"
        padded.write_bytes(blob + b"\x00\x01")
        with pytest.raises(CheckpointIntegrityError):
            load_individual(str(padded))

    def test_corrupt_morphology_digit(self, tmp_path):
        path = str(tmp_path / "ind.ckpt")
        save_individual(path, make_individual())
        blob = bytearray(open(path, "rb").read())
        assert blob.startswith(MAGIC)
        # morphology digits sit right after header + fixed record
        offset = 7 + 37
        blob[offset] = 9
        corrupt = tmp_path / "corrupt.ckpt"
        corrupt.write_bytes(bytes(blob))
        with pytest.raises(CheckpointIntegrityError):
            load_individual(str(corrupt))

    def test_non_finite_parameter_rejected(self, tmp_path):
        path = str(tmp_path / "ind.ckpt")
        save_individual(path, make_individual())
        blob = bytearray(open(path, "rb").read())
        nan = np.float64(math.nan).tobytes()
        blob[-8:] = nan
        corrupt = tmp_path / "corrupt.ckpt"
        corrupt.write_bytes(bytes(blob))
        with pytest.raises(CheckpointIntegrityError):
            load_individual(str(corrupt))

    def test_missing_file(self, tmp_path):
        with pytest.raises(CheckpointIntegrityError):
            load_individual(str(tmp_path / "nope.ckpt"))


class TestAtomicWrite:
    def test_no_partial_left_behind(self, tmp_path):
        path = tmp_path / "blob.bin"
        atomic_write_bytes(str(path), b"payload")
        assert path.read_bytes() == b"payload"
        assert os.listdir(tmp_path) == ["blob.bin"]

    def test_overwrites_existing(self, tmp_path):
        path = tmp_path / "blob.bin"
        path.write_bytes(b"old")
        atomic_write_bytes(str(path), b"new")
        assert path.read_bytes() == b"new"
