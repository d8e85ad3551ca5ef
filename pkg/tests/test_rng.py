import itertools

import numpy as np

from popkit.rng import PatientStream, _reset_round, substream


def test_reset_matches_fresh_substream():
    for seed, it, block, r in [(0, 0, 0, 0), (5, 123, 4, 2), (2**63 + 7, 10**6, 7, 0)]:
        a = substream(seed, it, block, r).standard_normal(5)
        b = _reset_round(seed, it, block, r).standard_normal(5)
        assert np.array_equal(a, b)


def test_coordinates_map_to_distinct_streams():
    seen = set()
    for seed, it, block, r in itertools.product((0, 1), (0, 1, 2), range(8), (0, 1)):
        key = tuple(substream(seed, it, block, r).integers(0, 2**63, 2))
        assert key not in seen
        seen.add(key)


def test_patient_stream_chunking_invariant():
    full = PatientStream(9, 4, 1, 10)
    whole = [full.standard_normal(10), full.random(10)]
    for chunk in np.array_split(np.arange(10), 3):
        part = PatientStream(9, 4, 1, 10, chunk)
        assert np.array_equal(part.standard_normal(chunk.size), whole[0][chunk])
        assert np.array_equal(part.random(chunk.size), whole[1][chunk])
