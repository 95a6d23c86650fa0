import itertools

import pytest
from hypothesis import given, strategies as st

from painfusion.errors import MissingAu, OutOfRange
from painfusion.facs import AuCoding, compute_pspi, validate_au_coding

ZERO = {"au4": 0, "au6": 0, "au7": 0, "au9": 0, "au10": 0, "au43": 0}


def brute_pspi(a4, a6, a7, a9, a10, a43):
    # written out without max() on purpose
    eyes = a6 if a6 >= a7 else a7
    nose = a9 if a9 >= a10 else a10
    return a4 + eyes + nose + a43


def test_all_zero_coding_is_valid():
    coding = validate_au_coding(ZERO)
    assert coding == AuCoding(0, 0, 0, 0, 0, 0)
    assert compute_pspi(coding) == 0


def test_valid_coding_keeps_values():
    coding = validate_au_coding({"au4": 3, "au6": 1, "au7": 0, "au9": 0, "au10": 2, "au43": 1})
    assert (coding.au4, coding.au6, coding.au7, coding.au9, coding.au10, coding.au43) == (3, 1, 0, 0, 2, 1)


@pytest.mark.parametrize("bad", [{"au4": 6}, {"au6": -1}, {"au43": 2}, {"au10": 2.5}, {"au7": "F"}])
def test_out_of_range(bad):
    with pytest.raises(OutOfRange):
        validate_au_coding({**ZERO, **bad})


def test_missing_au():
    raw = dict(ZERO)
    del raw["au43"]
    with pytest.raises(MissingAu):
        validate_au_coding(raw)


def test_letters_and_names_normalized():
    coding = validate_au_coding({"AU4": "C", "AU06": "a", "au7": 0, "9": 0, "AU10": "E", "AU43": 1, "AU12": "B"})
    assert coding.au4 == 3 and coding.au6 == 1 and coding.au10 == 5
    assert coding.extra == {"au12": 2.0}
    assert compute_pspi(coding) == 3 + 1 + 5 + 1


def test_metadata_does_not_change_score():
    base = validate_au_coding({"au4": 2, "au6": 1, "au7": 3, "au9": 0, "au10": 0, "au43": 0})
    extra = validate_au_coding({"au4": 2, "au6": 1, "au7": 3, "au9": 0, "au10": 0, "au43": 0, "au25": 5, "au26": 4})
    assert compute_pspi(base) == compute_pspi(extra) == 5


def test_maximum_is_sixteen():
    coding = validate_au_coding({"au4": 5, "au6": 5, "au7": 5, "au9": 5, "au10": 5, "au43": 1})
    assert compute_pspi(coding) == 16


def test_direct_example():
    coding = validate_au_coding({"au4": 4, "au6": 3, "au7": 5, "au9": 0, "au10": 2, "au43": 1})
    assert compute_pspi(coding) == 12


def test_exhaustive_against_brute_force():
    seen = set()
    for values in itertools.product(range(6), range(6), range(6), range(6), range(6), range(2)):
        score = compute_pspi(AuCoding(*values))
        assert score == brute_pspi(*values)
        seen.add(score)
    assert seen == set(range(17))


intensity = st.integers(0, 5)


@given(intensity, intensity, intensity, intensity, intensity, st.integers(0, 1),
       st.sampled_from(["au4", "au6", "au7", "au9", "au10", "au43"]))
def test_monotone_in_each_au(a4, a6, a7, a9, a10, a43, which):
    raw = dict(au4=a4, au6=a6, au7=a7, au9=a9, au10=a10, au43=a43)
    upper = 1 if which == "au43" else 5
    if raw[which] == upper:
        return
    bumped = {**raw, which: raw[which] + 1}
    assert compute_pspi(validate_au_coding(bumped)) >= compute_pspi(validate_au_coding(raw))
