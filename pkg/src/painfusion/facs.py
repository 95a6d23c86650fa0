"""FACS action-unit codings and the PSPI pain score derived from them."""

from __future__ import annotations

from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Mapping

from .errors import MissingAu, OutOfRange

GRADED_AUS = ("au4", "au6", "au7", "au9", "au10")
REQUIRED_AUS = GRADED_AUS + ("au43",)
# Coded in the source data but not part of the score.
METADATA_AUS = ("au12", "au20", "au25", "au26", "au27")

PSPI_MAX = 16
_LETTERS = {"A": 1, "B": 2, "C": 3, "D": 4, "E": 5}


@dataclass(frozen=True)
class AuCoding:
    au4: int
    au6: int
    au7: int
    au9: int
    au10: int
    au43: int
    extra: Mapping[str, float] = field(default_factory=dict, compare=True)

    def __post_init__(self):
        object.__setattr__(self, "extra", MappingProxyType(dict(self.extra)))

    def __reduce__(self):
        # mappingproxy does not pickle; needed for process pools
        return (AuCoding, tuple(getattr(self, n) for n in REQUIRED_AUS) + (dict(self.extra),))

    def as_dict(self) -> dict:
        out = {name: getattr(self, name) for name in REQUIRED_AUS}
        out.update(self.extra)
        return out


def normalize_au_name(name: str) -> str:
    """``'AU4'``, ``'au04'`` and ``'4'`` all become ``'au4'``."""
    key = str(name).strip().lower()
    if key.startswith("au"):
        key = key[2:]
    try:
        return f"au{int(key)}"
    except ValueError:
        return str(name).strip().lower()


def parse_intensity(value) -> float:
    """Accept FACS letters A-E (mapped to 1-5) or a number."""
    if isinstance(value, str):
        text = value.strip().upper()
        if text in _LETTERS:
            return _LETTERS[text]
        return float(text)
    return value


def _as_int(name, value, upper):
    try:
        number = float(parse_intensity(value))
    except (TypeError, ValueError):
        raise OutOfRange(f"{name}: intensity {value!r} is not a number") from None
    if number != int(number) or not 0 <= number <= upper:
        raise OutOfRange(f"{name}: intensity {value!r} outside 0..{upper}")
    return int(number)


def validate_au_coding(raw: Mapping[str, object]) -> AuCoding:
    """Build an :class:`AuCoding` from an AU-name -> intensity mapping.

    Names are normalized (``AU4`` == ``au4``).  Graded AUs must be integers in
    0..5 (letters A-E allowed), AU43 must be 0 or 1.  AUs outside the PSPI set
    are kept as metadata.
    """
    values = {normalize_au_name(k): v for k, v in raw.items()}
    missing = [name for name in REQUIRED_AUS if name not in values]
    if missing:
        raise MissingAu(f"missing required action units: {', '.join(missing)}")
    graded = {name: _as_int(name, values[name], 5) for name in GRADED_AUS}
    au43 = _as_int("au43", values["au43"], 1)
    extra = {}
    for name, value in values.items():
        if name in REQUIRED_AUS:
            continue
        try:
            extra[name] = float(parse_intensity(value))
        except (TypeError, ValueError):
            raise OutOfRange(f"{name}: intensity {value!r} is not a number") from None
    return AuCoding(au43=au43, extra=extra, **graded)


def compute_pspi(coding: AuCoding) -> int:
    """Prkachin-Solomon pain intensity, an integer in 0..16."""
    return (
        coding.au4
        + max(coding.au6, coding.au7)
        + max(coding.au9, coding.au10)
        + coding.au43
    )
