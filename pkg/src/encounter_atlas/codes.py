"""Dense integer coding of string identifiers.

Codes follow code-point order of the identifiers, so sorting by code is
the same as sorting by identifier.
"""

from __future__ import annotations

import numpy as np
import polars as pl


def build_vocab(*columns: pl.Series) -> pl.Series:
    parts = [c.cast(pl.Utf8).drop_nulls().unique() for c in columns]
    if not parts:
        return pl.Series("vocab", [], dtype=pl.Utf8)
    return pl.concat(parts).unique().sort().rename("vocab")


def encode(column: pl.Series, vocab: pl.Series) -> np.ndarray:
    """Map each identifier to its index in ``vocab`` (which must contain it)."""
    if len(column) == 0:
        return np.empty(0, dtype=np.int32)
    codes = column.cast(pl.Utf8).cast(pl.Enum(vocab)).to_physical()
    return codes.to_numpy().astype(np.int32, copy=False)


def vocab_list(vocab: pl.Series) -> list[str]:
    return vocab.to_list()


def recode(codes: np.ndarray, old_vocab: list[str], new_vocab: list[str]) -> np.ndarray:
    """Translate codes between two sorted vocabularies (old must be a subset)."""
    if len(codes) == 0:
        return codes.astype(np.int32)
    old = np.asarray(old_vocab, dtype=object)
    new = pl.Series(new_vocab, dtype=pl.Utf8)
    mapping = encode(pl.Series(old.tolist(), dtype=pl.Utf8), new)
    return mapping[codes]
