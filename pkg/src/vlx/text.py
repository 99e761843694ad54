"""Answer-string normalization shared by the extractors and the mock embedding."""
from __future__ import annotations

import re

_PUNCT = re.compile(r"[^\w\s]", re.UNICODE)


def normalize_answer(raw: str | None) -> list[str]:
    """Lowercase, drop punctuation, split on whitespace.

    >>> normalize_answer("Yes.")
    ['yes']
    """
    if not raw:
        return []
    return _PUNCT.sub("", raw.lower()).split()


def normalize_request_text(text: str | None) -> str | None:
    """Key form used for exact-match fixture lookup: case and spacing folded."""
    if text is None:
        return None
    return " ".join(text.lower().split())
