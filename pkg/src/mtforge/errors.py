"""Exception types shared across the toolkit."""

from __future__ import annotations


class MtforgeError(Exception):
    """Data-level error: malformed input, missing score, bad model file.

    The CLI maps this to exit code 2; usage errors exit 1.
    """
