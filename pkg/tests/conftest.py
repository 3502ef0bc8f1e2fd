"""Shared test configuration: locating the real ML-100k raw file.

Several acceptance checks need the genuine MovieLens-100k dataset, which this
package never downloads on its own. They look for it here; when it is absent
they fail with instructions rather than silently passing.
"""

import os

ML100K_ENV = "SEQBENCH_ML100K"

_REPO_ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
_CANDIDATES = (
    os.environ.get(ML100K_ENV, ""),
    os.path.join(_REPO_ROOT, "data", "ml-100k", "u.data"),
    os.path.join(os.path.expanduser("~"), "data", "ml-100k", "u.data"),
)

ML100K_HELP = (
    "real ML-100k data not found: run scripts/fetch_ml100k.py on a networked "
    f"machine, then place u.data at data/ml-100k/u.data or set {ML100K_ENV} "
    "to its path"
)


def ml100k_path():
    for candidate in _CANDIDATES:
        if candidate and os.path.exists(candidate):
            return candidate
    return None
