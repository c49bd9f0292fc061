"""Fetch the ElecNormNew stream.

The scikit-multiflow source distributions up to 0.4.1 ship the normalised
Elec2 stream as ``skmultiflow/data/datasets/elec.csv``: 45312 rows in
temporal order, six features (period, nswprice, nswdemand, vicprice,
vicdemand, transfer) and a 0/1 ``target`` column (1 = UP).  The date and
day-of-week columns of the MOA release are not included.

Usage::

    python -m ramol.datasets data/elec.csv
"""

from __future__ import annotations

import hashlib
import io
import os
import sys
import tarfile
import urllib.request

ELEC_SDIST_URL = (
    "https://files.pythonhosted.org/packages/57/53/1c90bc05e4fbf2cb768ed140d7a9bce301d671cce7bdc15b82522ede1b3e/scikit-multiflow-0.4.1.tar.gz"
)
ELEC_MEMBER = "scikit-multiflow-0.4.1/src/skmultiflow/data/datasets/elec.csv"
ELEC_SHA256 = "ebdfe5480ae25a43a7d054286135e3a9484697a2850d5158a333b1578c28bb97"
ELEC_ROWS = 45312


def fetch_elec(dest: str, url: str = ELEC_SDIST_URL) -> str:
    """Download the sdist, extract ``elec.csv`` to ``dest`` and return ``dest``."""
    with urllib.request.urlopen(url, timeout=120) as resp:
        blob = resp.read()
    with tarfile.open(fileobj=io.BytesIO(blob), mode="r:gz") as tar:
        member = tar.extractfile(ELEC_MEMBER)
        if member is None:
            raise FileNotFoundError(f"{ELEC_MEMBER} not found in {url}")
        data = member.read()
    digest = hashlib.sha256(data).hexdigest()
    if digest != ELEC_SHA256:
        raise ValueError(f"unexpected elec.csv content (sha256 {digest})")
    os.makedirs(os.path.dirname(os.path.abspath(dest)), exist_ok=True)
    with open(dest, "wb") as fh:
        fh.write(data)
    return dest


if __name__ == "__main__":
    target = sys.argv[1] if len(sys.argv) > 1 else os.path.join("data", "elec.csv")
    print(fetch_elec(target))
