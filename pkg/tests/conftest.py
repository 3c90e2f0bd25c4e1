import os
from pathlib import Path

USPS_SKIP_REASON = (
    "USPS dataset files not available in this environment (no dataset network "
    "access; verified against the package mirror and public mirrors). Provide "
    "the classic 'label + 256 pixels per line' files as data/usps/zip.train[.gz] "
    "and data/usps/zip.test[.gz], or set PROTOSEL_USPS_TRAIN / PROTOSEL_USPS_TEST."
)


def usps_paths():
    """Locate the canonical USPS train/test files, or None when absent."""
    env = (os.environ.get("PROTOSEL_USPS_TRAIN"), os.environ.get("PROTOSEL_USPS_TEST"))
    if env[0] and env[1] and Path(env[0]).exists() and Path(env[1]).exists():
        return env
    root = Path(__file__).resolve().parent.parent
    for suffix in ("", ".gz"):
        tr = root / "data" / "usps" / f"zip.train{suffix}"
        te = root / "data" / "usps" / f"zip.test{suffix}"
        if tr.exists() and te.exists():
            return str(tr), str(te)
    return None
