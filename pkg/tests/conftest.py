import numpy as np
import pytest

from berkdemand.basis import BasisSpec, DomainBox
from berkdemand.berkson import BerksonSpec
from berkdemand.dataio import Dataset, HouseholdRecord


@pytest.fixture
def unit_q_box():
    """Box with a unit-length quantity side (model density 1 <=> logL 0)."""
    return DomainBox(p_lo=0.1, p_hi=0.5, y_lo=10.0, y_hi=12.0, q_lo=6.0, q_hi=7.0)


@pytest.fixture
def affine_theta():
    """theta for rank = (q - q_lo) / (q_hi - q_lo) on any box."""

    def build(spec: BasisSpec, level: float = 0.0) -> np.ndarray:
        theta = np.zeros(spec.size)
        slope = 1.0 - 2.0 * level
        theta[spec.index_of(0, 0, 0)] = level + slope / 2.0
        theta[spec.index_of(0, 0, 1)] = slope / 2.0
        return theta

    return build


def make_dataset(log_q, log_p=None, log_y=None, region="all", instrument=None):
    n = len(log_q)
    log_p = log_p if log_p is not None else np.full(n, 0.3)
    log_y = log_y if log_y is not None else np.full(n, 11.0)
    recs = tuple(
        HouseholdRecord(
            log_q=float(log_q[i]),
            log_p=float(log_p[i]),
            log_y=float(log_y[i]),
            instrument=None if instrument is None else float(instrument[i]),
            region=region,
        )
        for i in range(n)
    )
    return Dataset(records=recs)
