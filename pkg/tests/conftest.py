import pytest

from prunelab import autograd


@pytest.fixture(autouse=True)
def finite_checks():
    """Every forward op asserts finite outputs throughout the suite."""
    autograd.CHECK_FINITE = True
    yield
    autograd.CHECK_FINITE = False
