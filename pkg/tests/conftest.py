import pytest

from psnym.credentials import get_scheme


@pytest.fixture(params=["mock", "ecdsa"])
def scheme(request):
    return get_scheme(request.param)
