import pytest

from checkoutkit.shapes import make_shape_catalog


@pytest.fixture(scope="session")
def shape_catalog():
    return make_shape_catalog()


@pytest.fixture(scope="session")
def pruned_catalog(shape_catalog):
    return shape_catalog.pruned()
