import pytest

import property_checks


@pytest.mark.parametrize("name", list(property_checks.ALL))
def test_property_suite(name):
    print(property_checks.ALL[name]())
