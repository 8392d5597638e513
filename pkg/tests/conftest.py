"""Shared pytest configuration.

The acceptance tests exercise full training runs and exhaustive oracles, so
they run after the unit suites: a broken primitive should fail fast in its
own module's tests first.
"""


def pytest_collection_modifyitems(config, items):
    items.sort(key=lambda item: item.fspath.basename == "test_acceptance.py")
