import pytest

pytest_plugins = [
   "tests.mocks.mocks_output",
]
