import pytest

from braymoore import suites


@pytest.mark.parametrize("name", list(suites.SUITES))
def test_suite_passes_and_detects_injection(name):
    good = suites.SUITES[name]()
    assert good.passed and good.checked > 0, good
    bad = suites.SUITES[name](inject=True)
    assert not bad.passed and bad.failures > 0


def test_run_suites_rejects_unknown():
    with pytest.raises(KeyError):
        suites.run_suites(["herglotz", "nope"])


def test_sizes_override():
    (res,) = suites.run_suites(["herglotz"], sizes={"herglotz": 7})
    assert res.checked == 7
