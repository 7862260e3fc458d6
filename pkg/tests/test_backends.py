"""The compiled kernels and the numpy fallback must agree."""
import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from braymoore import _kernels_py as py
from braymoore import kernels

cy = pytest.importorskip("braymoore._kernels", reason="compiled extension not built")

atoms = st.integers(1, 12).flatmap(
    lambda k: st.tuples(
        st.lists(st.floats(-5, 5), min_size=k, max_size=k, unique=True),
        st.lists(st.floats(0.05, 1.0), min_size=k, max_size=k),
    )
).map(lambda lw: (np.sort(np.array(lw[0])), np.array(lw[1]) / np.sum(lw[1])))


@settings(max_examples=50, deadline=None)
@given(atoms, st.lists(st.tuples(st.floats(-8, 8), st.floats(1e-3, 5)), min_size=1, max_size=20))
def test_stieltjes(lw, pts):
    loc, w = lw
    z = np.array([complex(a, b) for a, b in pts])
    np.testing.assert_allclose(cy.stieltjes(loc, w, z), py.stieltjes(loc, w, z),
                               rtol=1e-13, atol=1e-15)


@settings(max_examples=50, deadline=None)
@given(atoms, st.floats(0.1, 4), st.lists(st.tuples(st.floats(-8, 8), st.floats(1e-3, 3)),
                                          min_size=1, max_size=10))
def test_subordinate(lw, sigma2, pts):
    loc, w = lw
    z = np.array([complex(a, b) for a, b in pts])
    m0 = py.stieltjes(loc, w, z + 1j * np.sqrt(sigma2))
    mc, rc, _ = cy.subordinate(loc, w, sigma2, z, m0, 1e-13, 20000, 1e-3)
    mp, rp, _ = py.subordinate(loc, w, sigma2, z, m0.copy(), 1e-13, 20000, 1e-3)
    assert np.all(rc <= 1e-13) and np.all(rp <= 1e-13)
    # both hit the unique fixed point; allow for conditioning near the real axis
    np.testing.assert_allclose(mc, mp, atol=1e-9)


@settings(max_examples=50, deadline=None)
@given(atoms, st.floats(0.1, 4), st.lists(st.floats(-9, 9), min_size=1, max_size=30))
def test_biane(lw, sigma2, xs):
    loc, w = lw
    x = np.array(xs)
    ac = cy.biane_invert(loc, w, sigma2, x)
    ap = py.biane_invert(loc, w, sigma2, x)
    np.testing.assert_allclose(ac, ap, atol=1e-9)
    sc, psc, dc = cy.biane_map(loc, w, sigma2, ap)
    sp, psp, dp = py.biane_map(loc, w, sigma2, ap)
    np.testing.assert_allclose(sc, sp, rtol=1e-12, atol=1e-14)
    np.testing.assert_allclose(psc, psp, rtol=1e-12, atol=1e-12)
    np.testing.assert_allclose(dc, dp, rtol=1e-10, atol=1e-12)
    np.testing.assert_allclose(psp, x, atol=1e-8)


def test_read_only_inputs_accepted():
    loc = np.array([-1.0, 1.0])
    w = np.array([0.5, 0.5])
    z = np.array([0.5 + 1j])
    for arr in (loc, w, z):
        arr.setflags(write=False)
    assert cy.stieltjes(loc, w, z).shape == (1,)


def test_selected_backend():
    assert kernels.BACKEND == "cython"


def test_env_forces_fallback():
    env = dict(os.environ, BM_PURE_PYTHON="1")
    code = ("from braymoore import kernels, spectral; "
            "fc = spectral.FreeConvolution(spectral.SpectralMeasure.point(), 1.0); "
            "print(kernels.BACKEND, round(spectral.log_potential(fc), 9))")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True,
                         check=True).stdout.split()
    assert out == ["python", "-0.5"]


def test_benchmark_script_runs(capsys):
    import runpy
    from pathlib import Path

    bench = runpy.run_path(str(Path(__file__).parents[1] / "benchmarks" / "bench_kernels.py"))
    assert bench["main"](["--atoms", "4", "--points", "8", "--repeat", "1"]) == 0
    out = capsys.readouterr().out
    assert "log_potential" in out and "speed-up" in out
