"""Smoke test for the failop extension module.

Build and install the module first, e.g. `maturin develop -m crates/python/Cargo.toml`,
then run `python python/smoke_test.py` or `pytest python/`.
"""

import math

import failop


def test_kernel_and_gp():
    k = failop.RbfKernel(2.0, 2.0)
    assert math.isclose(k.eval([0.0, 0.0], [2.0, 0.0]), 2.0 * math.exp(-1.0), rel_tol=1e-12)

    gp = failop.GaussianProcess(failop.RbfKernel(1.0, 1.0), sigma_noise=0.1, budget=5)
    mean, std = gp.posterior([0.0])
    assert (mean, std) == (0.0, 1.0)
    for i in range(8):
        gp.update([0.3 * i], math.sin(0.3 * i))
    assert len(gp) == 5
    assert gp.inverse_residual() < 1e-6
    mean, std = gp.posterior([gp.xs[-1][0]])
    assert abs(mean - gp.ys[-1]) < 0.05 and std < 0.2
    assert gp.information_gain() > 0.0


def test_control_solve():
    # one barrier row requiring u >= 100 and nothing else
    sol = failop.solve_control([(1.0, 100.0)], (-500.0, 500.0))
    assert sol["status"] == "optimal"
    assert abs(sol["u_star"] - 100.0) < 1e-3
    assert sol["kkt_violations"] == []
    assert math.isclose(failop.envelope(-1.0, 0.05, 7), -(0.95**7))


def test_episode():
    out = failop.simulate(duration=2.0, seed=1)
    assert len(out["trace"]) == 100
    assert not out["crashed"]
    row = out["trace"][-1]
    assert row["step"] == 99 and row["status"] in ("optimal", "clipped")
    assert out["metrics"]["steps"] == 100

    det = failop.simulate(duration=1.0, ev=(110.0, 18.0), deterministic=True)
    assert all(r["eps1"] == 0.0 and r["eps2"] == 0.0 for r in det["trace"])
    assert "duration" in failop.default_scenario()


if __name__ == "__main__":
    test_kernel_and_gp()
    test_control_solve()
    test_episode()
    print("python smoke test passed")
