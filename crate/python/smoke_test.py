"""Smoke test for the fsplast_py extension module.

Build the module first, then run this script from the repository root:

    cargo build -p fsplast-py
    python3 python/smoke_test.py
"""

import pathlib
import shutil
import sys
import tempfile

ROOT = pathlib.Path(__file__).resolve().parent.parent


def load_module():
    for profile in ("debug", "release"):
        lib = ROOT / "target" / profile / "libfsplast_py.so"
        if lib.exists():
            tmp = pathlib.Path(tempfile.mkdtemp(prefix="fsplast_py_"))
            shutil.copy(lib, tmp / "fsplast_py.so")
            sys.path.insert(0, str(tmp))
            import fsplast_py

            return fsplast_py
    sys.exit("libfsplast_py.so not found; run `cargo build -p fsplast-py` first")


def main():
    fp = load_module()

    params = dict(
        g=26.0, k_bulk=56.0, y0=0.3, h_iso=2.0, h_kin=5.0,
        r_sat=0.2, gamma=10.0, m_kin_inf=0.1, ow_m=2.0, delta=0.5,
    )

    model = fp.Model.phenomenological("AF", params)
    assert model.framework == "AF"
    assert model.get_param("y0") == 0.3

    lam, sigma = model.simulate(amplitude=0.02, cycles=1, steps_per_branch=8)
    assert len(lam) == len(sigma) == 1 + 8 * 3
    assert sigma[0] == 0.0
    assert max(abs(s) for s in sigma) > 0.3, "no plastic response reached"

    # serialization round trip
    clone = fp.Model.from_json(model.to_json())
    sigma2 = clone.simulate_path(lam)
    assert max(abs(a - b) for a, b in zip(sigma, sigma2)) < 1e-14

    # a couple of optimizer steps on self-generated data must not increase
    # the loss
    noisy = fp.Model.phenomenological("AF", {**params, "h_kin": 7.5})
    history = noisy.fit(lam, sigma, epochs=10, lr=0.02)
    assert len(history) == 10
    assert history[-1] < history[0], f"loss went up: {history[0]} -> {history[-1]}"

    # network model construction and scoring helpers
    net = fp.Model.with_networks("4NN", params, seed=1, hidden=[4])
    assert net.n_trainable > model.n_trainable
    loss, grad = net.loss_and_grad(lam, sigma)
    assert loss > 0 and len(grad) == net.n_params
    assert any(g != 0.0 for g in grad)

    assert fp.nrmse(sigma, sigma) == 0.0
    assert fp.mse([1.0, 2.0], [1.0, 4.0]) == 2.0

    print("smoke test passed")


if __name__ == "__main__":
    main()
