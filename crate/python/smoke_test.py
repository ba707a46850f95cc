"""Smoke test for the sphcnn Python module.

Build and install first:
    pip install maturin
    cd crates/py && maturin build --release -o dist && pip install dist/sphcnn-*.whl
"""

import math

import sphcnn


def main():
    x = sphcnn.Signal.synth("gaussian_mixture:6:1", 16)
    assert (x.n_theta, x.n_phi, x.n_features) == (16, 16, 1)
    assert abs(sphcnn.Signal(8, 8, 1, [1.0] * 64).norm() - 1.0) < 1e-12

    r = sphcnn.Rotation.from_euler(0.3, 1.1, -0.4)
    assert r.compose(r.inverse()).angle() < 1e-12
    back = x.rotate(r).rotate(r.inverse())
    assert sphcnn.relative_rmse(x, back) < 5e-2

    net = sphcnn.Network.random([1, 2, 2], seed=4)
    assert net.depth == 2 and net.features == [1, 2, 2]
    again = sphcnn.Network.from_json(net.to_json())
    assert again.forward(x).values() == net.forward(x).values()

    quarter = sphcnn.Rotation.from_axis_angle([0.0, 0.0, 1.0], math.pi / 2)
    rep = sphcnn.equivariance_report(net, x, quarter)
    assert rep["exact_regime"] and rep["relative_rmse"] <= 1e-10

    t = sphcnn.DiffeoField.smooth(0.1, 3, 16)
    tn, tg = t.sizes()
    assert tn <= 0.1 and tg <= 0.1
    st = sphcnn.stability_report(net, x, t, 0.1)
    assert st["pass"] and st["bound_kind"] == "network"

    bank = '{"F": 1, "G": 1, "filters": [[{"type": "constant", "value": 2.0}]]}'
    y = sphcnn.conv_bank(bank, sphcnn.Signal.synth("constant:1.5", 8))
    assert all(abs(v - 3.0) < 1e-12 for v in y.values())
    assert abs(sphcnn.bound_thm1(1.0, 0.1, 1.0) - 0.8) < 1e-15

    try:
        sphcnn.bound_thm1(1.0, 0.7, 1.0)
    except ValueError:
        pass
    else:
        raise AssertionError("eps above 1/2 accepted")

    print("python smoke test ok")


if __name__ == "__main__":
    main()
