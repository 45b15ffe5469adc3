"""Smoke test for the invabc_py extension.

Build and install first:
    pip install --no-build-isolation -e crates/py
Then run:
    python python/smoke_test.py [run_dir]

With a pipeline run directory the trained VAE and surrogate are loaded too.
"""

import math
import random
import sys
from pathlib import Path

import invabc_py as ia

BOUNDS = [(0.0, 1.0)] * 6


def check_simulator():
    theta = [0.3, 0.5, 0.25, 0.5, 0.5, 0.5]
    eps1, eps2, thickness = ia.simulate(theta, BOUNDS, grid=16)
    assert len(eps1) == len(eps2) == len(thickness) == 256
    img = ia.render(theta, BOUNDS, side=32, grid=16)
    assert (img.width, img.height) == (32, 32)
    assert len(img.data) == 32 * 32 * 3
    assert img == ia.render(theta, BOUNDS, side=32, grid=16)
    assert abs(ia.ssim(img, img) - 1.0) < 1e-12
    other = ia.render([0.9, 0.1, 0.8, 0.3, 0.6, 0.2], BOUNDS, side=32, grid=16)
    s = ia.ssim(img, other)
    assert -1.0 <= s < 1.0
    print(f"simulate/render ok, ssim to a different design {s:.3f}")


def check_lssvr():
    rng = random.Random(0)
    xs = [[rng.uniform(-1, 1)] for _ in range(30)]
    ys = [math.sin(2 * x[0]) for x in xs]
    m = ia.Lssvr.fit(xs, ys, 1e4, 0.5)
    assert abs(sum(m.alphas)) < 1e-9
    err = max(abs(m.predict(x) - y) for x, y in zip(xs, ys))
    assert err < 1e-2, err
    print(f"lssvr ok, max in-sample error {err:.2e}")


def check_npmc():
    out = ia.run_npmc(lambda t: [t[0]], [2.0], [(-10.0, 10.0)],
                      n_particles=400, t_max=8, epsilon_stop=0.05, seed=3)
    assert abs(out["mean"][0] - 2.0) < 0.1, out["mean"]
    trace = out["epsilon_trace"]
    assert all(b <= a for a, b in zip(trace, trace[1:]))
    assert abs(sum(out["weights"]) - 1.0) < 1e-9
    print(f"npmc ok, mean {out['mean'][0]:.3f} after {len(trace)} generations ({out['stop']})")

    def broken(t):
        raise KeyError("forward failed")

    try:
        ia.run_npmc(broken, [0.0], [(0.0, 1.0)], n_particles=10)
    except KeyError:
        print("npmc propagates forward-model exceptions")
    else:
        raise AssertionError("expected KeyError")


def check_run_dir(run):
    vae = ia.Vae.load(str(run / "vae.ckpt"))
    sur = ia.Surrogate.load(str(run / "surrogate"))
    assert sur.latent_dim == vae.latent_dim
    img = ia.Image.load(str(run / "objective.png"))
    mean, log_var = vae.encode(img)
    assert len(mean) == len(log_var) == vae.latent_dim
    recon = vae.decode(mean)
    theta = [0.5] * 6
    pseudo = vae.decode(sur.predict(theta))
    print(f"run dir ok, objective reconstruction ssim {ia.ssim(recon, img):.3f}, "
          f"pseudo image {pseudo.width}x{pseudo.height}")


if __name__ == "__main__":
    check_simulator()
    check_lssvr()
    check_npmc()
    if len(sys.argv) > 1:
        check_run_dir(Path(sys.argv[1]))
    print("smoke test passed")
