"""Smoke test for the pinchbot Python module.

    pip install --no-build-isolation ./crates/py
    python crates/py/python/smoke_test.py
"""

import math
import tempfile

import pinchbot


def main():
    ring = pinchbot.PointCloud(
        [[0.05 * math.cos(a), 0.05 * math.sin(a), 0.01] for a in (2 * math.pi * i / 400 for i in range(400))]
    )
    assert len(ring) == 400

    circle = pinchbot.fit_safety_circle(ring)
    assert abs(circle.diameter() - 0.1) < 1e-9, circle

    a = pinchbot.PinchAction(0.01, 0.0, 0.03, rz=0.4, gamma=1.0)
    p = pinchbot.project_action(a, circle)
    assert abs(circle.radial_distance(p.x, p.y) - circle.radius) < 1e-12
    assert (p.z, p.rz, p.gamma) == (a.z, a.rz, a.gamma)
    q = pinchbot.project_action(p, circle)
    assert p.to_list() == q.to_list()

    assert pinchbot.chamfer_distance(ring, ring) == 0.0
    assert pinchbot.earth_movers_distance(ring, ring) == 0.0
    shifted = pinchbot.PointCloud([[x + 0.001, y, z] for x, y, z in ring.points()])
    assert abs(pinchbot.chamfer_distance(ring, shifted) - pinchbot.chamfer_distance(shifted, ring)) == 0.0

    state = pinchbot.new_clay_cylinder(0.065, 0, n_points=512)
    after = pinchbot.apply_pinch(state, pinchbot.PinchAction(0.03, 0.0, 0.03, d_ee=0.01))
    assert len(after.cloud) == 512
    goal = pinchbot.goal_cloud(0.1, 512)
    report = pinchbot.evaluate(after.cloud, goal, 0.1)
    assert set(report) == {"chamfer_mm", "emd_mm", "diameter_mse_mm2"}
    assert all(math.isfinite(v) for v in report.values())

    with tempfile.TemporaryDirectory() as d:
        lens = pinchbot.generate_demos(2, 7, d, n_points=128)
        assert len(lens) == 2 and all(21 <= n <= 31 for n in lens)
        finals = pinchbot.load_final_states(d)
        assert len(finals) == 2 and len(finals[0]) == 128
        try:
            pinchbot.Policy.load(d + "/missing.ckpt")
        except FileNotFoundError:
            pass
        else:
            raise AssertionError("missing checkpoint was accepted")

    print("pinchbot python smoke test: ok")


if __name__ == "__main__":
    main()
