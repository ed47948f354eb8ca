"""Smoke test for the gtua_py extension."""

import math

import gtua_py as g


def main():
    p = g.ProbVector([0.02] * 200)
    q, scale, realized, saturated = g.perturb(p, 5.0, seed=1)
    assert abs(realized - 5.0) <= 0.05 and not saturated, realized
    assert abs(g.pseudo_kl(p, q) - realized) < 1e-9
    assert abs(sum(q.values) - p.mass()) < 1e-9

    inst = g.Instance.sample(p, seed=3)
    truth = sorted(inst.malicious())
    for found, tests in (g.run_la(inst, q), g.run_gbs(inst, 4)):
        assert sorted(found) == truth and tests > 0
    run = g.run_gtua(inst, q)
    assert sorted(run["detected"]) == truth
    assert run["tests"] == run["la_tests"] + run["gbs_tests"]
    assert g.gbs_bound(200, 4) > 0 and g.entropy(p) > 0

    gen = g.GmmModel.synthetic()
    pts = gen.sample(3000, 7)
    fit = g.GmmModel.fit(pts, 3, seed=7)
    again = g.GmmModel.from_json(fit.to_json())
    assert again.to_json() == fit.to_json() and fit.k == 3
    assert 0.0 <= fit.tail_prob(17.0, 3.0) <= 1.0
    assert math.isfinite(fit.bic(pts))

    rep = g.replay(gen, samples=20000, seed=2)
    assert rep["total_tests"] < rep["total_user_hours"]
    assert len(rep["by_hour_of_day"]) == 24

    try:
        g.ProbVector([1.5])
    except ValueError:
        pass
    else:
        raise AssertionError("invalid probability accepted")
    print("smoke test ok: reduction %.3f, la tests %d" % (rep["reduction"], g.run_la(inst, q)[1]))


if __name__ == "__main__":
    main()
