import math

import pytest

import pflab


@pytest.fixture(scope="module")
def schedule():
    return pflab.NoiseSchedule.vp_linear()


def test_schedule_closed_form(schedule):
    t = 0.5
    log_alpha = -0.25 * t * t * 19.9 - 0.5 * t * 0.1
    assert schedule.alpha(t) == pytest.approx(math.exp(log_alpha), rel=1e-14)
    assert schedule.alpha(t) ** 2 + schedule.sigma(t) ** 2 == pytest.approx(1.0, abs=1e-15)
    with pytest.raises(pflab._core.DomainError):
        schedule.alpha(2.0)


def test_gaussian_eps_and_identity_flow(schedule):
    g = pflab.MixtureModel.standard_gaussian(2)
    x = [0.3, -1.2]
    t = 0.4
    eps = g.epsilon(schedule, x, t)
    assert eps == pytest.approx([schedule.sigma(t) * v for v in x], rel=1e-12)
    z = pflab.sample_prior(5, 2)
    out, nfe = pflab.reference_solution(g, schedule, z)
    assert math.dist(out, z) <= 1e-6
    assert nfe > 0


def test_solvers_and_errors(schedule):
    m = pflab.synthesize_mixture(3, components=3)
    z = pflab.sample_prior(1, 2)
    ref, _ = pflab.reference_solution(m, schedule, z)
    x5, nfe5 = pflab.sample("ab4", 5, m, schedule, z)
    x40, nfe40 = pflab.sample("ab4", 40, m, schedule, z)
    assert (nfe5, nfe40) == (5, 40)
    assert math.dist(x40, ref) < math.dist(x5, ref)
    _, nfe = pflab.sample("dpm2", 5, m, schedule, z)
    assert nfe == 10
    with pytest.raises(pflab._core.UnknownSolverError):
        pflab.sample("rk4", 5, m, schedule, z)


def test_ddim_policy_matches_ddim(schedule):
    m = pflab.synthesize_mixture(3, components=3)
    z = pflab.sample_prior(2, 2)
    policy = pflab.Policy.baseline(order=4, width=16, depth=2)
    assert policy.coefficients(0.9, 0.5)[0] == pytest.approx(1.0, abs=1e-12)
    a, _ = pflab.sample("policy", 6, m, schedule, z, policy=policy)
    b, _ = pflab.sample("ddim", 6, m, schedule, z)
    assert a == pytest.approx(b, abs=1e-12)
    assert pflab.Policy.from_json(policy.to_json()) == policy


def test_convergence_order(schedule):
    m = pflab.synthesize_mixture(17, components=2)
    ddim = pflab.convergence_order("ddim", m, schedule, samples=4)
    dpm2 = pflab.convergence_order("dpm2", m, schedule, samples=4)
    assert 0.8 <= ddim["order"] <= 1.3
    assert 1.7 <= dpm2["order"] <= 2.4


def test_train_and_distill(tmp_path):
    data = pflab.build_dataset(60, first_condition=3, components=3)
    assert len(data) == 60
    train, held = data.slice(0, 40), data.slice(40, 60)
    policy = pflab.train_policy(train, steps=5, width=16, depth=2, iterations=100, batch=16)
    ddim = held.evaluate("ddim", 5)["psnr"]
    assert held.evaluate("policy", 5, policy=policy)["psnr"] > ddim
    rows = pflab.distill(train, 5)
    assert [len(r) for r in rows] == [1, 2, 3, 4, 4]
    path = tmp_path / "data.ndjson"
    data.save(str(path))
    again = pflab.load_dataset(str(path))
    assert again.x_gt(7) == data.x_gt(7)


def test_metrics():
    assert pflab.energy_distance([[0.0, 0.0]], [[3.0, 4.0]]) == pytest.approx(10.0)
    adv = pflab.normalize_advantage([1.0, 2.0, 3.0], 0.0)
    assert sum(adv) == pytest.approx(0.0, abs=1e-12)
    assert pflab.reward("psnr", [1.0, 0.0], [0.0, 0.0]) == pytest.approx(10 * math.log10(128.0))
