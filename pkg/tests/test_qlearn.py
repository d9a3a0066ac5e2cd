import itertools

import numpy as np
import pytest

from evcoord.costs import PowerProfile
from evcoord.environment import (
    enumerate_actions,
    flex_counts,
    initial_state,
    make_park,
    matrix_counts,
    observe,
    scale,
    step,
)
from evcoord.network import QNetwork
from evcoord.qlearn import (
    EXPERIENCE_SETS,
    ActionSpaceTooLarge,
    ExperienceSet,
    FqiConfig,
    MdpConfig,
    Transitions,
    assemble_experience,
    build_experience,
    decode_action,
    encode_input,
    fqi,
    flex_from_observation,
    generate_experience,
    greedy_action,
    input_width,
    sample_trajectories,
)
from evcoord.sessions import Episode, SessionRecord, SlotConfig, generate_synthetic

from conftest import make_episode


def transitions_from(steps, config):
    """Raw transitions for explicit ``(park, action)`` pairs."""
    rows = []
    for park, u in steps:
        nxt, p = step(park, u)
        rows.append((park.t, matrix_counts(park), np.asarray(u), p, matrix_counts(nxt),
                     nxt.t == config.s_max and not nxt.connected))
    t, grid, u, p, ng, term = zip(*rows)
    return Transitions(
        config.s_max, config.n_max, np.zeros(len(rows), dtype=np.int64), np.array(t),
        np.array(grid, dtype=np.int8), np.array(u, dtype=np.int8), np.array(p, dtype=float),
        np.array(ng, dtype=np.int8), np.array(term), np.ones(len(rows)),
    )


class TestEncoding:
    def test_widths_at_twelve_slots(self):
        # full grid + time + action; see the acceptance suite for the 145 figure
        assert input_width("matrix", 12) == 157
        assert input_width("vector", 12) == 25

    @pytest.mark.parametrize("s", [1, 2, 5, 12, 20])
    def test_width_formulas(self, s):
        assert input_width("matrix", s) == s * s + s + 1
        assert input_width("vector", s) == 2 * s + 1
        assert len(encode_input(0, np.zeros((s, s)), np.zeros(s))) == s * s + s + 1
        assert len(encode_input(0, np.zeros(s), np.zeros(s))) == 2 * s + 1

    def test_zero_input(self):
        assert not encode_input(0, np.zeros((12, 12)), np.zeros(12)).any()

    def test_layout(self):
        x = encode_input(3, np.arange(4.0), np.array([1.0, 0.5, 0, 0]))
        assert x.tolist() == [0.75, 0, 1, 2, 3, 1.0, 0.5, 0, 0]

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            encode_input(0, np.zeros(5), np.zeros(4))


class TestConfigs:
    def test_experience_sets(self):
        expected = {
            "F1": ("matrix", "local", "quadratic"),
            "F2": ("vector", "local", "quadratic"),
            "F3": ("matrix", "global", "quadratic"),
            "F4": ("vector", "global", "quadratic"),
            "F5": ("vector", "global", "quadratic"),
            "F6": ("vector", "global", "linear-avg"),
            "F7": ("vector", "global", "linear-med"),
        }
        for k, v in expected.items():
            m = EXPERIENCE_SETS[k]
            assert (m.representation, m.scaling, m.cost) == v

    def test_labels(self):
        assert [EXPERIENCE_SETS[k].label for k in ("F1", "F2", "F3", "F4")] == \
            ["RL_ml", "RL_vl", "RL_mg", "RL_vg"]
        assert MdpConfig("vector", "global", "linear-avg", 5).label == "RL_a_E5"
        assert MdpConfig("vector", "global", "linear-med", 10).label == "RL_m_E10"

    def test_defaults(self):
        assert FqiConfig().iterations == 12

    @pytest.mark.parametrize("kw", [{"representation": "image"}, {"scaling": "x"},
                                    {"cost": "cubic"}, {"E": 0}])
    def test_invalid_mdp(self, kw):
        with pytest.raises(ValueError):
            MdpConfig(**kw)


class TestExperience:
    def test_one_trajectory_has_horizon_tuples(self):
        ep = generate_synthetic(SlotConfig(), 1, seed=3)[0]
        F = generate_experience([ep], EXPERIENCE_SETS["F1"], 1, seed=0)
        assert len(F) == F.n_tuples == 12
        tuples = list(F.tuples())
        assert [tp.state[0] for tp in tuples] == list(range(12))
        assert tuples[-1].terminal and not any(tp.terminal for tp in tuples[:-1])

    def test_seed_determinism(self):
        eps = generate_synthetic(SlotConfig(), 4, seed=1)
        a = generate_experience(eps, EXPERIENCE_SETS["F2"], 20, seed=5)
        b = generate_experience(eps, EXPERIENCE_SETS["F2"], 20, seed=5)
        c = generate_experience(eps, EXPERIENCE_SETS["F2"], 20, seed=6)
        assert a.digest() == b.digest() != c.digest()

    def test_scaling_only_changes_encoding(self):
        eps = generate_synthetic(SlotConfig(), 3, seed=2)
        tr = sample_trajectories(eps, 15, seed=0)
        tr2 = sample_trajectories(eps, 15, seed=0)
        for name in ("t", "grid", "u", "power", "next_grid", "terminal", "weight"):
            assert np.array_equal(getattr(tr, name), getattr(tr2, name))
        local = build_experience(tr, MdpConfig("vector", "local"))
        glob = build_experience(tr, MdpConfig("vector", "global"))
        assert np.array_equal(local.x[:, :13], glob.x[:, :13])
        assert np.array_equal(local.cost, glob.cost)

    def test_weights_count_repeats(self):
        ep = make_episode([(3, 1)], s_max=3)
        tr = sample_trajectories([ep], 50, seed=0)
        assert tr.weight.sum() == 50 * 3
        assert len(tr) < 50 * 3

    def test_tuple_contents(self):
        eps = generate_synthetic(SlotConfig(), 2, seed=4)
        F = generate_experience(eps, EXPERIENCE_SETS["F3"], 5, seed=0)
        for tp in itertools.islice(F.tuples(), 40):
            assert tp.cost == pytest.approx((tp.action * 10).sum() ** 2)
            assert tp.action * 10 == pytest.approx(np.rint(tp.action * 10))
            assert tp.state[1].shape == (12, 12)
            assert tp.next_state[0] == tp.state[0] + 1

    def test_save_load(self, tmp_path):
        eps = generate_synthetic(SlotConfig(), 2, seed=4)
        F = generate_experience(eps, EXPERIENCE_SETS["F3"], 5, seed=0)
        F.save(tmp_path / "f.npz")
        assert ExperienceSet.load(tmp_path / "f.npz").digest() == F.digest()

    def test_linear_costs(self):
        eps = generate_synthetic(SlotConfig(), 3, seed=4)
        tr = sample_trajectories(eps, 5, seed=0)
        history = {0: PowerProfile(0, tuple(range(12))), 1: PowerProfile(1, (1,) * 12)}
        with pytest.warns(UserWarning, match=r"\[0\]"):
            F = build_experience(tr, MdpConfig("vector", "global", "linear-avg", 2), history)
        assert 0 not in set(F.transitions.episode_id.tolist())
        ref = np.where(F.transitions.episode_id == 1, F.transitions.t, (F.transitions.t + 1) / 2)
        assert np.allclose(F.cost, np.abs(F.transitions.power - ref))

    def test_linear_costs_need_history(self):
        tr = sample_trajectories(generate_synthetic(SlotConfig(), 1, seed=4), 2, seed=0)
        with pytest.raises(ValueError):
            build_experience(tr, EXPERIENCE_SETS["F6"])

    def test_decode_matches_enumeration(self):
        n = np.array([1, 2, 0, 3, 1])
        acts = enumerate_actions(n)
        for i, u in enumerate(acts):
            assert np.array_equal(decode_action(i, n), u)


class TestFqi:
    def test_single_terminal_transition(self):
        cfg = SlotConfig(slots_per_episode=2, max_stations=2)
        park = make_park([(1, 1)], cfg, t=1)
        tr = transitions_from([(park, [1, 0])], cfg)
        F = assemble_experience(EXPERIENCE_SETS["F1"], tr, np.array([5.0]))
        res = fqi(F, FqiConfig(iterations=4, epochs=400, batch_size=1, learning_rate=1e-2))
        assert len(res) == 4
        for net in res:
            assert net.forward(F.x[0]) == pytest.approx(5.0, abs=0.05)

    def test_two_step_chain(self):
        cfg = SlotConfig(slots_per_episode=2, max_stations=2)
        s0 = make_park([(2, 1)], cfg, t=0)
        s1_empty = step(s0, [0, 1])[0]
        s1_ev = step(s0, [0, 0])[0]
        tr = transitions_from([(s0, [0, 1]), (s0, [0, 0]), (s1_empty, [0, 0]), (s1_ev, [1, 0])], cfg)
        costs = np.array([3.0, 1.0, 2.0, 6.0])
        F = assemble_experience(MdpConfig("matrix", "local"), tr, costs)
        res = fqi(F, FqiConfig(iterations=2, epochs=1500, batch_size=4, learning_rate=1e-2))
        q1, q2 = res[0].forward(F.x), res[1].forward(F.x)
        assert q1 == pytest.approx(costs, abs=0.05)
        assert q2 == pytest.approx([3 + 2, 1 + 6, 2, 6], abs=0.1)

    def test_action_cap(self):
        cfg = SlotConfig(slots_per_episode=4, max_stations=6)
        park = make_park([(4, 1)] * 6, cfg, t=0)
        tr = transitions_from([(park, [0, 0, 0, 0])], cfg)
        F = assemble_experience(EXPERIENCE_SETS["F2"], tr, np.array([0.0]))
        with pytest.raises(ActionSpaceTooLarge):
            fqi(F, FqiConfig(iterations=2, action_cap=3))

    def test_predictions_nonnegative(self):
        eps = generate_synthetic(SlotConfig(), 10, seed=0)
        F = generate_experience(eps, EXPERIENCE_SETS["F2"], 20, seed=0)
        res = fqi(F, FqiConfig(iterations=6))
        scale = F.cost.mean() * F.s_max
        assert (F.cost >= 0).all()
        assert res[-1].forward(F.x).min() > -0.05 * scale

    def test_deterministic(self):
        eps = generate_synthetic(SlotConfig(), 4, seed=0)
        F = generate_experience(eps, EXPERIENCE_SETS["F4"], 10, seed=0)
        a = fqi(F, FqiConfig(iterations=2, epochs=2))
        b = fqi(F, FqiConfig(iterations=2, epochs=2))
        assert all(np.array_equal(x.weights[0], y.weights[0]) for x, y in zip(a, b))

    def test_empty(self):
        cfg = SlotConfig(slots_per_episode=2, max_stations=2)
        tr = transitions_from([(make_park([(1, 1)], cfg, t=1), [1, 0])], cfg).select(np.array([False]))
        with pytest.raises(ValueError):
            fqi(assemble_experience(EXPERIENCE_SETS["F1"], tr, np.zeros(0)))


class TestGreedy:
    def test_empty_park(self):
        net = QNetwork.initialize(25, rng=0)
        park = make_park([], SlotConfig())
        assert not greedy_action(net, park, "vector", "local").any()

    def test_forced_zero_flex(self):
        net = QNetwork.initialize(25, rng=0)
        park = make_park([(2, 2)], SlotConfig())
        assert greedy_action(net, park, "vector", "local").tolist() == [1] + [0] * 11

    def test_ties_go_to_first_action(self):
        net = QNetwork.initialize(25, rng=0)
        for w in net.weights:
            w[:] = 0
        park = make_park([(3, 1), (3, 1)], SlotConfig())
        assert not greedy_action(net, park, "vector", "global").any()

    def test_argmin(self):
        net = QNetwork.initialize(25, (4,), rng=0)
        park = make_park([(3, 1), (3, 1)], SlotConfig())
        n = flex_counts(park)
        acts = enumerate_actions(n)
        x = np.array([encode_input(park.t, observe(park, "vector"), scale(u, n, "local", 10)) for u in acts])
        best = acts[int(np.argmin(net.forward(x)))]
        assert np.array_equal(greedy_action(net, park, "vector", "local"), best)

    def test_flex_from_observation(self):
        park = make_park([(3, 2), (2, 1), (2, 2)], SlotConfig(slots_per_episode=3, max_stations=4))
        for rep in ("matrix", "vector"):
            assert flex_from_observation(observe(park, rep), 4).tolist() == [1, 2, 0]


def tiny_mdp():
    cfg = SlotConfig(slots_per_episode=3, max_stations=3)
    kinds = [(w, c) for w in range(1, 4) for c in range(1, w + 1)]
    eps = []
    for k in range(1, 4):
        for combo in itertools.combinations_with_replacement(kinds, k):
            i = len(eps)
            eps.append(Episode(i, tuple(SessionRecord("x", 0, w, c, i) for w, c in combo), cfg))
    return cfg, eps


def test_greedy_matches_dynamic_programming():
    """Converged FQI picks a DP-optimal action in nearly every state of a tiny MDP."""
    cfg, eps = tiny_mdp()

    def key(p):
        return p.t, tuple(sorted((e.depart_remaining, e.charge_remaining) for e in p.connected))

    value = {}

    def V(p):
        if p.t == cfg.s_max:
            return 0
        k = key(p)
        if k not in value:
            value[k] = min(int(u.sum()) ** 2 + V(step(p, u)[0]) for u in enumerate_actions(flex_counts(p)))
        return value[k]

    states = {}

    def collect(p):
        if p.t < cfg.s_max:
            states.setdefault(key(p), p)
            for u in enumerate_actions(flex_counts(p)):
                collect(step(p, u)[0])

    for ep in eps:
        collect(initial_state(ep))
    choice = [p for p in states.values() if len(enumerate_actions(flex_counts(p))) > 1]
    assert len(choice) > 50

    F = generate_experience(eps, MdpConfig("matrix", "local"), 50, seed=0)
    net = fqi(F, FqiConfig(iterations=4, epochs=40, batch_size=64, seed=0))[-1]
    hits = 0
    for p in choice:
        u = greedy_action(net, p, "matrix", "local")
        nxt, pw = step(p, u)
        hits += pw**2 + V(nxt) == V(p)
    assert hits / len(choice) >= 0.95
