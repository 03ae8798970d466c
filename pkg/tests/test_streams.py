import numpy as np
import pytest

from paofed.features import build_feature_map
from paofed.streams import (
    EmptyStreamError,
    MissingColumnError,
    StreamDataError,
    build_stream_plan,
    build_test_set,
    dump_stream_plan,
    load_csv_stream,
    synth_target,
)
from paofed.harness import ExperimentConfig


def make_config(**kw):
    base = dict(
        n_clients=8,
        rff_dim=16,
        input_dim=4,
        mask_size=2,
        horizon=200,
        group_sizes=(50, 100, 150, 200),
        noise_std=0.1,
        test_size=50,
        mc_runs=1,
        availability_probs=(0.5, 0.5, 0.5, 0.5),
    )
    base.update(kw)
    return ExperimentConfig(**base)


def test_synth_target_hand_values():
    assert synth_target(np.zeros(4)) == pytest.approx(0.8)
    assert synth_target(np.array([1.0, 0, 0, 0])) == pytest.approx(1.8)
    # sqrt(sin^2(pi/2)) + 0.8 - 0.5*exp(0)*1 = 1.3
    assert synth_target(np.array([0.0, 0.0, 1.0, 0.5])) == pytest.approx(1.3)
    assert synth_target(np.zeros(4), noise=0.25) == pytest.approx(1.05)


def test_synth_target_wrong_length():
    with pytest.raises(ValueError):
        synth_target(np.zeros(3))


def test_plan_group_counts_exact():
    cfg = make_config()
    plan = build_stream_plan(cfg, 0)
    for k in range(plan.n_clients):
        expected = cfg.group_sizes[plan.group_of[k]]
        assert len(plan.iterations[k]) == expected
        assert np.all(np.diff(plan.iterations[k]) > 0)
        assert plan.iterations[k][-1] < cfg.horizon
    # total per group matches the configured sizes exactly
    per_group = np.zeros(4, dtype=int)
    for k in range(plan.n_clients):
        per_group[plan.group_of[k]] += len(plan.iterations[k])
    assert tuple(per_group) == tuple(2 * s for s in cfg.group_sizes)


def test_plan_even_spacing_when_divisible():
    cfg = make_config(group_sizes=(50, 100, 200, 200))
    plan = build_stream_plan(cfg, 1)
    assert np.array_equal(plan.iterations[0], np.arange(50) * 4)
    # densest group receives one sample every iteration
    dense = plan.n_clients - 1
    assert np.array_equal(plan.iterations[dense], np.arange(200))


def test_plan_single_group_every_client_full():
    cfg = make_config(n_clients=4, group_sizes=(200,), availability_probs=(1.0,))
    plan = build_stream_plan(cfg, 0)
    assert all(len(it) == 200 for it in plan.iterations)


def test_plan_deterministic():
    cfg = make_config()
    a = build_stream_plan(cfg, 42)
    b = build_stream_plan(cfg, 42)
    for k in range(a.n_clients):
        assert np.array_equal(a.inputs[k], b.inputs[k])
        assert np.array_equal(a.targets[k], b.targets[k])


def test_plan_divisibility_error():
    cfg = make_config(n_clients=6)
    with pytest.raises(StreamDataError):
        build_stream_plan(cfg, 0)


def test_events_at_matches_client_lists():
    cfg = make_config()
    plan = build_stream_plan(cfg, 3)
    seen = 0
    for n in range(cfg.horizon):
        ids, X, y = plan.events_at(n)
        seen += len(ids)
        for i, k in enumerate(ids):
            j = np.searchsorted(plan.iterations[k], n)
            assert plan.iterations[k][j] == n
            assert np.array_equal(plan.inputs[k][j], X[i])
    assert seen == plan.total_samples()


def test_noise_independent_of_inputs():
    cfg = make_config(n_clients=4, group_sizes=(25000,), horizon=25000,
                      availability_probs=(1.0,))
    plan = build_stream_plan(cfg, 5)
    X = np.vstack(plan.inputs)
    y = np.concatenate(plan.targets)
    noise = y - np.array([synth_target(x) for x in X])
    assert X.shape[0] >= 100_000
    for j in range(4):
        corr = np.corrcoef(noise, X[:, j])[0, 1]
        assert abs(corr) < 0.02


def test_test_set_properties():
    cfg = make_config(test_size=200)
    fm = build_feature_map(0, 4, cfg.rff_dim, 1.0)
    ts = build_test_set(fm, cfg, 9)
    assert ts.inputs.shape == (200, 4)
    assert ts.targets.shape == (200,)
    assert ts.mapped_inputs.shape == (200, cfg.rff_dim)
    assert np.all(np.einsum("ij,ij->i", ts.mapped_inputs, ts.mapped_inputs) <= 2 + 1e-12)
    # noiseless targets
    for i in range(0, 200, 40):
        assert ts.targets[i] == pytest.approx(synth_target(ts.inputs[i]))


def test_test_set_default_shapes():
    cfg = make_config(test_size=2000, rff_dim=200)
    fm = build_feature_map(0, 4, 200, 1.0)
    ts = build_test_set(fm, cfg, 0)
    assert ts.inputs.shape == (2000, 4)
    assert ts.mapped_inputs.shape == (2000, 200)


def write_csv(path, rows, header="a,b,c,target"):
    with open(path, "w", encoding="utf-8") as f:
        f.write(header + "\n")
        for r in rows:
            f.write(",".join(str(v) for v in r) + "\n")


def test_csv_minmax_endpooints(tmp_path):
    path = tmp_path / "two.csv"
    write_csv(path, [(0.0, 5.0, 1.0, 2.0), (10.0, 15.0, 3.0, 4.0)], header="a,b,c,target")
    fm = build_feature_map(0, 1, 8, 1.0)
    plan, test = load_csv_stream(
        path, ["a"], "target", fm=fm, n_clients=1,
        group_proportions=(1,), test_fraction=0.0, seed=0,
    )
    vals = np.sort(np.vstack(plan.inputs).ravel())
    assert np.allclose(vals, [-1.0, 1.0])


def test_csv_split_arithmetic(tmp_path):
    rows = [(i * 0.1, (i * 7 % 13) * 0.5, 1.0 * i) for i in range(800)]
    path = tmp_path / "data.csv"
    write_csv(path, rows, header="a,b,target")
    fm = build_feature_map(0, 2, 8, 1.0)
    plan, test = load_csv_stream(
        path, ["a", "b"], "target", fm=fm, n_clients=8, test_fraction=0.1, seed=1,
    )
    assert test.size == 80
    assert plan.total_samples() == 720
    assert plan.horizon == max(len(it) for it in plan.iterations)
    # group proportions approximately 1:2:3:4 per client
    quotas = [len(it) for it in plan.iterations]
    assert quotas[0] < quotas[2] < quotas[4] < quotas[6]


def test_csv_missing_file():
    fm = build_feature_map(0, 1, 4, 1.0)
    with pytest.raises(FileNotFoundError):
        load_csv_stream("/nonexistent/file.csv", ["a"], "y", fm=fm, n_clients=1)


def test_csv_missing_column(tmp_path):
    path = tmp_path / "x.csv"
    write_csv(path, [(1, 2, 3, 4)], header="a,b,c,target")
    fm = build_feature_map(0, 2, 4, 1.0)
    with pytest.raises(MissingColumnError):
        load_csv_stream(path, ["a", "nope"], "target", fm=fm, n_clients=1)


def test_csv_all_rows_dropped(tmp_path):
    path = tmp_path / "bad.csv"
    write_csv(path, [("x", 1, 1, 1), ("", 2, 2, 2)], header="a,b,c,target")
    fm = build_feature_map(0, 1, 4, 1.0)
    with pytest.raises(EmptyStreamError):
        load_csv_stream(path, ["a"], "target", fm=fm, n_clients=1,
                        group_proportions=(1,))


def test_csv_zscore(tmp_path):
    rows = [(float(i), float(i % 5), float(i)) for i in range(100)]
    path = tmp_path / "z.csv"
    write_csv(path, rows, header="a,b,target")
    fm = build_feature_map(0, 2, 4, 1.0)
    plan, _ = load_csv_stream(path, ["a", "b"], "target", normalization="zscore",
                              fm=fm, n_clients=1, group_proportions=(1,),
                              test_fraction=0.0, seed=0)
    X = np.vstack(plan.inputs)
    assert np.allclose(X.mean(axis=0), 0.0, atol=1e-9)
    assert np.allclose(X.std(axis=0), 1.0, atol=1e-9)


def test_dump_stream_plan(tmp_path):
    cfg = make_config(n_clients=4, group_sizes=(5,), horizon=10,
                      availability_probs=(1.0,))
    plan = build_stream_plan(cfg, 0)
    p1, p2 = tmp_path / "a.txt", tmp_path / "b.txt"
    dump_stream_plan(plan, p1)
    dump_stream_plan(plan, p2)
    assert p1.read_text() == p2.read_text()
    assert p1.read_text().count("\n") == 1 + plan.total_samples()
