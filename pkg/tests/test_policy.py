import numpy as np
import pytest
from hypothesis import given, settings
import hypothesis.strategies as st

from metastrat.errors import ValidationError
from metastrat.policy import (
    LATENT_BOUND,
    ObsFilter,
    PolicyNet,
    ProjectionParams,
    WelfordBatch,
    center_latent,
    decode_array,
    encode_array,
    forward,
    project,
)


def make_net(latent_dim=2):
    return PolicyNet(obs_dim=3, action_dim=1, latent_dim=latent_dim)


def test_parameter_count_matches_closed_form():
    net = make_net(2)
    n_in = 3 + 2
    expected = (n_in * 64 + 64) + (64 * 64 + 64) + (64 * 1 + 1)
    assert net.n_params == expected


@given(st.integers(0, 2**32 - 1))
@settings(max_examples=25, deadline=None)
def test_flatten_unflatten_round_trips_bit_exactly(seed):
    net = make_net()
    vec = np.random.default_rng(seed).standard_normal(net.n_params)
    assert np.array_equal(net.flatten(net.unflatten(vec)), vec)


def test_zero_weights_give_zero_action():
    net = make_net()
    theta = np.zeros(net.n_params)
    filt = ObsFilter.create(3)
    for seed in range(5):
        obs = np.random.default_rng(seed).standard_normal(3)
        action = forward(net, theta, filt, obs, latent=center_latent(2))
        assert np.array_equal(action, np.zeros(1))


def test_distinct_latents_change_actions():
    # oracle: direct evaluation on 100 random observations; at least one
    # action pair must differ measurably
    net = make_net()
    rng = np.random.default_rng(0)
    theta = net.init_params(rng)
    theta = theta + 0.1 * rng.standard_normal(theta.shape)  # nonzero output layer
    filt = ObsFilter.create(3)
    c1 = np.array([1.0, -0.5])
    c2 = np.array([-1.0, 0.5])
    gaps = []
    for _ in range(100):
        obs = rng.standard_normal(3)
        a1 = forward(net, theta, filt, obs, latent=c1)
        a2 = forward(net, theta, filt, obs, latent=c2)
        gaps.append(np.linalg.norm(a1 - a2))
    assert max(gaps) > 1e-9


def test_actions_always_inside_open_unit_box():
    # 10,000 random (params, obs) pairs in the scale regime policies train in
    net = make_net()
    rng = np.random.default_rng(3)
    thetas = np.stack([net.init_params(rng) + 0.2 * rng.standard_normal(net.n_params) for _ in range(100)])
    xs = rng.standard_normal((100, 100, net.in_dim))
    acts = net.forward_batch(thetas, xs)
    assert acts.shape == (100, 100, 1)
    assert np.all(acts > -1.0) and np.all(acts < 1.0)


@given(st.integers(0, 2**32 - 1))
@settings(max_examples=25, deadline=None)
def test_forward_never_produces_nonfinite(seed):
    net = make_net()
    rng = np.random.default_rng(seed)
    theta = rng.standard_normal(net.n_params) * 10
    x = rng.standard_normal(net.in_dim) * 100
    assert np.all(np.isfinite(net.forward(theta, x)))


def test_forward_rejects_dimension_mismatch():
    net = make_net()
    theta = np.zeros(net.n_params)
    filt = ObsFilter.create(3)
    with pytest.raises(ValidationError):
        forward(net, theta, filt, np.zeros(4), latent=np.zeros(2))
    with pytest.raises(ValidationError):
        forward(net, theta, filt, np.zeros(3), latent=np.zeros(3))
    plain = make_net(latent_dim=0)
    with pytest.raises(ValidationError):
        forward(plain, np.zeros(plain.n_params), filt, np.zeros(3), latent=np.zeros(2))


def test_plain_policy_has_no_latent_input_structurally():
    plain = make_net(latent_dim=0)
    assert plain.in_dim == plain.obs_dim
    assert plain.n_params < make_net(2).n_params


# ---------------------------------------------------------------------------
# observation filter
# ---------------------------------------------------------------------------

def test_first_update_normalizes_to_zero():
    filt = ObsFilter.create(3)
    out = filt.normalize(np.array([5.0, -2.0, 0.3]), update=True)
    assert np.array_equal(out, np.zeros(3))
    assert filt.count == 1.0


def test_frozen_filter_is_pure():
    filt = ObsFilter.create(2)
    rng = np.random.default_rng(0)
    for _ in range(10):
        filt.normalize(rng.standard_normal(2), update=True)
    frozen = filt.copy(frozen=True)
    obs = np.array([0.5, 1.5])
    before = (frozen.count, frozen.mean.copy(), frozen.m2.copy())
    a = frozen.normalize(obs, update=True)
    b = frozen.normalize(obs, update=True)
    assert np.array_equal(a, b)
    assert frozen.count == before[0]
    assert np.array_equal(frozen.mean, before[1])
    assert np.array_equal(frozen.m2, before[2])


def test_filter_recovers_stream_statistics():
    # oracle: two-pass batch mean/std over the same stream
    rng = np.random.default_rng(7)
    stream = 3.0 + 2.0 * rng.standard_normal((100_000, 1))
    filt = ObsFilter.create(1)
    for row in stream:
        filt.normalize(row, update=True)
    batch_mean, batch_std = float(stream.mean()), float(stream.std())
    assert filt.mean[0] == pytest.approx(batch_mean, abs=1e-9)
    assert filt.std[0] == pytest.approx(batch_std, abs=1e-6)
    assert abs(batch_mean - 3.0) < 0.05 and abs(batch_std - 2.0) < 0.05


@given(st.integers(0, 2**32 - 1), st.integers(1, 40), st.integers(1, 40))
@settings(max_examples=25, deadline=None)
def test_merge_equals_sequential_accumulation(seed, n1, n2):
    rng = np.random.default_rng(seed)
    xs = rng.standard_normal((n1 + n2, 3))
    seq = ObsFilter.create(3)
    for x in xs:
        seq.normalize(x, update=True)
    a, b = ObsFilter.create(3), ObsFilter.create(3)
    for x in xs[:n1]:
        a.normalize(x, update=True)
    for x in xs[n1:]:
        b.normalize(x, update=True)
    a.merge(b)
    assert a.count == seq.count
    np.testing.assert_allclose(a.mean, seq.mean, atol=1e-12)
    np.testing.assert_allclose(a.m2, seq.m2, atol=1e-9)


def test_welford_batch_rows_match_scalar_filters():
    rng = np.random.default_rng(1)
    obs_seq = rng.standard_normal((20, 4, 3))
    active = np.ones(4, dtype=bool)
    wb = WelfordBatch(4, 3)
    filters = [ObsFilter.create(3) for _ in range(4)]
    for t in range(20):
        if t == 10:
            active[2] = False  # row 2 terminates early
        wb.update(obs_seq[t], active)
        for r in range(4):
            if active[r]:
                filters[r].normalize(obs_seq[t, r], update=True)
    for r in range(4):
        row = wb.row_filter(r)
        assert row.count == filters[r].count
        assert np.array_equal(row.mean, filters[r].mean)
        assert np.array_equal(row.m2, filters[r].m2)


# ---------------------------------------------------------------------------
# projection
# ---------------------------------------------------------------------------

def test_zero_projection_gives_zero_latent():
    proj = ProjectionParams.zeros(2)
    mu = np.arange(8, dtype=float)
    assert np.array_equal(project(proj, mu), np.zeros(2))


def test_projection_output_clamped_to_latent_box():
    proj = ProjectionParams.zeros(2)
    proj.weights[0, 0] = 10.0
    latent = project(proj, np.ones(8))
    assert latent[0] == LATENT_BOUND
    assert np.all(np.abs(latent) <= LATENT_BOUND)


def test_projection_rejects_wrong_dimension():
    with pytest.raises(ValidationError):
        project(ProjectionParams.zeros(2), np.ones(7))


def test_projection_flatten_round_trip():
    rng = np.random.default_rng(0)
    proj = ProjectionParams(weights=rng.standard_normal((2, 8)), bias=rng.standard_normal(2))
    back = ProjectionParams.unflatten(proj.flatten(), latent_dim=2)
    assert np.array_equal(back.weights, proj.weights)
    assert np.array_equal(back.bias, proj.bias)


def test_projected_latent_feeds_policy_like_a_plain_latent():
    net = make_net(2)
    rng = np.random.default_rng(2)
    theta = net.init_params(rng) + 0.05 * rng.standard_normal(net.n_params)
    filt = ObsFilter.create(3)
    proj = ProjectionParams(weights=0.1 * rng.standard_normal((2, 8)), bias=np.zeros(2))
    mu = np.ones(8)
    latent = project(proj, mu)
    obs = rng.standard_normal(3)
    direct = forward(net, theta, filt, obs, latent=latent)
    again = forward(net, theta, filt, obs, latent=project(proj, mu))
    assert np.array_equal(direct, again)


# ---------------------------------------------------------------------------
# codec
# ---------------------------------------------------------------------------

@given(st.integers(0, 2**32 - 1))
@settings(max_examples=20, deadline=None)
def test_array_codec_round_trips_bit_exactly(seed):
    rng = np.random.default_rng(seed)
    a = rng.standard_normal((3, 5)) * 10.0 ** float(rng.integers(-300, 300))
    doc = encode_array(a)
    assert np.array_equal(decode_array(doc), a)
