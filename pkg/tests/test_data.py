import json

import numpy as np
import pandas as pd
import pytest

from conftest import random_walk
from midas.adapters import read_tracks, write_windows_csv
from midas.data import (
    DATASET_SPECS,
    FormatError,
    InvalidWindowError,
    PitchScaler,
    SchemaError,
    Track,
    check_window,
    compute_derivatives,
    denormalize,
    ingest,
    make_window,
    nearest_frames,
    normalize,
    windows_from_track,
)


def finite_difference_oracle(p, dt):
    K, T, _ = p.shape
    v = np.zeros_like(p)
    a = np.zeros_like(p)
    for k in range(K):
        for t in range(1, T):
            for c in range(2):
                v[k, t, c] = (p[k, t, c] - p[k, t - 1, c]) / dt
        v[k, 0] = v[k, 1]
        for t in range(1, T - 1):
            for c in range(2):
                a[k, t, c] = (v[k, t + 1, c] - v[k, t, c]) / dt
        a[k, 0] = a[k, 1]
        a[k, T - 1] = a[k, T - 2]
    return v, a


class TestDerivatives:
    def test_linear_motion(self):
        t = np.arange(50)
        p = np.stack([0.1 * t, np.zeros(50)], axis=-1)[None]
        v, a = compute_derivatives(p, 0.1)
        np.testing.assert_allclose(v[..., 0], 1.0, atol=1e-12)
        np.testing.assert_allclose(v[..., 1], 0.0, atol=1e-12)
        np.testing.assert_allclose(a, 0.0, atol=1e-9)

    def test_constant_positions(self):
        p = np.full((3, 20, 2), 7.5)
        v, a = compute_derivatives(p, 0.1)
        assert np.all(v == 0) and np.all(a == 0)

    def test_matches_elementwise_oracle(self, rng):
        p = rng.uniform(0, 100, size=(4, 50, 2))
        v, a = compute_derivatives(p, 0.1)
        v_ref, a_ref = finite_difference_oracle(p, 0.1)
        np.testing.assert_allclose(v, v_ref, rtol=0, atol=1e-12 * np.abs(v_ref).max())
        np.testing.assert_allclose(a, a_ref, rtol=0, atol=1e-12 * np.abs(a_ref).max())

    def test_too_short(self):
        with pytest.raises(InvalidWindowError):
            compute_derivatives(np.zeros((2, 2, 2)), 0.1)

    def test_bad_dt(self):
        with pytest.raises(InvalidWindowError):
            compute_derivatives(np.zeros((2, 5, 2)), 0.0)

    def test_positions_rebuilt_from_velocity(self, rng):
        p = random_walk(rng, 5, 200)
        v, _ = compute_derivatives(p, 0.1)
        rebuilt = p[:, :1] + np.concatenate([np.zeros((5, 1, 2)), np.cumsum(v[:, 1:] * 0.1, axis=1)], axis=1)
        np.testing.assert_allclose(rebuilt, p, atol=1e-9)

    def test_relations_hold_where_defined(self, rng):
        p = random_walk(rng, 3, 100)
        v, a = compute_derivatives(p, 0.1)
        np.testing.assert_allclose(v[:, 1:], np.diff(p, axis=1) / 0.1, atol=1e-9)
        np.testing.assert_allclose(a[:, 1:-1], np.diff(v[:, 1:], axis=1) / 0.1, atol=1e-9)


class TestSpecs:
    @pytest.mark.parametrize("sport,seconds", [("soccer", 20), ("basketball", 20), ("football", 5)])
    def test_window_durations(self, sport, seconds):
        spec = DATASET_SPECS[sport]
        assert spec.window_frames * spec.dt == pytest.approx(seconds)

    def test_agent_counts(self):
        assert [DATASET_SPECS[s].n_agents for s in ("soccer", "basketball", "football")] == [22, 10, 6]


def canonical_frame(n_frames, n_agents, seq="m1", rng=None, ball=False):
    rng = rng or np.random.default_rng(0)
    p = random_walk(rng, n_agents, n_frames)
    rows = []
    for k in range(n_agents):
        for t in range(n_frames):
            rows.append((seq, t, f"p{k}", p[k, t, 0], p[k, t, 1]))
    if ball:
        for t in range(n_frames):
            rows.append((seq, t, "BALL", 52.5, 34.0))
    return pd.DataFrame(rows, columns=["sequence_id", "frame_idx", "agent_id", "x", "y"]), p


class TestIngest:
    def test_canonical_two_windows(self, tmp_path, soccer):
        df, p = canonical_frame(400, 22)
        path = tmp_path / "m.csv"
        df.to_csv(path, index=False)
        windows = list(ingest(path, soccer))
        assert len(windows) == 2
        assert all(w.n_frames == 200 and w.n_agents == 22 for w in windows)
        np.testing.assert_array_equal(windows[1].positions, p[:, 200:])

    def test_extra_agent_is_schema_error(self, tmp_path, soccer):
        df, _ = canonical_frame(200, 23)
        path = tmp_path / "m.csv"
        df.to_csv(path, index=False)
        with pytest.raises(SchemaError):
            list(ingest(path, soccer))

    def test_unknown_format(self, tmp_path, soccer):
        path = tmp_path / "x.txt"
        path.write_text("hello")
        with pytest.raises(FormatError):
            list(ingest(path, soccer))

    def test_gap_drops_window(self, tmp_path, soccer):
        df, _ = canonical_frame(400, 22)
        df = df[~((df.agent_id == "p3") & (df.frame_idx == 250))]
        path = tmp_path / "m.csv"
        df.to_csv(path, index=False)
        windows = list(ingest(path, soccer))
        assert [w.sequence_id for w in windows] == ["m1/0000"]

    def test_deterministic(self, tmp_path, soccer):
        df, _ = canonical_frame(600, 22, ball=True)
        path = tmp_path / "m.csv"
        df.to_csv(path, index=False)
        a = list(ingest(path, soccer))
        b = list(ingest(path, soccer))
        for wa, wb in zip(a, b):
            assert wa.sequence_id == wb.sequence_id
            np.testing.assert_array_equal(wa.positions, wb.positions)
            np.testing.assert_array_equal(wa.ball_positions, wb.ball_positions)

    def test_round_trip_through_csv(self, tmp_path, soccer, rng):
        w = make_window("s1", [f"p{k}" for k in range(22)], random_walk(rng, 22, 200), soccer,
                        ball_positions=np.full((200, 2), 30.0))
        path = tmp_path / "w.csv"
        write_windows_csv([w], path)
        (back,) = list(ingest(path, soccer))
        assert back.sequence_id == "s1" and back.agent_ids == w.agent_ids
        np.testing.assert_array_equal(back.positions, w.positions)
        np.testing.assert_array_equal(back.ball_positions, w.ball_positions)


def nearest_oracle(times, grid, tol=1e-9):
    out = []
    for g in grid:
        d = np.abs(times - g)
        out.append(int(np.flatnonzero(d <= d.min() + tol)[0]))
    return np.array(out)


class TestResampling:
    def test_25hz_to_10hz_single_window(self, soccer, rng):
        times = np.arange(500) / 25.0
        p = random_walk(rng, 22, 500, dt=0.04)
        track = Track("m", [f"p{k}" for k in range(22)], p, times=times)
        windows = list(windows_from_track(track, soccer))
        assert len(windows) == 1 and windows[0].n_frames == 200
        idx = nearest_oracle(times, times[0] + np.arange(200) / 10.0)
        np.testing.assert_array_equal(windows[0].positions, p[:, idx])
        # every 2.5th frame: 0, 2 or 3, 5, ...
        assert np.all(np.diff(idx) >= 2) and np.all(np.diff(idx) <= 3)

    def test_nearest_frames_matches_oracle(self, rng):
        times = np.cumsum(rng.uniform(0.03, 0.05, size=300))
        idx, ok = nearest_frames(times, 10.0)
        grid = times[0] + np.arange(len(idx)) / 10.0
        np.testing.assert_array_equal(idx, nearest_oracle(times, grid))
        assert ok.all()

    def test_source_gap_marks_ticks(self):
        times = np.concatenate([np.arange(100), np.arange(150, 300)]) / 25.0
        _, ok = nearest_frames(times, 10.0)
        assert not ok.all()
        assert ok[:35].all()


class TestNormalize:
    def test_center_and_corner(self):
        s = PitchScaler((105.0, 68.0))
        np.testing.assert_allclose(s.positions(np.array([52.5, 34.0])), [0.0, 0.0])
        np.testing.assert_allclose(s.positions(np.array([0.0, 0.0])), [-1.0, -1.0])

    def test_round_trip(self, soccer, rng):
        w = make_window("s", [str(k) for k in range(22)], random_walk(rng, 22, 200), soccer)
        back = denormalize(normalize(w))
        for name in ("positions", "velocities", "accelerations"):
            np.testing.assert_allclose(getattr(back, name), getattr(w, name), atol=1e-9)

    def test_same_scale_for_derivatives(self, soccer, rng):
        w = make_window("s", [str(k) for k in range(22)], random_walk(rng, 22, 200), soccer)
        n = normalize(w)
        scale = 2 / np.asarray(soccer.pitch_bounds)
        np.testing.assert_allclose(n.velocities, w.velocities * scale)
        np.testing.assert_allclose(n.accelerations, w.accelerations * scale)

    @pytest.mark.parametrize("bounds", [(0.0, 68.0), (105.0, -1.0), (np.nan, 68.0)])
    def test_degenerate_bounds(self, bounds):
        with pytest.raises(ValueError):
            PitchScaler(bounds)

    def test_check_window_bounds(self, soccer):
        p = np.full((22, 200, 2), 50.0)
        check_window(make_window("s", [str(k) for k in range(22)], p, soccer), soccer)
        p[0, 10] = (120.0, 30.0)
        with pytest.raises(InvalidWindowError):
            check_window(make_window("s", [str(k) for k in range(22)], p, soccer), soccer)


# ---------------------------------------------------------------------------
# format adapters on tiny synthetic files


def write_metrica(path, team, players, times, xy, ball):
    n = len(times)
    head1 = ["", "", ""] + sum([[team, ""] for _ in players], []) + ["", ""]
    head2 = ["", "", ""] + sum([[str(p), ""] for p in players], []) + ["", ""]
    head3 = ["Period", "Frame", "Time [s]"] + sum([[f"Player{p}", ""] for p in players], []) + ["Ball", ""]
    lines = [",".join(head1), ",".join(head2), ",".join(head3)]
    for i in range(n):
        vals = ["1", str(i + 1), f"{times[i]:.2f}"]
        for k in range(len(players)):
            vals += [repr(float(xy[k, i, 0])), repr(float(xy[k, i, 1]))]
        vals += [repr(float(ball[i, 0])), repr(float(ball[i, 1]))]
        lines.append(",".join(vals))
    path.write_text("\n".join(lines) + "\n")


def test_metrica_adapter(tmp_path, soccer, rng):
    times = np.arange(1, 501) / 25.0
    home = rng.uniform(0.1, 0.9, size=(11, 500, 2))
    away = rng.uniform(0.1, 0.9, size=(12, 500, 2))
    away[11] = np.nan  # unused substitute
    ball = rng.uniform(0.1, 0.9, size=(500, 2))
    write_metrica(tmp_path / "Sample_Game_1_RawTrackingData_Home_Team.csv", "Home", range(1, 12), times, home, ball)
    write_metrica(tmp_path / "Sample_Game_1_RawTrackingData_Away_Team.csv", "Away", range(15, 27), times, away, ball)
    windows = list(ingest(tmp_path / "Sample_Game_1_RawTrackingData_Home_Team.csv", soccer))
    assert len(windows) == 1
    w = windows[0]
    assert w.n_agents == 22 and w.n_frames == 200
    assert w.agent_ids[0] == "Home_1" and "Away_26" not in w.agent_ids
    idx = nearest_oracle(times, times[0] + np.arange(200) / 10.0)
    np.testing.assert_allclose(w.positions[0], home[0, idx] * [105.0, 68.0])
    np.testing.assert_allclose(w.ball_positions, ball[idx] * [105.0, 68.0])


def test_sportvu_adapter(tmp_path, rng):
    spec = DATASET_SPECS["basketball"]
    n = 520
    clock = 700.0 - np.arange(n) * 0.04
    players = [(1, 100 + k) if k < 5 else (2, 200 + k) for k in range(10)]
    xy = rng.uniform(5, 45, size=(10, n, 2))
    moments = []
    for i in range(n):
        ents = [[-1, -1, 47.0, 25.0, 5.0]]
        ents += [[team, pid, xy[k, i, 0], xy[k, i, 1], 0.0] for k, (team, pid) in enumerate(players)]
        moments.append([1, 1000 + 40 * i, round(clock[i], 2), 24.0, None, ents])
    game = {"gameid": "g1", "events": [{"eventId": "1", "moments": moments[:300]},
                                       {"eventId": "2", "moments": moments[250:]}]}
    path = tmp_path / "g1.json"
    path.write_text(json.dumps(game))
    windows = list(ingest(path, spec))
    assert len(windows) == 1
    w = windows[0]
    assert w.n_agents == 10 and w.n_frames == 200
    np.testing.assert_allclose(w.positions[0, 0], xy[0, 0] * 0.3048)
    np.testing.assert_allclose(w.ball_positions[0], [47.0 * 0.3048, 25.0 * 0.3048])


def test_nrtsi_adapter(tmp_path, rng):
    spec = DATASET_SPECS["football"]
    arr = rng.uniform(10, 50, size=(3, 50, 12))
    np.save(tmp_path / "football.npy", arr)
    windows = list(ingest(tmp_path / "football.npy", spec))
    assert len(windows) == 3 and windows[0].n_agents == 6 and windows[0].n_frames == 50
    np.testing.assert_allclose(windows[1].positions[2, 7], arr[1, 7, 4:6] * 0.9144)


def test_nrtsi_wrong_agent_count(tmp_path, rng):
    np.save(tmp_path / "f.npy", rng.uniform(size=(2, 50, 10)))
    with pytest.raises(SchemaError):
        list(ingest(tmp_path / "f.npy", DATASET_SPECS["football"]))


def test_read_tracks_rejects_unknown_format(tmp_path, soccer):
    with pytest.raises(FormatError):
        list(read_tracks(tmp_path / "f.csv", soccer, fmt="parquet"))
