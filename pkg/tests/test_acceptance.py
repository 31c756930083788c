"""End-to-end acceptance checks; a pass/fail line per criterion is printed in the summary."""

import json
import math
import shutil
import socket
import struct
import subprocess
import sys
import time
import xml.etree.ElementTree as ET

import numpy as np
import pytest

from mio import dataset, evaluation, se3, world
from mio import model as M
from mio.imaging import ImagingConfig, pixel_center, pixel_indices, project
from mio.pipeline import PipelineConfig, run_pipeline, synchronize
from mio.se3 import PoseSE3, SixDof
from mio.wire import PoseMessage, PoseSink, decode_pose, encode_pose
from mio.world import RadarScan, SensorNoiseConfig

from conftest import random_pose

N_CASES = 1000
PLAN = world.two_bed_apartment()


def criterion(n, title):
    return pytest.mark.criterion(n, title)


@pytest.fixture(scope="module")
def held_out():
    """60 s search walk; its script and noise seed are used by no training sequence."""
    return world.simulate_sequence(PLAN, world.search_script(60.0), SensorNoiseConfig(rng_seed=999))


@pytest.fixture(scope="module")
def fusion_model():
    scripts = [world.random_walk_script(PLAN, 60.0, seed) for seed in range(8)]
    train_set = dataset.simulate_dataset(PLAN, scripts, SensorNoiseConfig(rng_seed=100))
    cfg = M.TrainingConfig(learning_rate=0.002, epochs=20, batch_size=8, rng_seed=0)
    return M.train(train_set, cfg).params


@criterion(1, "gradient correctness vs central differences (5 seeds, rel. err <= 1e-4)")
def test_gradient_correctness(record_property):
    start = time.perf_counter()
    worst = 0.0
    for seed in range(5):
        rng = np.random.default_rng(seed)
        params = M.ModelParams.init(M.ModelConfig(), seed)
        B, T, L = 2, 3, 12
        batch = M.Batch(rng.random((B, T, 2, 16, 64)), rng.normal(size=(B, T, L, 6)),
                        rng.integers(1, L + 1, (B, T)), 0.1 * rng.normal(size=(B, T, 6)), np.ones((B, T)))
        report = M.check_gradients(params, batch, 0.5 * rng.normal(size=(B, 64)), seed=seed, step=1e-5)
        assert set(params.names()) <= set(report)
        worst = max(worst, max(report.values()))
    elapsed = time.perf_counter() - start
    record_property("max_rel_err", f"{worst:.2e}")
    record_property("seconds", f"{elapsed:.1f}")
    assert worst <= 1e-4
    assert elapsed < 120


@criterion(2, "overfit 100 frame pairs to <= 5% of epoch-1 loss within 500 epochs")
def test_overfit_sanity(record_property):
    rec = world.simulate_sequence(PLAN, world.random_walk_script(PLAN, 10.1, 42), SensorNoiseConfig(rng_seed=42))
    seq = dataset.sequence_data(rec)
    assert len(seq) == 100
    cfg = M.TrainingConfig(learning_rate=0.002, epochs=300, batch_size=1, rng_seed=0)
    start = time.perf_counter()
    res = M.train([seq], cfg)
    elapsed = time.perf_counter() - start
    ratio = res.losses[-1] / res.losses[0]
    record_property("final/initial", f"{ratio:.4f}")
    record_property("seconds", f"{elapsed:.1f}")
    assert ratio <= 0.05
    assert elapsed < 300
    # same seed, same curve
    again = M.train([seq], M.TrainingConfig(learning_rate=0.002, epochs=5, batch_size=1, rng_seed=0))
    assert again.losses == res.losses[:5]


@criterion(3, "fused ATE < 50% of IMU dead-reckoning ATE (> 1 m) on a held-out 60 s walk")
def test_fusion_benefit(fusion_model, held_out, record_property):
    est = run_pipeline(held_out, fusion_model, PipelineConfig(origin=held_out.truth.poses[0])).trajectory
    fused = evaluation.ate(est, held_out.truth).rmse
    baseline = evaluation.ate(evaluation.imu_dead_reckoning(held_out.imu, held_out.truth.poses[0]),
                              held_out.truth).rmse
    record_property("fused_ate_m", f"{fused:.3f}")
    record_property("baseline_ate_m", f"{baseline:.1f}")
    assert baseline > 1.0
    assert fused < 0.5 * baseline


@criterion(4, "offline pipeline >= 10 FPS over 600 frames with 0 drops")
def test_throughput(fusion_model, held_out, record_property):
    assert len(held_out.scans) == 600
    res = run_pipeline(held_out, fusion_model, PipelineConfig())
    s = res.stats
    record_property("fps", f"{s.fps:.1f}")
    record_property("dropped", s.dropped)
    assert s.processed == 599 and len(res.trajectory) == 600
    assert s.dropped == 0
    assert s.fps >= 10.0


@criterion(5, "default simulator point rate within 10% of 1000 points/s over 60 s")
def test_point_rate(held_out, record_property):
    duration = len(held_out.scans) / held_out.meta["radar_rate"]
    rate = sum(len(s) for s in held_out.scans) / duration
    record_property("points_per_s", f"{rate:.0f}")
    assert abs(rate - 1000.0) <= 100.0


@criterion(6, "SE(3) associativity, inverse, norm and 6-DoF round trip at 1e-9 (1000 cases each)")
def test_se3_suite(record_property):
    rng = np.random.default_rng(6)
    ident = np.eye(4)
    worst = {"assoc": 0.0, "inverse": 0.0, "norm": 0.0, "round_trip": 0.0}
    for _ in range(N_CASES):
        a, b, c = random_pose(rng), random_pose(rng), random_pose(rng)
        left = se3.compose(se3.compose(a, b), c).matrix()
        right = se3.compose(a, se3.compose(b, c)).matrix()
        worst["assoc"] = max(worst["assoc"], np.abs(left - right).max())
        for m in (se3.compose(a, se3.invert(a)), se3.compose(se3.invert(a), a)):
            worst["inverse"] = max(worst["inverse"], np.abs(m.matrix() - ident).max())
    for _ in range(N_CASES):
        p = random_pose(rng, 1.0)
        steps = [random_pose(rng, 1.0) for _ in range(10)]
        for s in steps:
            p = se3.invert(se3.compose(p, s))
            worst["norm"] = max(worst["norm"], abs(np.linalg.norm(p.rotation) - 1.0))
    done = 0
    while done < N_CASES:
        d = SixDof(tuple(rng.uniform(-5, 5, 3)),
                   (rng.uniform(-math.pi, math.pi), rng.uniform(-1.55, 1.55), rng.uniform(-math.pi, math.pi)))
        p = se3.pose_from_6dof(d)
        back = se3.pose_from_6dof(se3.sixdof_from_pose(p))
        worst["round_trip"] = max(worst["round_trip"], np.abs(back.matrix() - p.matrix()).max())
        done += 1
    for k, v in worst.items():
        record_property(k, f"{v:.1e}")
    assert all(v <= 1e-9 for v in worst.values())


@criterion(7, "projection: half-bin round trip, min-range rule, permutation invariance, FOV exclusion (1000 scans)")
def test_projection_suite():
    cfg = ImagingConfig()
    rng = np.random.default_rng(7)
    half_az = cfg.azimuth_fov / cfg.width / 2
    half_el = cfg.elevation_fov / cfg.height / 2
    for _ in range(N_CASES):
        n = int(rng.integers(0, 120))
        r = rng.uniform(0.05, 10.0, n)
        az = rng.uniform(-1.6, 1.6, n)
        el = rng.uniform(-0.5, 0.5, n)
        pts = np.stack([r * np.cos(el) * np.cos(az), r * np.cos(el) * np.sin(az), r * np.sin(el), np.zeros(n)], 1)
        img = project(RadarScan(0.0, pts), cfg).data
        row, col, rr, inside = pixel_indices(pts, cfg)

        # min-range rule and exact range recovery for every populated pixel
        expected = np.zeros_like(img)
        for i in np.flatnonzero(inside):
            v = 1 - rr[i] / cfg.max_range
            expected[row[i], col[i]] = max(expected[row[i], col[i]], v)
        np.testing.assert_allclose(img, expected, atol=1e-12)
        for i in np.flatnonzero(inside):
            assert (1 - img[row[i], col[i]]) * cfg.max_range <= rr[i] + 1e-12
            a_c, e_c = pixel_center(row[i], col[i], cfg)
            assert abs(az[i] - a_c) <= half_az + 1e-12 and abs(el[i] - e_c) <= half_el + 1e-12

        perm = project(RadarScan(0.0, pts[rng.permutation(n)]), cfg).data
        np.testing.assert_array_equal(perm, img)

        kept = project(RadarScan(0.0, pts[inside]), cfg).data
        np.testing.assert_array_equal(kept, img)


@criterion(8, "sync windows exactly partition the IMU stream over 600 frames")
def test_sync_partition(held_out):
    frames = list(synchronize(held_out.scans, held_out.imu))
    assert len(frames) == 599
    t_first, t_last = held_out.scans[0].timestamp, held_out.scans[-1].timestamp
    got = [id(s) for f in frames for s in f.imu_window]
    want = [id(s) for s in held_out.imu if t_first < s.timestamp <= t_last]
    assert len(got) == len(set(got))
    assert got == want
    for f in frames:
        assert all(f.t_prev < s.timestamp <= f.t_curr for s in f.imu_window)


def _bits(m):
    return m.seq, struct.pack("<d3d4d", m.timestamp, *m.translation, *m.rotation)


@criterion(9, "wire codec bit-exact, 70-byte frames, collector survives malformed input")
def test_wire_codec(tmp_path):
    rng = np.random.default_rng(9)
    for _ in range(N_CASES):
        q = rng.normal(size=4)
        m = PoseMessage(int(rng.integers(0, 2 ** 32)), float(rng.normal() * 1e6), tuple(rng.normal(size=3) * 1e3),
                        tuple(q / np.linalg.norm(q)))
        frame = encode_pose(m)
        assert len(frame) == 70
        assert _bits(decode_pose(frame)) == _bits(m)
    for v in (0.0, -0.0, sys.float_info.max, -sys.float_info.max, 5e-324, -5e-324, 2.2250738585072014e-308):
        for seq in (0, 2 ** 32 - 1):
            m = PoseMessage(seq, v, (v, v, -v), (0.0, 1.0, 0.0, 0.0))
            assert _bits(decode_pose(encode_pose(m))) == _bits(m)

    with PoseSink(("127.0.0.1", 0), tmp_path) as sink:
        good = socket.create_connection(sink.address)
        for k in range(50):
            good.sendall(encode_pose(PoseMessage(k, float(k), (k, 0, 0), (1, 0, 0, 0))))
        bad = socket.create_connection(sink.address)
        bad.sendall(b"garbage!" * 20)
        bad.settimeout(5)
        assert bad.recv(1) == b""
        bad.close()
        for k in range(50, 100):
            good.sendall(encode_pose(PoseMessage(k, float(k), (k, 0, 0), (1, 0, 0, 0))))
        good.close()
        late = socket.create_connection(sink.address)
        late.sendall(encode_pose(PoseMessage(0, 0.0, (0, 0, 0), (1, 0, 0, 0))))
        late.close()
        deadline = time.monotonic() + 5
        while len(sink.connections) < 3 and time.monotonic() < deadline:
            time.sleep(0.01)
    counts = sorted(n for _, n in sink.connections.values())
    assert counts == [0, 1, 100]
    assert sink.errors == 1


@criterion(10, "mio eval SVG: dashed red truth, solid blue estimate")
def test_eval_figure(tmp_path, fusion_model, held_out):
    est = run_pipeline(held_out, fusion_model, PipelineConfig()).trajectory
    est.to_csv(tmp_path / "est.csv")
    seq = tmp_path / "seq"
    world.write_sequence(held_out, seq)
    exe = shutil.which("mio")
    cmd = [exe] if exe else [sys.executable, "-m", "mio.cli"]
    proc = subprocess.run(cmd + ["eval", "--est", str(tmp_path / "est.csv"), "--truth", str(seq / "truth.csv"),
                                 "--imu", str(seq), "--out", str(tmp_path / "report")],
                          capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    ns = "{http://www.w3.org/2000/svg}"
    root = ET.parse(tmp_path / "report" / "trajectory.svg").getroot()
    lines = {el.get("id"): el for el in root.iter(f"{ns}polyline")}
    assert len(root.findall(f".//{ns}polyline")) == 3
    truth, estimate = lines["truth"], lines["estimate"]
    assert truth.get("stroke").lower() in ("#d62728", "#ff0000", "red")
    assert truth.get("stroke-dasharray")
    assert estimate.get("stroke").lower() in ("#1f77b4", "#0000ff", "blue")
    assert estimate.get("stroke-dasharray") in (None, "none")
    assert len(truth.get("points").split()) == len(held_out.truth)
    assert len(estimate.get("points").split()) == len(est)
    metrics = json.loads((tmp_path / "report" / "metrics.json").read_text())
    assert set(metrics) == {"ate", "rpe", "baseline"}
