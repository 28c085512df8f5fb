import json
from pathlib import Path

import numpy as np
import pytest

from duotrack.bench import bench_planted, fit_power_law, planted_linear, planted_quadratic
from duotrack.config import RunConfig, load_config
from duotrack.metrics import eval_metrics, iou
from duotrack.model import init_model
from duotrack.report import dump_maps, quantize_map, write_router_trace
from duotrack.synth import (
    crop_resize,
    gen_sequence,
    load_frame,
    load_sequence,
    read_pgm,
    read_ppm,
    write_pgm,
    write_ppm,
)
from duotrack.tensor import Tensor
from duotrack.tracker import run_tracker
from duotrack.weights import (
    WeightFormatError,
    checksum_file,
    checksum_tensors,
    load_model,
    load_weights,
    save_model,
    save_weights,
)


@pytest.fixture
def rng():
    return np.random.default_rng(9)


def tiny_config(**kw):
    """A deliberately small profile to keep harness tests fast."""
    base = dict(
        patch_size=8,
        embed_dim=16,
        depth=2,
        heads=2,
        template_side=16,
        search_side=32,
        mfi_layers=[1],
        state_dim=4,
        experts_k=2,
        compress_ratio=8,
        mamba_layers=1,
        head_depth=1,
    )
    base.update(kw)
    return RunConfig(**base)


class TestConfig:
    def test_toy_defaults_match_contract(self):
        cfg = RunConfig.toy()
        assert (cfg.patch_size, cfg.embed_dim, cfg.depth, cfg.heads) == (8, 64, 4, 2)
        assert (cfg.template_side, cfg.search_side) == (32, 64)
        assert (cfg.state_dim, cfg.experts_k, cfg.cue_count) == (8, 3, 1)
        assert cfg.mfi_layers == [2, 3]
        assert cfg.offset_magnitude == 5.0

    def test_paper_profile(self):
        cfg = RunConfig.paper()
        assert (cfg.patch_size, cfg.embed_dim, cfg.depth) == (16, 768, 12)
        assert cfg.mfi_layers == [4, 7, 10]
        assert (cfg.template_side, cfg.search_side) == (128, 256)
        assert (cfg.state_dim, cfg.experts_k, cfg.cue_count) == (16, 6, 1)
        assert cfg.compress_ratio == 8 and cfg.mamba_layers == 2

    def test_json_round_trip(self, tmp_path):
        cfg = tiny_config(seed=17)
        path = tmp_path / "c.json"
        cfg.save(path)
        again = load_config(path)
        assert again == cfg

    def test_unknown_key_is_hard_error(self, tmp_path):
        path = tmp_path / "c.json"
        raw = json.loads(RunConfig.toy().to_json())
        raw["patchsize"] = 8
        path.write_text(json.dumps(raw))
        with pytest.raises(ValueError, match="patchsize"):
            load_config(path)

    def test_invalid_values_rejected(self):
        with pytest.raises(ValueError):
            RunConfig(profile="huge")
        with pytest.raises(ValueError):
            RunConfig(compress_ratio=7)


class TestNetpbm:
    def test_ppm_round_trip(self, tmp_path, rng):
        img = rng.integers(0, 256, size=(10, 14, 3), dtype=np.uint8)
        write_ppm(tmp_path / "a.ppm", img)
        assert np.array_equal(read_ppm(tmp_path / "a.ppm"), img)

    def test_pgm_round_trip(self, tmp_path, rng):
        img = rng.integers(0, 256, size=(7, 9), dtype=np.uint8)
        write_pgm(tmp_path / "a.pgm", img)
        assert np.array_equal(read_pgm(tmp_path / "a.pgm"), img)

    def test_bad_magic(self, tmp_path):
        (tmp_path / "bad.ppm").write_bytes(b"P3\n1 1\n255\n0 0 0\n")
        with pytest.raises(ValueError, match="P6"):
            read_ppm(tmp_path / "bad.ppm")


class TestGenSequence:
    def test_same_seed_bit_identical(self, tmp_path):
        a = gen_sequence(seed=5, frames=4, out_dir=tmp_path / "a")
        b = gen_sequence(seed=5, frames=4, out_dir=tmp_path / "b")
        for t in range(1, 5):
            assert a.rgb_path(t).read_bytes() == (b.root / f"{t:04d}_rgb.ppm").read_bytes()
            assert a.tir_path(t).read_bytes() == (b.root / f"{t:04d}_tir.pgm").read_bytes()
        assert np.array_equal(a.boxes, b.boxes)

    def test_zero_misalignment_centers_coincide(self, tmp_path):
        rec = gen_sequence(seed=3, frames=5, out_dir=tmp_path / "s", misalignment_px=0.0)
        assert np.abs(rec.shifts).max() == 0.0
        # the TIR hot blob sits exactly on the RGB target center
        for t in (1, 3, 5):
            tir = read_pgm(rec.tir_path(t)).astype(float)
            x, y, w, h = rec.boxes[t - 1]
            peak = np.unravel_index(np.argmax(tir), tir.shape)
            assert abs(peak[0] - (y + h / 2)) <= 1.5
            assert abs(peak[1] - (x + w / 2)) <= 1.5

    def test_consecutive_iou_positive(self, tmp_path):
        rec = gen_sequence(seed=8, frames=12, out_dir=tmp_path / "s")
        for t in range(11):
            assert iou(rec.boxes[t], rec.boxes[t + 1]) > 0

    def test_boxes_inside_frame(self, tmp_path):
        rec = gen_sequence(seed=2, frames=30, out_dir=tmp_path / "s")
        for x, y, w, h in rec.boxes:
            assert 0 <= x and 0 <= y
            assert x + w <= rec.frame_side and y + h <= rec.frame_side

    def test_load_round_trip(self, tmp_path):
        rec = gen_sequence(seed=1, frames=3, out_dir=tmp_path / "s")
        loaded = load_sequence(tmp_path / "s")
        assert loaded.n_frames == 3
        np.testing.assert_array_equal(loaded.boxes, rec.boxes)
        rgb, tir = load_frame(loaded, 2)
        assert rgb.shape == (3, rec.frame_side, rec.frame_side)
        assert tir.shape == (3, rec.frame_side, rec.frame_side)
        assert 0.0 <= rgb.min() and rgb.max() <= 1.0

    def test_too_few_frames(self, tmp_path):
        with pytest.raises(ValueError):
            gen_sequence(seed=0, frames=1, out_dir=tmp_path / "s")


class TestCropResize:
    def test_identity_crop(self, rng):
        img = rng.standard_normal((3, 16, 16))
        out = crop_resize(img, (7.5, 7.5), 16.0, 16)
        np.testing.assert_allclose(out, img, atol=1e-12)

    def test_border_replication(self, rng):
        img = rng.standard_normal((1, 8, 8))
        out = crop_resize(img, (0.0, 0.0), 8.0, 8)
        assert np.isfinite(out).all()


class TestWeights:
    def test_round_trip_bit_exact(self, tmp_path, rng):
        named = {
            "a.w": Tensor(rng.standard_normal((3, 4)).astype(np.float32)),
            "b.bias": Tensor(rng.standard_normal(7)),
            "scalar": Tensor(np.float64(3.25)),
        }
        path = tmp_path / "w.cadw"
        save_weights(path, named)
        loaded = load_weights(path)
        assert list(loaded) == list(named)
        for k in named:
            assert np.array_equal(loaded[k], named[k].data)
            assert loaded[k].dtype == named[k].data.dtype

    def test_save_load_save_idempotent(self, tmp_path, rng):
        named = {"x": Tensor(rng.standard_normal((5, 5)).astype(np.float32))}
        p1, p2 = tmp_path / "1.cadw", tmp_path / "2.cadw"
        save_weights(p1, named)
        save_weights(p2, {k: Tensor(v) for k, v in load_weights(p1).items()})
        assert p1.read_bytes() == p2.read_bytes()

    def test_magic_check(self, tmp_path):
        path = tmp_path / "bad.cadw"
        path.write_bytes(b"NOPE" + b"\x00" * 16)
        with pytest.raises(WeightFormatError, match="magic"):
            load_weights(path)

    def test_truncation_detected(self, tmp_path, rng):
        path = tmp_path / "w.cadw"
        save_weights(path, {"x": Tensor(rng.standard_normal((4, 4)))})
        blob = path.read_bytes()
        path.write_bytes(blob[:-9])
        with pytest.raises(WeightFormatError, match="truncated"):
            load_weights(path)

    def test_duplicate_names_rejected(self, tmp_path, rng):
        path = tmp_path / "w.cadw"
        save_weights(path, {"x": Tensor(np.zeros(2))})
        blob = bytearray(path.read_bytes())
        # duplicate the tensor record and bump the count to 2
        record = blob[12:]
        blob[8:12] = (2).to_bytes(4, "little")
        blob.extend(record)
        path.write_bytes(bytes(blob))
        with pytest.raises(WeightFormatError, match="duplicate"):
            load_weights(path)

    def test_checksum_matches_streaming(self, tmp_path, rng):
        named = {f"t{i}": Tensor(rng.standard_normal((i + 1, 3))) for i in range(4)}
        path = tmp_path / "w.cadw"
        save_weights(path, named)
        assert checksum_file(path) == checksum_tensors(named)

    def test_model_round_trip_both_profiles(self, tmp_path):
        # toy-sized stand-ins for both profiles; geometry differs, format identical
        for name, cfg in (("toy", tiny_config()), ("paper_like", tiny_config(depth=3, mfi_layers=[1, 2]))):
            params = init_model(cfg, seed=1)
            path = tmp_path / f"{name}.cadw"
            save_model(path, params)
            fresh = init_model(cfg, seed=2)
            load_model(path, fresh)
            from duotrack.init import walk_params

            orig = dict(walk_params(params))
            again = dict(walk_params(fresh))
            assert set(orig) == set(again)
            for k in orig:
                assert np.array_equal(orig[k].data, again[k].data), k

    def test_load_into_wrong_shape(self, tmp_path):
        cfg_a, cfg_b = tiny_config(), tiny_config(embed_dim=32)
        path = tmp_path / "w.cadw"
        save_model(path, init_model(cfg_a))
        with pytest.raises(WeightFormatError):
            load_model(path, init_model(cfg_b))


class TestMetrics:
    def test_perfect_prediction(self):
        boxes = [np.array([3, 4, 10, 12])] * 5
        m = eval_metrics(boxes, boxes)
        assert m["mean_iou"] == 1.0 and m["pr20"] == 1.0 and m["sr_auc"] == 1.0

    def test_known_iou_third(self):
        assert np.isclose(iou((0, 0, 2, 2), (1, 0, 2, 2)), 1.0 / 3.0)

    def test_per_frame_oracle(self, rng):
        pred = [rng.uniform(0, 40, size=4) + [0, 0, 5, 5] for _ in range(25)]
        gt = [rng.uniform(0, 40, size=4) + [0, 0, 5, 5] for _ in range(25)]
        m = eval_metrics(pred, gt)
        ious = []
        dists = []
        for p, g in zip(pred, gt):
            ax1, ay1, ax2, ay2 = p[0], p[1], p[0] + p[2], p[1] + p[3]
            bx1, by1, bx2, by2 = g[0], g[1], g[0] + g[2], g[1] + g[3]
            iw = max(0, min(ax2, bx2) - max(ax1, bx1))
            ih = max(0, min(ay2, by2) - max(ay1, by1))
            inter = iw * ih
            union = p[2] * p[3] + g[2] * g[3] - inter
            ious.append(inter / union)
            dists.append(np.hypot((ax1 + ax2) / 2 - (bx1 + bx2) / 2, (ay1 + ay2) / 2 - (by1 + by2) / 2))
        assert np.isclose(m["mean_iou"], np.mean(ious))
        assert np.isclose(m["pr20"], np.mean(np.array(dists) <= 20))
        thresholds = np.arange(21) * 0.05
        sr = np.mean([(np.array(ious) >= t).mean() for t in thresholds])
        assert np.isclose(m["sr_auc"], sr)

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            eval_metrics([], [])


class TestTracker:
    def test_first_frame_is_ground_truth(self, tmp_path):
        cfg = tiny_config()
        seq = gen_sequence(seed=4, frames=3, out_dir=tmp_path / "s", frame_side=64)
        params = init_model(cfg)
        boxes, diags = run_tracker(cfg, params, seq)
        np.testing.assert_array_equal(boxes[0].as_array(), seq.boxes[0])
        assert diags[0]["initialized"]
        assert len(boxes) == 3

    def test_dynamic_template_frozen_when_disabled(self, tmp_path):
        cfg = tiny_config(update_interval=0)
        seq = gen_sequence(seed=4, frames=4, out_dir=tmp_path / "s", frame_side=64)
        params = init_model(cfg)
        from duotrack import tracker as trk

        state = trk.init_tracker(params, cfg, seq)
        z0_bits = state.z0[0].data.copy()
        boxes, _ = run_tracker(cfg, params, seq)
        assert np.array_equal(state.z0[0].data, z0_bits)  # untouched by the run

    def test_cue_changes_with_nonzero_propagation(self, tmp_path, rng):
        cfg = tiny_config()
        seq = gen_sequence(seed=4, frames=4, out_dir=tmp_path / "s", frame_side=64)
        params = init_model(cfg)
        params.dam.prop_attn.wo.data = rng.standard_normal(params.dam.prop_attn.wo.data.shape).astype(
            params.dam.prop_attn.wo.data.dtype
        ) * 0.1
        _, diags = run_tracker(cfg, params, seq)
        norms = [d["cue_norm_r"] for d in diags if "cue_norm_r" in d]
        base = float(np.linalg.norm(params.dam.cue_init_r.data))
        assert any(abs(n - base) > 1e-9 for n in norms)

    def test_determinism_bit_identical(self, tmp_path):
        cfg = tiny_config()
        seq = gen_sequence(seed=4, frames=5, out_dir=tmp_path / "s", frame_side=64)
        out = []
        for _ in range(2):
            params = init_model(cfg)
            boxes, _ = run_tracker(cfg, params, seq)
            out.append(np.array([b.as_array() for b in boxes]))
        assert np.array_equal(out[0], out[1])


class TestBenchFit:
    def test_planted_quadratic(self):
        res = bench_planted(planted_quadratic, [256, 512, 1024, 2048, 4096])
        assert res.exponent >= 1.7, res.medians

    def test_planted_linear(self):
        res = bench_planted(planted_linear, [4096, 8192, 16384, 32768, 65536])
        assert res.exponent <= 1.3, res.medians

    def test_fit_exact_powers(self):
        ns = [128, 256, 512, 1024]
        assert np.isclose(fit_power_law(ns, [n**2 * 1e-9 for n in ns]), 2.0)
        assert np.isclose(fit_power_law(ns, [n * 1e-7 for n in ns]), 1.0)


class TestDumps:
    def _tracked_entry(self, tmp_path):
        cfg = tiny_config()
        seq = gen_sequence(seed=4, frames=3, out_dir=tmp_path / "s", frame_side=64)
        params = init_model(cfg)
        _, diags = run_tracker(cfg, params, seq, keep_frames=(2,))
        return cfg, next(d for d in diags if d["frame"] == 2)

    def test_dump_files_and_quantization(self, tmp_path):
        cfg, entry = self._tracked_entry(tmp_path)
        files = dump_maps(entry, tmp_path / "maps", cfg.backbone().search_grid)
        names = {f.name for f in files}
        assert "frame0002_score.pgm" in names
        assert "frame0002_router.csv" in names
        grid = cfg.backbone().search_grid
        pgm = read_pgm(tmp_path / "maps" / "frame0002_score.pgm")
        assert pgm.shape == (grid, grid)
        # re-read within 1/255 of the in-memory map, extrema at the same cell
        back = pgm.astype(np.float64) / 255.0
        assert np.abs(back - entry["score_map"]).max() <= 1.0 / 255.0 + 1e-12
        assert np.argmax(pgm) == np.argmax(entry["score_map"])

    def test_quantize_map_range(self, rng):
        q = quantize_map(rng.standard_normal((5, 5)), normalize=True)
        assert q.dtype == np.uint8 and q.min() == 0 and q.max() == 255

    def test_router_trace(self, tmp_path):
        cfg, entry = self._tracked_entry(tmp_path)
        write_router_trace(tmp_path / "trace.csv", [entry])
        lines = (tmp_path / "trace.csv").read_text().splitlines()
        assert lines[0] == "frame,modality,selected_layers"
        assert len(lines) == 3
