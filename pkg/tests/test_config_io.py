"""Config text format, binary loaders, checkpoints, metrics files, CLI."""

import json
import struct
import zlib

import numpy as np
import pytest

from latentreplay.checkpoint import load_checkpoint, save_checkpoint
from latentreplay.cli import main
from latentreplay.config import KEYS, RunConfig, parse_config, serialize_config
from latentreplay.datasets import gen_synthetic, load_cifar_bin, load_dataset, load_idx
from latentreplay.engine import build_task_stream, initialize, run_stream
from latentreplay.errors import CheckpointError, ConfigError, DataError
from latentreplay.metrics import MetricRecord, aoc
from latentreplay.reporting import BUDGET_TABLE, emit_metrics, membudget_lines, read_metrics
from latentreplay.reservoir import memory_bytes


class TestParseConfig:
    def test_empty_text_gives_defaults(self):
        assert parse_config("") == RunConfig()

    def test_comments_and_blanks_ignored(self):
        cfg = parse_config("# a comment\n\nseed = 3  # trailing\n")
        assert cfg.seed == 3

    def test_unknown_key_names_key_and_line(self):
        with pytest.raises(ConfigError, match=r"line 2.*'pq\.banana'"):
            parse_config("seed = 1\npq.banana = 2\n")

    def test_type_error_names_key_and_line(self):
        with pytest.raises(ConfigError, match=r"line 1.*seed.*integer"):
            parse_config("seed = abc\n")

    def test_missing_equals_rejected(self):
        with pytest.raises(ConfigError, match="line 1"):
            parse_config("just some words\n")

    def test_divisibility_error_names_both_keys(self):
        with pytest.raises(ConfigError) as exc:
            parse_config("pq.s = 8\nacae.latent_channels = 10\n")
        msg = str(exc.value)
        assert "pq.s" in msg and "acae.latent_channels" in msg

    def test_split_constraint_checked(self):
        with pytest.raises(ConfigError, match="split.steps"):
            parse_config("split.steps = 3\n")  # 8 leftover classes, not divisible

    def test_crop_range_constraint(self):
        with pytest.raises(ConfigError, match="crop"):
            parse_config("online.crop_min_area = 0.9\nonline.crop_max_area = 0.5\n")

    def test_latent_must_fit_replay_block(self):
        with pytest.raises(ConfigError, match="latent_channels"):
            parse_config("acae.latent_channels = 16\n")  # replay block has 16 channels

    def test_every_field_reachable_from_a_key(self):
        from dataclasses import fields

        covered = {field for field, _ in KEYS.values()}
        assert covered == {f.name for f in fields(RunConfig)}

    def test_round_trip_is_semantically_idempotent(self):
        text = (
            "seed = 9\nnet.channels = 4, 8, 16\nacae.latent_channels = 4\n"
            "offline.augment = false\npq.k = 64\n"
        )
        once = parse_config(text)
        again = parse_config(serialize_config(once))
        assert once == again
        assert serialize_config(once) == serialize_config(again)

    def test_tuple_and_bool_parsing(self):
        cfg = parse_config("net.in_shape = 3, 32, 32\nonline.augment = off\n")
        assert cfg.net_in_shape == (3, 32, 32)
        assert cfg.online_augment is False


def idx_bytes(dtype_code, dims, payload):
    head = bytes([0, 0, dtype_code, len(dims)])
    head += b"".join(struct.pack(">I", d) for d in dims)
    return head + payload


class TestLoadIdx:
    def test_hand_built_pair_round_trips(self, tmp_path):
        images = idx_bytes(0x08, (2, 3, 4), bytes(range(24)))
        labels = idx_bytes(0x08, (2,), bytes([5, 1]))
        ip, lp = tmp_path / "im.idx", tmp_path / "lb.idx"
        ip.write_bytes(images)
        lp.write_bytes(labels)
        x, y = load_idx(str(ip), str(lp))
        assert x.shape == (2, 1, 3, 4) and x.dtype == np.float32
        assert y.tolist() == [5, 1]

    def test_payload_byte_lands_at_documented_position(self, tmp_path):
        # row-major: byte i -> image i//12, row (i%12)//4, col i%4
        ip, lp = tmp_path / "im.idx", tmp_path / "lb.idx"
        ip.write_bytes(idx_bytes(0x08, (2, 3, 4), bytes(range(24))))
        lp.write_bytes(idx_bytes(0x08, (2,), bytes(2)))
        x, _ = load_idx(str(ip), str(lp))
        for i in (0, 5, 11, 12, 23):
            n, r, c = i // 12, (i % 12) // 4, i % 4
            assert x[n, 0, r, c] == np.float32(i / 255.0)

    def test_values_scaled_to_unit_interval(self, tmp_path):
        ip, lp = tmp_path / "im.idx", tmp_path / "lb.idx"
        ip.write_bytes(idx_bytes(0x08, (1, 2, 2), bytes([0, 255, 128, 64])))
        lp.write_bytes(idx_bytes(0x08, (1,), bytes(1)))
        x, _ = load_idx(str(ip), str(lp))
        assert x.min() == 0.0 and x.max() == 1.0

    def test_wrong_magic_rejected(self, tmp_path):
        p = tmp_path / "bad.idx"
        p.write_bytes(b"\x01\x00\x08\x01" + struct.pack(">I", 1) + b"\x00")
        with pytest.raises(DataError, match="magic"):
            load_idx(str(p), str(p))

    def test_truncated_payload_rejected(self, tmp_path):
        p = tmp_path / "short.idx"
        p.write_bytes(idx_bytes(0x08, (2, 3, 4), bytes(10)))
        lp = tmp_path / "lb.idx"
        lp.write_bytes(idx_bytes(0x08, (2,), bytes(2)))
        with pytest.raises(DataError, match="truncated"):
            load_idx(str(p), str(lp))

    def test_trailing_bytes_rejected(self, tmp_path):
        p = tmp_path / "long.idx"
        p.write_bytes(idx_bytes(0x08, (1, 2, 2), bytes(4)) + b"junk")
        lp = tmp_path / "lb.idx"
        lp.write_bytes(idx_bytes(0x08, (1,), bytes(1)))
        with pytest.raises(DataError, match="trailing"):
            load_idx(str(p), str(lp))

    def test_label_count_mismatch_rejected(self, tmp_path):
        ip, lp = tmp_path / "im.idx", tmp_path / "lb.idx"
        ip.write_bytes(idx_bytes(0x08, (2, 2, 2), bytes(8)))
        lp.write_bytes(idx_bytes(0x08, (3,), bytes(3)))
        with pytest.raises(DataError, match="count"):
            load_idx(str(ip), str(lp))

    def test_unknown_dtype_code_rejected(self, tmp_path):
        p = tmp_path / "odd.idx"
        p.write_bytes(idx_bytes(0x05, (1,), bytes(1)))
        with pytest.raises(DataError, match="dtype"):
            load_idx(str(p), str(p))

    def test_big_endian_dims_honored(self, tmp_path):
        # dimension 256 encodes as 00 00 01 00; a little-endian reader
        # would see 65536 and fail
        ip, lp = tmp_path / "im.idx", tmp_path / "lb.idx"
        ip.write_bytes(idx_bytes(0x08, (1, 1, 256), bytes(256)))
        lp.write_bytes(idx_bytes(0x08, (1,), bytes(1)))
        x, _ = load_idx(str(ip), str(lp))
        assert x.shape == (1, 1, 1, 256)


class TestLoadCifarBin:
    def test_two_record_file(self, tmp_path):
        rec0 = bytes([7]) + bytes([10] * 1024) + bytes([20] * 1024) + bytes([30] * 1024)
        rec1 = bytes([2]) + bytes(3072)
        p = tmp_path / "data.bin"
        p.write_bytes(rec0 + rec1)
        x, y = load_cifar_bin(str(p))
        assert x.shape == (2, 3, 32, 32)
        assert y.tolist() == [7, 2]
        assert np.allclose(x[0, 0], 10 / 255) and np.allclose(x[0, 2], 30 / 255)

    def test_byte_position_oracle(self, tmp_path):
        # record r, channel c, row y, col x sits at r*3073 + 1 + c*1024 + y*32 + x
        blob = bytearray(2 * 3073)
        marks = [(0, 1, 5, 9, 200), (1, 2, 31, 31, 123)]
        for r, c, yy, xx, val in marks:
            blob[r * 3073 + 1 + c * 1024 + yy * 32 + xx] = val
        p = tmp_path / "data.bin"
        p.write_bytes(bytes(blob))
        x, _ = load_cifar_bin(str(p))
        for r, c, yy, xx, val in marks:
            assert x[r, c, yy, xx] == np.float32(val / 255.0)

    def test_indivisible_size_rejected(self, tmp_path):
        p = tmp_path / "bad.bin"
        p.write_bytes(bytes(3073 + 17))
        with pytest.raises(DataError, match="3073"):
            load_cifar_bin(str(p))

    def test_empty_file_rejected(self, tmp_path):
        p = tmp_path / "empty.bin"
        p.write_bytes(b"")
        with pytest.raises(DataError):
            load_cifar_bin(str(p))


class TestGenSynthetic:
    def test_zero_noise_identical_within_class(self):
        x, y = gen_synthetic(4, 8, (2, 8, 8), seed=5, noise=0.0)
        for c in range(4):
            imgs = x[y == c]
            assert all(np.array_equal(imgs[0], im) for im in imgs)

    def test_nearest_centroid_accuracy(self):
        xtr, ytr = gen_synthetic(10, 50, (3, 16, 16), seed=0, sample_stream=0)
        xte, yte = gen_synthetic(10, 20, (3, 16, 16), seed=0, sample_stream=1)
        centroids = np.stack([xtr[ytr == c].mean(axis=0) for c in range(10)])
        d = ((xte[:, None] - centroids[None]) ** 2).sum(axis=(2, 3, 4))
        assert (d.argmin(axis=1) == yte).mean() >= 0.9

    def test_same_seed_bit_identical(self):
        a = gen_synthetic(6, 10, (3, 12, 12), seed=9)
        b = gen_synthetic(6, 10, (3, 12, 12), seed=9)
        assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])

    def test_sample_streams_share_classes_not_samples(self):
        a, _ = gen_synthetic(3, 5, (1, 8, 8), seed=2, sample_stream=0)
        b, _ = gen_synthetic(3, 5, (1, 8, 8), seed=2, sample_stream=1)
        assert not np.array_equal(a, b)
        a0, _ = gen_synthetic(3, 5, (1, 8, 8), seed=2, noise=0.0, sample_stream=0)
        b0, _ = gen_synthetic(3, 5, (1, 8, 8), seed=2, noise=0.0, sample_stream=1)
        assert np.array_equal(a0, b0)  # class shapes come from the seed alone

    def test_label_layout_is_interleaved(self):
        _, y = gen_synthetic(5, 3, (1, 8, 8), seed=0)
        assert y[:5].tolist() == [0, 1, 2, 3, 4]

    def test_values_stay_in_unit_interval(self):
        x, _ = gen_synthetic(4, 20, (3, 16, 16), seed=1, noise=0.5)
        assert x.min() >= 0.0 and x.max() <= 1.0


def tiny_run(tmp_path, seed=0):
    cfg = RunConfig(
        seed=seed, dataset_per_class=20, dataset_test_per_class=5,
        offline_epochs=2, acae_epochs=4, pq_k=8, reservoir_capacity=40,
        online_rehearsal_n=3,
    )
    ds = load_dataset(cfg)
    stream = build_task_stream(ds, cfg)
    state = initialize(stream.tasks[0], cfg)
    return cfg, ds, stream, state


class TestCheckpoint:
    def test_round_trip_bit_identical(self, tmp_path):
        cfg, ds, stream, state = tiny_run(tmp_path)
        text = serialize_config(cfg)
        p1, p2 = str(tmp_path / "a.ckpt"), str(tmp_path / "b.ckpt")
        save_checkpoint(state, p1, config_text=text)
        bundle = load_checkpoint(p1)
        save_checkpoint(bundle.state, p2, config_text=bundle.config_text)
        assert open(p1, "rb").read() == open(p2, "rb").read()

    def test_resumed_run_matches_unbroken(self, tmp_path):
        cfg, ds, stream, state = tiny_run(tmp_path)
        text = serialize_config(cfg)

        def hook(state, task_id, step, boundary):
            from latentreplay.engine import evaluate

            mask = np.isin(ds.test_labels, sorted(state.seen_classes))
            r = evaluate(state, ds.test_images[mask], ds.test_labels[mask])
            return MetricRecord(step, task_id, len(state.seen_classes), r["top1"], r["top5"], boundary)

        unbroken = run_stream(state, stream.tasks[1:], hook).records

        _, _, _, state2 = tiny_run(tmp_path)
        p = str(tmp_path / "mid.ckpt")
        first = run_stream(state2, stream.tasks[1:3], hook).records
        save_checkpoint(state2, p, config_text=text, records=first)
        bundle = load_checkpoint(p)
        rest = run_stream(bundle.state, stream.tasks[3:], hook).records
        assert bundle.records + rest == unbroken

    def test_optimizer_and_rng_state_survive(self, tmp_path):
        cfg, ds, stream, state = tiny_run(tmp_path)
        run_stream(state, stream.tasks[1:2])
        p = str(tmp_path / "s.ckpt")
        save_checkpoint(state, p, config_text=serialize_config(cfg))
        loaded = load_checkpoint(p).state
        assert loaded.optim.step_count == state.optim.step_count
        assert loaded.rng.bit_generator.state == state.rng.bit_generator.state
        for name, slots in state.optim.slots.items():
            for key, buf in slots.items():
                assert np.array_equal(loaded.optim.slots[name][key], buf)

    def test_truncated_rejected(self, tmp_path):
        cfg, _, _, state = tiny_run(tmp_path)
        p = str(tmp_path / "t.ckpt")
        save_checkpoint(state, p, config_text=serialize_config(cfg))
        blob = open(p, "rb").read()
        short = str(tmp_path / "short.ckpt")
        open(short, "wb").write(blob[: len(blob) // 2])
        with pytest.raises(CheckpointError):
            load_checkpoint(short)

    def test_corrupt_payload_rejected(self, tmp_path):
        cfg, _, _, state = tiny_run(tmp_path)
        p = str(tmp_path / "c.ckpt")
        save_checkpoint(state, p, config_text=serialize_config(cfg))
        blob = bytearray(open(p, "rb").read())
        blob[60] ^= 0x55
        open(p, "wb").write(bytes(blob))
        with pytest.raises(CheckpointError, match="checksum"):
            load_checkpoint(p)

    def test_unknown_version_rejected(self, tmp_path):
        cfg, _, _, state = tiny_run(tmp_path)
        p = str(tmp_path / "v.ckpt")
        save_checkpoint(state, p, config_text=serialize_config(cfg))
        blob = bytearray(open(p, "rb").read())
        blob[4:8] = struct.pack("<I", 42)
        blob[-4:] = struct.pack("<I", zlib.crc32(bytes(blob[:-4])))
        open(p, "wb").write(bytes(blob))
        with pytest.raises(CheckpointError, match="version"):
            load_checkpoint(p)

    def test_bad_magic_rejected(self, tmp_path):
        p = str(tmp_path / "m.ckpt")
        open(p, "wb").write(b"NOPE" + bytes(64))
        with pytest.raises(CheckpointError, match="magic"):
            load_checkpoint(p)


class TestEmitMetrics:
    def records(self):
        return [
            MetricRecord(0, 1, 2, 0.9, 1.0, True),
            MetricRecord(10, 2, 4, 0.8, 0.95, False),
            MetricRecord(20, 2, 4, 0.7, 0.9, True),
        ]

    def test_jsonl_field_order_fixed(self, tmp_path):
        jsonl, _ = emit_metrics(
            self.records(), str(tmp_path), capacity=10, code_shape=(4, 4, 4), exemplar_count=7
        )
        with open(jsonl) as fh:
            first = fh.readline()
        keys = list(json.loads(first, object_pairs_hook=lambda p: [k for k, _ in p]))
        assert keys == ["step", "task", "seen_classes", "top1", "top5", "boundary"]

    def test_aoc_recomputable_from_emitted_rows(self, tmp_path):
        jsonl, csv = emit_metrics(
            self.records(), str(tmp_path), capacity=10, code_shape=(4, 4, 4), exemplar_count=7
        )
        rows = read_metrics(jsonl)
        boundary = [r["top1"] for r in rows if r["boundary"]]
        with open(csv) as fh:
            header, data = fh.read().strip().split("\n")
        assert float(data.split(",")[0]) == aoc(boundary)
        assert float(data.split(",")[1]) == boundary[-1]

    def test_memory_column_uses_capacity(self, tmp_path):
        _, csv = emit_metrics(
            self.records(), str(tmp_path), capacity=10, code_shape=(4, 4, 4), exemplar_count=7
        )
        data = open(csv).read().strip().split("\n")[1].split(",")
        assert int(data[2]) == memory_bytes(10, (4, 4, 4), 1)
        assert data[3] == "7" and data[4] == "4x4x4"

    def test_empty_log_header_only(self, tmp_path):
        jsonl, csv = emit_metrics(
            [], str(tmp_path), capacity=10, code_shape=(4, 4, 4), exemplar_count=0
        )
        assert open(jsonl).read() == ""
        assert open(csv).read() == "aoc,last,memory_bytes,exemplar_count,exemplar_shape\n"


class TestBudgetLines:
    def test_reference_table_strings(self):
        lines = membudget_lines()
        shown = [line.split("-> ")[1] for line in lines]
        assert shown == [f"{mb} MB" for _, _, mb, _ in BUDGET_TABLE]


class TestCli:
    def test_membudget_prints_reference_pairs(self, capsys):
        assert main(["membudget"]) == 0
        out = capsys.readouterr().out
        for _, _, mb, _ in BUDGET_TABLE:
            assert f"{mb} MB" in out

    def test_bad_config_exit_code(self, tmp_path, capsys):
        p = tmp_path / "bad.txt"
        p.write_text("pq.s = 7\n")
        code = main(["init", "--config", str(p), "--out", str(tmp_path / "x.ckpt")])
        assert code == 2
        err = json.loads(capsys.readouterr().err)
        assert err["error"] == "config"

    def test_missing_checkpoint_io_code(self, tmp_path, capsys):
        code = main(["eval", "--checkpoint", str(tmp_path / "nope.ckpt")])
        assert code == 7
        assert json.loads(capsys.readouterr().err)["error"] == "io"

    def test_init_stream_eval_cycle(self, tmp_path, capsys):
        cfgp = tmp_path / "cfg.txt"
        cfgp.write_text(
            "dataset.per_class = 20\ndataset.test_per_class = 5\n"
            "offline.epochs = 2\nacae.epochs = 4\npq.k = 8\n"
            "reservoir.capacity = 40\nonline.rehearsal_n = 3\n"
        )
        ckpt = str(tmp_path / "run.ckpt")
        outdir = str(tmp_path / "out")
        assert main(["init", "--config", str(cfgp), "--out", ckpt]) == 0
        assert "class order:" in capsys.readouterr().out
        assert main(["stream", "--checkpoint", ckpt, "--out", outdir]) == 0
        capsys.readouterr()
        assert main(["eval", "--checkpoint", ckpt]) == 0
        result = json.loads(capsys.readouterr().out)
        assert result["seen_classes"] == 10 and result["task"] == 5
        rows = read_metrics(outdir + "/metrics.jsonl")
        assert [r["task"] for r in rows] == [1, 2, 3, 4, 5]
        assert rows[0]["step"] == 0  # the post-init record rides along

    def test_until_task_split_matches_full_run(self, tmp_path):
        cfg_text = (
            "dataset.per_class = 20\ndataset.test_per_class = 5\n"
            "offline.epochs = 2\nacae.epochs = 4\npq.k = 8\n"
            "reservoir.capacity = 40\nonline.rehearsal_n = 3\n"
        )
        cfgp = tmp_path / "cfg.txt"
        cfgp.write_text(cfg_text)

        full_ckpt = str(tmp_path / "full.ckpt")
        assert main(["init", "--config", str(cfgp), "--out", full_ckpt]) == 0
        assert main(["stream", "--checkpoint", full_ckpt, "--out", str(tmp_path / "full")]) == 0

        split_ckpt = str(tmp_path / "split.ckpt")
        assert main(["init", "--config", str(cfgp), "--out", split_ckpt]) == 0
        assert main(["stream", "--checkpoint", split_ckpt, "--out", str(tmp_path / "p1"),
                     "--until-task", "3"]) == 0
        assert main(["stream", "--checkpoint", split_ckpt, "--out", str(tmp_path / "p2")]) == 0

        full = open(tmp_path / "full" / "metrics.jsonl").read()
        split = open(tmp_path / "p2" / "metrics.jsonl").read()
        assert full == split
        assert open(tmp_path / "full" / "summary.csv").read() == open(tmp_path / "p2" / "summary.csv").read()

    def test_gradcheck_command(self, capsys):
        assert main(["gradcheck", "--seeds", "2"]) == 0
        assert "passed" in capsys.readouterr().out
