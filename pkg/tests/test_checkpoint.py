import numpy as np
import pytest

from rgbdseg.checkpoint import (
    format_config,
    load_checkpoint,
    parse_config_text,
    read_tensor_file,
    save_checkpoint,
    write_tensor_file,
)
from rgbdseg.network import NetConfig, init_net, named_arrays


def small_cfg(**kw):
    base = dict(num_classes=3, base_channels=8, stage_depths=(1, 1, 1, 1),
                heads=2, mim_layers=(4,))
    base.update(kw)
    return NetConfig(**base)


def test_tensor_file_roundtrip_ranks(tmp_path):
    rng = np.random.default_rng(0)
    shapes = [(), (5,), (3, 4), (2, 3, 4), (2, 1, 3, 2)]
    for i, shape in enumerate(shapes):
        arr = rng.standard_normal(shape).astype(np.float32)
        path = tmp_path / f"t{i}.mipt"
        write_tensor_file(path, arr)
        back = read_tensor_file(path)
        assert back.shape == arr.shape
        assert back.dtype == np.float32
        assert np.array_equal(back, arr)


def test_tensor_file_header_layout(tmp_path):
    arr = np.arange(6, dtype=np.float32).reshape(2, 3)
    path = tmp_path / "t.mipt"
    write_tensor_file(path, arr)
    raw = path.read_bytes()
    assert raw[:4] == b"MIPT"
    assert raw[4] == 1          # version
    assert raw[5] == 2          # rank
    assert raw[6:14] == (2).to_bytes(4, "little") + (3).to_bytes(4, "little")
    assert raw[14:] == arr.tobytes()


def test_tensor_file_rejects_bad_magic(tmp_path):
    path = tmp_path / "t.mipt"
    write_tensor_file(path, np.zeros(3, dtype=np.float32))
    raw = bytearray(path.read_bytes())
    raw[:4] = b"XXXX"
    path.write_bytes(bytes(raw))
    with pytest.raises(ValueError, match="magic"):
        read_tensor_file(path)


def test_tensor_file_rejects_bad_version(tmp_path):
    path = tmp_path / "t.mipt"
    write_tensor_file(path, np.zeros(3, dtype=np.float32))
    raw = bytearray(path.read_bytes())
    raw[4] = 9
    path.write_bytes(bytes(raw))
    with pytest.raises(ValueError, match="version"):
        read_tensor_file(path)


def test_tensor_file_rejects_truncated_payload(tmp_path):
    path = tmp_path / "t.mipt"
    write_tensor_file(path, np.zeros((2, 2), dtype=np.float32))
    raw = path.read_bytes()
    path.write_bytes(raw[:-3])
    with pytest.raises(ValueError, match="size"):
        read_tensor_file(path)


def test_config_roundtrip():
    cfg = small_cfg(pam_shared=True, mim_layers=(3, 4),
                    decoder_resize_mode="nearest", use_pam=False)
    text = format_config(cfg, extra={"seed": 7, "rgb_only": False})
    cfg2, extra = parse_config_text(text)
    assert cfg2 == cfg
    assert extra == {"seed": "7", "rgb_only": "false"}


def test_config_parse_ignores_comments_and_blanks():
    text = "# comment\n\nnum_classes = 2\nbase_channels = 4\n"
    cfg, extra = parse_config_text(text)
    assert cfg.num_classes == 2
    assert cfg.base_channels == 4
    assert extra == {}


def test_config_parse_requires_num_classes():
    with pytest.raises(ValueError, match="num_classes"):
        parse_config_text("base_channels = 4\n")


def test_checkpoint_roundtrip_exact(tmp_path):
    cfg = small_cfg()
    params = init_net(cfg, np.random.default_rng(3))
    save_checkpoint(tmp_path / "ck", params, cfg, extra={"seed": 3})
    params2, cfg2, extra = load_checkpoint(tmp_path / "ck")
    assert cfg2 == cfg
    assert extra["seed"] == "3"
    t1, s1 = named_arrays(params)
    t2, s2 = named_arrays(params2)
    assert set(t1) == set(t2)
    assert set(s1) == set(s2)
    for name in t1:
        assert np.array_equal(t1[name].data, t2[name].data), name
        assert t2[name].data.dtype == np.float32
    for name in s1:
        assert np.array_equal(s1[name], s2[name]), name


def test_checkpoint_preserves_shared_pam_alias(tmp_path):
    cfg = small_cfg(pam_shared=True)
    params = init_net(cfg, np.random.default_rng(0))
    save_checkpoint(tmp_path / "ck", params, cfg)
    params2, _, _ = load_checkpoint(tmp_path / "ck")
    for pair in params2.pams:
        assert pair.rgb is pair.dep


def test_checkpoint_missing_tensor_file_errors(tmp_path):
    cfg = small_cfg()
    params = init_net(cfg, np.random.default_rng(0))
    save_checkpoint(tmp_path / "ck", params, cfg)
    manifest = tmp_path / "ck" / "manifest.txt"
    lines = manifest.read_text().splitlines()
    dropped = lines[0].split()[0]
    manifest.write_text("\n".join(lines[1:]) + "\n")
    with pytest.raises(ValueError, match=dropped.split(".")[-1]):
        load_checkpoint(tmp_path / "ck")


def test_checkpoint_shape_mismatch_errors(tmp_path):
    cfg = small_cfg()
    params = init_net(cfg, np.random.default_rng(0))
    save_checkpoint(tmp_path / "ck", params, cfg)
    manifest = (tmp_path / "ck" / "manifest.txt").read_text().splitlines()
    name, fname = manifest[0].split()
    write_tensor_file(tmp_path / "ck" / fname, np.zeros((1, 2, 3), dtype=np.float32))
    with pytest.raises(ValueError, match="shape"):
        load_checkpoint(tmp_path / "ck")


def test_checkpoint_detects_class_count(tmp_path):
    cfg = small_cfg(num_classes=5)
    params = init_net(cfg, np.random.default_rng(0))
    save_checkpoint(tmp_path / "ck", params, cfg)
    _, cfg2, _ = load_checkpoint(tmp_path / "ck")
    assert cfg2.num_classes == 5
