import json

import pytest
import yaml

from vendsynth import pipeline
from vendsynth.pipeline import (
    ConfigError,
    FrameError,
    config_from_dict,
    generate_dataset,
    normalize,
    parse_config,
)

SMALL_CAMERA = {"width": 160, "height": 160, "fx": 48.0, "fy": 48.0, "cx": 79.5, "cy": 79.5}


@pytest.fixture
def cfg_path(demo_dirs, tmp_path):
    root, lib, tex = demo_dirs
    data = {"library": str(lib), "textures": str(tex), "frames": 3, "seed": 5, "camera": SMALL_CAMERA}
    p = tmp_path / "config.yaml"
    p.write_text(yaml.safe_dump(data))
    return p


def test_minimal_config_fills_defaults(tmp_path):
    (tmp_path / "c.yaml").write_text("library: lib\ntextures: tex\n")
    cfg = parse_config(tmp_path / "c.yaml")
    assert cfg.frames == 1 and cfg.render.supersample == 2 and cfg.labels.min_pixels == 25
    assert cfg.library_path() == tmp_path / "lib"
    echo = cfg.echo()
    assert "workers" not in echo and "base_dir" not in echo and echo["camera"]["fx"] == 300.0


@pytest.mark.parametrize("patch, fragment", [
    ({"lights": {"interior": [1, 6]}}, "lights.interior: interior light count is capped at 5"),
    ({"lights": {"exterior": [0, 4]}}, "lights.exterior: exterior light count is capped at 3"),
    ({"camera": {"fx": "wide"}}, "camera.fx:"),
    ({"bogus": 1}, "bogus: Extra inputs are not permitted"),
    ({"render": {"supersample": 9}}, "render.supersample:"),
    ({"frames": -1}, "frames:"),
])
def test_invalid_configs_name_the_key(patch, fragment):
    with pytest.raises(ConfigError) as info:
        config_from_dict({"library": "a", "textures": "b", **patch})
    assert fragment in str(info.value)


def test_missing_and_malformed_files(tmp_path):
    with pytest.raises(ConfigError, match="not found"):
        parse_config(tmp_path / "none.yaml")
    (tmp_path / "bad.yaml").write_text("library: [unclosed\n")
    with pytest.raises(ConfigError, match="YAML"):
        parse_config(tmp_path / "bad.yaml")
    (tmp_path / "list.yaml").write_text("- 1\n- 2\n")
    with pytest.raises(ConfigError, match="mapping"):
        parse_config(tmp_path / "list.yaml")


def test_normalize_rounds_and_rejects_nan():
    assert normalize({"a": 0.1 + 0.2, "b": (1, -0.0)}) == {"a": 0.3, "b": [1, 0.0]}
    with pytest.raises(ValueError):
        normalize(float("nan"))


def check_manifest(m, frames):
    assert len(m["images"]) == frames
    image_ids = {im["id"] for im in m["images"]}
    cat_ids = {c["id"] for c in m["categories"]}
    ann_ids = [a["id"] for a in m["annotations"]]
    assert len(set(ann_ids)) == len(ann_ids)
    for a in m["annotations"]:
        assert a["image_id"] in image_ids and a["category_id"] in cat_ids
        x, y, w, h = a["bbox"]
        assert x >= 0 and y >= 0 and x + w <= 160 and y + h <= 160 and a["area"] >= 25


def test_zero_frames(cfg_path, tmp_path):
    cfg = config_from_dict({**parse_config(cfg_path).model_dump(mode="json"), "frames": 0})
    m = generate_dataset(cfg, tmp_path / "out")
    assert m["images"] == [] and m["annotations"] == []
    assert json.loads((tmp_path / "out" / "annotations.json").read_text())["images"] == []


def test_dataset_layout_and_integrity(cfg_path, tmp_path):
    out = tmp_path / "ds"
    m = generate_dataset(parse_config(cfg_path), out)
    check_manifest(m, 3)
    assert sorted(p.name for p in (out / "images").iterdir()) == ["000000.png", "000001.png", "000002.png"]
    meta = json.loads((out / "metadata" / "000001.json").read_text())
    assert meta["frame"] == 1 and meta["master_seed"] == 5
    on_disk = json.loads((out / "annotations.json").read_text())
    assert on_disk == json.loads(json.dumps(normalize(m)))


def test_parallel_run_is_byte_identical(cfg_path, tmp_path):
    cfg = parse_config(cfg_path)
    generate_dataset(cfg, tmp_path / "seq", workers=1)
    generate_dataset(cfg, tmp_path / "par", workers=2)
    files = sorted(p.relative_to(tmp_path / "seq") for p in (tmp_path / "seq").rglob("*") if p.is_file())
    assert len(files) == 7
    for f in files:
        assert (tmp_path / "seq" / f).read_bytes() == (tmp_path / "par" / f).read_bytes(), f


def test_frame_failure_is_reported_with_its_index(cfg_path, tmp_path, monkeypatch):
    def broken(img, path):
        if path.name == "000002.png":
            raise OSError("disk full")
        return real(img, path)

    real = pipeline.write_png
    monkeypatch.setattr(pipeline, "write_png", broken)
    with pytest.raises(FrameError) as info:
        generate_dataset(parse_config(cfg_path), tmp_path / "x")
    assert info.value.frame == 2 and "disk full" in str(info.value)


def test_missing_library_is_reported(tmp_path):
    cfg = config_from_dict({"library": "nowhere", "textures": "nowhere"}, base_dir=tmp_path)
    with pytest.raises(FileNotFoundError):
        generate_dataset(cfg, tmp_path / "o")
