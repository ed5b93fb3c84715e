import json
import os

import numpy as np
import pytest

from skelprop.cli import main
from skelprop.volume import ScalarVolume, VolumeGeometry, load_volume, save_volume


def _phantom_args(out_dir, size=32, depth=1, seed=3):
    return [
        "phantom", "--out-dir", str(out_dir), "--size", str(size),
        "--depth", str(depth), "--seed", str(seed),
        "--root-radius", "2.0", "--length-range", "8", "11",
    ]


def _run(capsys, argv):
    code = main(argv)
    out = capsys.readouterr()
    return code, out.out, out.err


def test_help_exits_zero_and_lists_defaults(capsys):
    code, out, _ = _run(capsys, ["propagate", "--help"])
    assert code == 0
    assert "--delta1" in out and "0.01" in out
    assert "--delta2" in out and "0.07" in out
    assert "--gamma" in out and "0.05" in out
    assert "--sigma" in out and "--spatial-weight" in out
    assert "--connectivity" in out and "--units" in out and "--threads" in out

    code, out, _ = _run(capsys, ["losses", "--help"])
    assert code == 0
    assert "--lambda1" in out and "1.5" in out
    assert "--lambda2" in out and "20" in out
    assert "--em-mode" in out


def test_unknown_flag_is_usage_error(capsys):
    code, _, err = _run(capsys, ["propagate", "--volume", "x", "--annotation", "y", "--frobnicate"])
    assert code == 1
    assert "error" in err


def test_missing_subcommand_is_usage_error(capsys):
    assert _run(capsys, [])[0] == 1


def test_delta_conflict_rejected_before_io(capsys, tmp_path):
    # files do not exist: parameter validation must reject first with exit 1
    code, _, err = _run(capsys, [
        "propagate", "--volume", str(tmp_path / "nope.rvol"),
        "--annotation", str(tmp_path / "nope2.rvol"),
        "--delta1", "0.07", "--delta2", "0.01",
    ])
    assert code == 1
    assert "delta" in err


def test_missing_input_is_data_error(capsys, tmp_path):
    code, _, err = _run(capsys, [
        "propagate", "--volume", str(tmp_path / "nope.rvol"),
        "--annotation", str(tmp_path / "nope2.rvol"),
    ])
    assert code == 2
    assert "error" in err


def test_phantom_writes_outputs_with_manifests(capsys, tmp_path):
    code, out, _ = _run(capsys, _phantom_args(tmp_path))
    assert code == 0
    names = {p.name for p in tmp_path.iterdir()}
    for base in ("volume.rvol", "mask.rvol", "skeleton.rvol", "branches.txt", "spec.txt"):
        assert base in names
        assert f"{base}.manifest.txt" in names
    manifest = (tmp_path / "volume.rvol.manifest.txt").read_text()
    assert "command=phantom" in manifest
    assert "param.seed=3" in manifest
    spec_echo = (tmp_path / "spec.txt").read_text()
    assert "rng=numpy PCG64" in spec_echo


def test_end_to_end_pipeline(capsys, tmp_path):
    assert _run(capsys, _phantom_args(tmp_path))[0] == 0
    skel = tmp_path / "derived_skel.rvol"
    code, out, _ = _run(capsys, [
        "skeletonize", "--mask", str(tmp_path / "mask.rvol"), "--out", str(skel),
        "--graph-out", str(tmp_path / "graph.txt"),
    ])
    assert code == 0 and skel.exists()
    assert "%" in out

    prop_dir = tmp_path / "prop"
    code, out, _ = _run(capsys, [
        "propagate", "--volume", str(tmp_path / "volume.rvol"), "--annotation", str(skel),
        "--out-dir", str(prop_dir),
    ])
    assert code == 0
    for name in ("proposal.rvol", "dggd.rvol", "diggd.rvol"):
        assert (prop_dir / name).exists()
        assert (prop_dir / f"{name}.manifest.txt").exists()
    manifest = (prop_dir / "proposal.rvol.manifest.txt").read_text()
    assert "param.delta1=0.01" in manifest
    assert "param.delta2=0.07" in manifest
    assert "param.gamma=0.05" in manifest
    assert "input.volume.sha256=" in manifest

    code, out, _ = _run(capsys, [
        "metrics", "--pred", str(tmp_path / "mask.rvol"), "--ref", str(tmp_path / "mask.rvol"),
        "--ref-skeleton", str(tmp_path / "skeleton.rvol"),
        "--json", str(tmp_path / "metrics.json"),
    ])
    assert code == 0
    report = dict(line.split("=", 1) for line in out.strip().splitlines() if "=" in line)
    assert float(report["dsc"]) == 1.0
    assert float(report["bd"]) == 1.0
    parsed = json.loads((tmp_path / "metrics.json").read_text())
    assert parsed["tpr"] == 1.0

    # losses of the proposal against a uniform prediction
    half = tmp_path / "half.rvol"
    geom = load_volume(str(tmp_path / "volume.rvol")).geometry
    save_volume(ScalarVolume(geom, np.full(geom.shape, 0.5, np.float32)), str(half))
    code, out, _ = _run(capsys, [
        "losses", "--pred", str(half), "--proposal", str(prop_dir / "proposal.rvol"),
        "--iggd-pred", str(half), "--iggd-target", str(prop_dir / "diggd.rvol"),
    ])
    assert code == 0
    report = dict(line.split("=", 1) for line in out.strip().splitlines() if "=" in line)
    assert float(report["pce"]) == pytest.approx(np.log(2.0), abs=1e-6)
    assert float(report["total"]) == pytest.approx(
        float(report["pce"]) + 1.5 * float(report["em"]) + 20.0 * float(report["iggd_mse"]),
        abs=1e-9,
    )


def test_propagate_deterministic_bytes(capsys, tmp_path):
    assert _run(capsys, _phantom_args(tmp_path))[0] == 0
    runs = []
    for sub, threads in (("a", "1"), ("b", "1"), ("c", "2")):
        out_dir = tmp_path / sub
        code, _, _ = _run(capsys, [
            "propagate", "--volume", str(tmp_path / "volume.rvol"),
            "--annotation", str(tmp_path / "skeleton.rvol"),
            "--out-dir", str(out_dir), "--threads", threads,
        ])
        assert code == 0
        runs.append({n: (out_dir / n).read_bytes()
                     for n in ("proposal.rvol", "dggd.rvol", "diggd.rvol")})
    assert runs[0] == runs[1] == runs[2]


def test_config_file_and_flag_precedence(capsys, tmp_path):
    assert _run(capsys, _phantom_args(tmp_path))[0] == 0
    cfg = tmp_path / "params.cfg"
    cfg.write_text("delta1 = 0.02\ngamma=0.10  # comment\n")
    out_dir = tmp_path / "cfg_run"
    code, _, _ = _run(capsys, [
        "propagate", "--volume", str(tmp_path / "volume.rvol"),
        "--annotation", str(tmp_path / "skeleton.rvol"),
        "--out-dir", str(out_dir), "--config", str(cfg), "--gamma", "0.2",
    ])
    assert code == 0
    manifest = (out_dir / "proposal.rvol.manifest.txt").read_text()
    assert "param.delta1=0.02" in manifest   # from config
    assert "param.gamma=0.2" in manifest     # flag beats config
    assert "param.delta2=0.07" in manifest   # built-in default

    bad = tmp_path / "bad.cfg"
    bad.write_text("unknown_knob=1\n")
    code, _, _ = _run(capsys, [
        "propagate", "--volume", str(tmp_path / "volume.rvol"),
        "--annotation", str(tmp_path / "skeleton.rvol"),
        "--out-dir", str(out_dir), "--config", str(bad),
    ])
    assert code == 2


def test_output_dir_env_var(capsys, tmp_path, monkeypatch):
    assert _run(capsys, _phantom_args(tmp_path))[0] == 0
    env_dir = tmp_path / "from_env"
    monkeypatch.setenv("SKELPROP_OUTPUT_DIR", str(env_dir))
    code, _, _ = _run(capsys, [
        "propagate", "--volume", str(tmp_path / "volume.rvol"),
        "--annotation", str(tmp_path / "skeleton.rvol"),
    ])
    assert code == 0
    assert (env_dir / "proposal.rvol").exists()


def test_convert_round_trip(capsys, tmp_path, rng):
    v = ScalarVolume(VolumeGeometry((5, 4, 3), (0.8, 1.0, 1.2)),
                     rng.standard_normal((5, 4, 3)).astype(np.float32))
    src = tmp_path / "v.rvol"
    save_volume(v, str(src))
    nii = tmp_path / "v.nii"
    back = tmp_path / "back.rvol"
    assert _run(capsys, ["convert", "--input", str(src), "--output", str(nii)])[0] == 0
    assert _run(capsys, ["convert", "--input", str(nii), "--output", str(back)])[0] == 0
    assert np.array_equal(load_volume(str(back)).data, v.data)
    assert (nii.parent / "v.nii.manifest.txt").exists()


def test_convert_u8_preserves_codes(capsys, tmp_path):
    assert _run(capsys, _phantom_args(tmp_path))[0] == 0
    prop_dir = tmp_path / "prop"
    assert _run(capsys, [
        "propagate", "--volume", str(tmp_path / "volume.rvol"),
        "--annotation", str(tmp_path / "skeleton.rvol"), "--out-dir", str(prop_dir),
    ])[0] == 0
    nii = tmp_path / "prop.nii"
    assert _run(capsys, ["convert", "--input", str(prop_dir / "proposal.rvol"),
                         "--output", str(nii), "--dtype", "u8"])[0] == 0
    orig = load_volume(str(prop_dir / "proposal.rvol"))
    back = load_volume(str(nii))
    assert np.array_equal(back.data, orig.data)
    # non-integral volume cannot be narrowed
    code, _, err = _run(capsys, ["convert", "--input", str(tmp_path / "volume.rvol"),
                                 "--output", str(tmp_path / "x.rvol"), "--dtype", "u8"])
    assert code == 2


def test_losses_rejects_bad_proposal_codes(capsys, tmp_path):
    g = VolumeGeometry((3, 3, 3))
    save_volume(ScalarVolume(g, np.full(g.shape, 0.5, np.float32)), str(tmp_path / "p.rvol"))
    save_volume(ScalarVolume(g, np.full(g.shape, 7.0, np.float32)), str(tmp_path / "mp.rvol"))
    code, _, err = _run(capsys, [
        "losses", "--pred", str(tmp_path / "p.rvol"), "--proposal", str(tmp_path / "mp.rvol"),
    ])
    assert code == 2
    assert "codes" in err


def test_losses_requires_iggd_pair_together(capsys, tmp_path):
    code, _, err = _run(capsys, [
        "losses", "--pred", "x.rvol", "--proposal", "y.rvol", "--iggd-pred", "z.rvol",
    ])
    assert code == 1
    assert "together" in err


def test_skeletonize_empty_mask_is_data_error(capsys, tmp_path):
    g = VolumeGeometry((4, 4, 4))
    save_volume(ScalarVolume(g, np.zeros(g.shape)), str(tmp_path / "z.rvol"))
    code, _, err = _run(capsys, [
        "skeletonize", "--mask", str(tmp_path / "z.rvol"), "--out", str(tmp_path / "o.rvol"),
    ])
    assert code == 2
