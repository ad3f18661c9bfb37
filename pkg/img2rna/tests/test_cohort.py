from img2rna.data import get_path
import numpy as np
import pytest


@pytest.fixture
def config():
    from img2rna.config import load_config
    return load_config(get_path("example_config"))


@pytest.fixture
def raw_dir(config, tmp_path):
    from img2rna.synth import generate_cohort, plant_spec_from_config
    out_dir = str(tmp_path / "raw")
    generate_cohort(plant_spec_from_config(config), config["synth"]["n_patients"], out_dir)
    return out_dir


def test_assign_splits():
    from img2rna.cohort import assign_splits

    ids = ["P%03d" % i for i in range(120)]
    splits = assign_splits(ids, [0.6, 0.2, 0.2], seed=0)
    counts = {name: list(splits.values()).count(name) for name in ("train", "val", "test")}
    assert counts == {"train": 72, "val": 24, "test": 24}
    # Input order does not matter
    assert assign_splits(list(reversed(ids)), [0.6, 0.2, 0.2], seed=0) == splits
    assert assign_splits(ids, [0.6, 0.2, 0.2], seed=1) != splits


def test_build_cohort_from_synthetic_data(config, raw_dir):
    from img2rna.cohort import build_cohort_from_dir

    records, manifest = build_cohort_from_dir(raw_dir, config)
    assert len(records) == 15
    assert [len(manifest["splits"][s]) for s in ("train", "val", "test")] == [9, 3, 3]
    assert manifest["project"] == "TOY"
    assert manifest["gene_count"] == len(manifest["gene_ids"]) == 8
    assert manifest["excluded"] == []
    assert manifest["config"]["seed"] == config["seed"]
    for record, entry in zip(records, manifest["patients"]):
        assert record.patient_id == entry["patient_id"]
        assert 1 <= len(record.slices) <= config["data"]["max_slices"]
        assert all(s.shape == (16, 16) for s in record.slices)
        assert record.target.shape == (8,)


def test_build_cohort_is_deterministic_for_any_worker_count(config, raw_dir):
    from img2rna.cohort import build_cohort_from_dir

    _, single = build_cohort_from_dir(raw_dir, config, worker_cnt=1)
    _, again = build_cohort_from_dir(raw_dir, config, worker_cnt=1)
    _, multi = build_cohort_from_dir(raw_dir, config, worker_cnt=3)
    assert single["digest"] == again["digest"] == multi["digest"]
    assert single == multi


def test_patients_without_pairs_or_tumour_are_excluded(config, raw_dir):
    import os
    from img2rna.cohort import build_cohort
    from img2rna.dataio import (TumorMask, get_image_paths, read_expression_matrix, read_mask,
                                write_mask)

    em = read_expression_matrix(os.path.join(raw_dir, "expression.tsv"))
    paths = get_image_paths(raw_dir)

    # No tumour in P0002
    mask = read_mask(paths["P0002"]["mask"])
    write_mask(TumorMask(labels=np.zeros_like(mask.labels), patient_id="P0002"),
               os.path.dirname(paths["P0002"]["mask"]))
    # No expression column for P0001
    em = em.select_patients([p for p in em.patient_ids if p != "P0001"])

    with pytest.warns(UserWarning, match="Excluding patient"):
        records, manifest = build_cohort(paths, em, config)
    excluded = {e["patient_id"]: e["reason"] for e in manifest["excluded"]}
    assert set(excluded) == {"P0001", "P0002"}
    assert "expression" in excluded["P0001"]
    assert len(records) == 13


def test_unusable_patients_are_excluded_not_fatal(config, raw_dir):
    import os
    from img2rna.cohort import build_cohort_from_dir
    from img2rna.dataio import (TumorMask, Volume, get_image_paths, read_volume, write_mask,
                                write_volume)

    paths = get_image_paths(raw_dir)
    # Mask on a different grid than its volume
    write_mask(TumorMask(labels=np.zeros((20, 20, 21), dtype=np.uint8), patient_id="P0003"),
               os.path.dirname(paths["P0003"]["mask"]))
    # Constant volume cannot be normalized
    volume = read_volume(paths["P0004"]["volume"])
    write_volume(Volume(voxels=np.full(volume.voxels.shape, 2.0), spacing=volume.spacing,
                        modality=volume.modality, patient_id="P0004"),
                 os.path.dirname(paths["P0004"]["volume"]))

    for worker_cnt in (1, 2):
        with pytest.warns(UserWarning, match="Excluding patient"):
            records, manifest = build_cohort_from_dir(raw_dir, config, worker_cnt=worker_cnt)
        excluded = {e["patient_id"]: e["reason"] for e in manifest["excluded"]}
        assert set(excluded) == {"P0003", "P0004"}
        assert "do not match" in excluded["P0003"]
        assert "zero variance" in excluded["P0004"]
        assert len(records) == 13


def test_empty_cohort_is_an_error(config, raw_dir):
    import os
    from img2rna.cohort import build_cohort
    from img2rna.dataio import ExpressionMatrix, get_image_paths
    from img2rna.exceptions import InputError

    em = ExpressionMatrix.from_arrays([[1.0]], ["G1"], ["X1"])
    with pytest.warns(UserWarning):
        with pytest.raises(InputError, match="empty"):
            build_cohort(get_image_paths(raw_dir), em, config)


def test_save_and_load_cohort(config, raw_dir, tmp_path):
    import os
    from img2rna.cohort import build_cohort_from_dir, load_cohort, save_cohort, split_records
    from img2rna.exceptions import InputError

    records, manifest = build_cohort_from_dir(raw_dir, config)
    out_dir = str(tmp_path / "cohort")
    save_cohort(records, manifest, out_dir)

    loaded, loaded_manifest = load_cohort(out_dir)
    assert loaded_manifest["digest"] == manifest["digest"]
    test = split_records(loaded, loaded_manifest, "test")
    assert [r.patient_id for r in test] == manifest["splits"]["test"]
    original = {r.patient_id: r for r in records}
    for r in test:
        assert np.array_equal(r.target, original[r.patient_id].target)

    # Tampering is detected
    fp = os.path.join(out_dir, "records", records[0].patient_id + ".npz")
    np.savez(fp, slices=np.stack(records[0].slices) + 1.0, target=records[0].target)
    with pytest.raises(InputError, match="digest"):
        load_cohort(out_dir)


def test_leakage_guard():
    from img2rna.cohort import check_no_leakage
    from img2rna.exceptions import InputError

    manifest = {"splits": {"train": ["P1", "P2"], "val": ["P3"], "test": ["P2", "P4"]}}
    with pytest.raises(InputError, match="P2"):
        check_no_leakage(manifest, "test")
    check_no_leakage(manifest, "val")


def test_input_digest_tracks_raw_voxels(config, raw_dir):
    import os
    from img2rna.cohort import build_cohort_from_dir
    from img2rna.dataio import Volume, get_image_paths, read_volume, write_volume

    _, before = build_cohort_from_dir(raw_dir, config)
    fp = get_image_paths(raw_dir)["P0005"]["volume"]
    volume = read_volume(fp)
    voxels = volume.voxels.copy()
    voxels[0, 0, 0] += 1.0
    write_volume(Volume(voxels=voxels, spacing=volume.spacing, modality=volume.modality,
                        patient_id="P0005"), os.path.dirname(fp))

    _, after = build_cohort_from_dir(raw_dir, config)
    assert after["input_digest"] != before["input_digest"]
    assert after["digest"] != before["digest"]
