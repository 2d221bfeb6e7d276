import json

import pytest

from chainbench.ingest_slice import write_export
from chainbench.scenario import (
    ExperimentManifest,
    ManifestError,
    dataset_from_source,
    run_scenario,
)
from chainbench.synth_chain import SynthConfig, generate


def test_manifest_validation_errors():
    with pytest.raises(ManifestError, match="kind"):
        ExperimentManifest.from_dict({"kind": "nope", "source": {}})
    with pytest.raises(ManifestError, match="workload"):
        ExperimentManifest.from_dict({"kind": "window-drift", "source": {"kind": "synth"}})
    with pytest.raises(ManifestError, match="slices"):
        ExperimentManifest.from_dict({"kind": "slice-compare", "source": {"kind": "synth"}})
    with pytest.raises(ManifestError, match="policy"):
        ExperimentManifest.from_dict(
            {
                "kind": "window-drift",
                "source": {"kind": "synth"},
                "workload": {"init_blocks": 5, "granularity": 1},
                "policies": ["stale"],
            }
        )


def test_reproducible_inputs_exclude_output_dir():
    m = ExperimentManifest.from_dict(
        {
            "kind": "window-drift",
            "source": {"kind": "synth", "config": {"seed": 1}},
            "workload": {"init_blocks": 5, "granularity": 1},
            "output_dir": "/somewhere",
        }
    )
    assert "output_dir" not in m.reproducible_inputs()


def test_dataset_from_export_source(tmp_path):
    ds = generate(SynthConfig(seed=3, n_blocks=20, mean_tx_per_block=3, address_pool=20, n_tokens=2))
    write_export(ds, tmp_path)
    loaded = dataset_from_source({"kind": "export", "dir": str(tmp_path)})
    assert loaded.block_range == (0, 19)


def test_slice_compare_scenario(tmp_path):
    manifest = ExperimentManifest.from_dict(
        {
            "kind": "slice-compare",
            "source": {
                "kind": "synth",
                "config": {"seed": 31, "n_blocks": 120, "mean_tx_per_block": 8, "address_pool": 50, "n_tokens": 5},
            },
            "slices": [
                {"lo": 0, "hi": 29, "label": "S1"},
                {"lo": 40, "hi": 69, "label": "S2"},
                {"lo": 90, "hi": 119, "label": "S3"},
            ],
            "policies": ["refreshed"],
            "queries": ["Q1"],
            "max_tables": 2,
        }
    )
    result = run_scenario(manifest, tmp_path / "out")
    assert result.state_labels == ["S1", "S2", "S3"]
    assert len(result.points) == 3 * 9  # 5 singles + 4 pairs per state
    assert all(p.policy == "refreshed" for p in result.points)
    lines = (tmp_path / "out" / "report" / "qerror_points.jsonl").read_text().strip().splitlines()
    assert len(lines) == len(result.points)


def test_window_drift_scenario_policies(tmp_path):
    manifest = ExperimentManifest.from_dict(
        {
            "kind": "window-drift",
            "source": {
                "kind": "synth",
                "config": {"seed": 32, "n_blocks": 80, "mean_tx_per_block": 6, "address_pool": 40, "n_tokens": 4},
            },
            "workload": {"init_blocks": 40, "granularity": 20, "expire": True},
            "policies": ["refreshed", "initial"],
            "queries": ["Q1"],
            "max_tables": 1,
        }
    )
    result = run_scenario(manifest, tmp_path / "out")
    assert result.state_labels == ["W1", "W2", "W3"]
    assert len(result.points) == 3 * 2 * 5
    w1_refreshed = {p.subquery: p for p in result.points if p.state == "W1" and p.policy == "refreshed"}
    w1_initial = {p.subquery: p for p in result.points if p.state == "W1" and p.policy == "initial"}
    for sub, point in w1_refreshed.items():
        assert point.estimated == w1_initial[sub].estimated  # same catalog on state one


def test_unknown_query_id_rejected(tmp_path):
    manifest = ExperimentManifest.from_dict(
        {
            "kind": "window-drift",
            "source": {"kind": "synth", "config": {"seed": 1, "n_blocks": 10, "mean_tx_per_block": 2, "address_pool": 10, "n_tokens": 2}},
            "workload": {"init_blocks": 5, "granularity": 5},
            "queries": ["Q99"],
        }
    )
    with pytest.raises(ManifestError, match="Q99"):
        run_scenario(manifest, tmp_path / "out")


def test_query_without_structured_form_rejected(tmp_path):
    manifest = ExperimentManifest.from_dict(
        {
            "kind": "window-drift",
            "source": {"kind": "synth", "config": {"seed": 1, "n_blocks": 10, "mean_tx_per_block": 2, "address_pool": 10, "n_tokens": 2}},
            "workload": {"init_blocks": 5, "granularity": 5},
            "queries": ["Q2"],
        }
    )
    with pytest.raises(ManifestError, match="structured form"):
        run_scenario(manifest, tmp_path / "out")
