from collections import Counter

import numpy as np
import pytest

from mieval.amputation import ampute, figure1_plan
from mieval.estimators import estimation_matrix
from mieval.fcs import FcsConfig
from mieval.forest import ForestConfig
from mieval.ipw import IpwConfig
from mieval.jm import JmConfig
from mieval.methods import (OracleConfig, config_from_json, expand_grid, fingerprint, impute,
                            is_multiple_imputation, method_label, pooled_estimates, table3_grid)


def test_table3_grid_counts():
    grid = table3_grid()
    kinds = Counter(d["kind"] for d in grid)
    assert len(grid) == 52
    assert sum(v for k, v in kinds.items() if k != "ipw") == 44 and kinds["ipw"] == 8
    assert kinds["forest"] == 24 and kinds["jm"] == 4
    variants = Counter(d["variant"] for d in grid if d["kind"] == "fcs")
    assert variants == {"default": 4, "norm": 8, "logreg": 4}


def test_table3_grid_unique_and_valid():
    cfgs = [config_from_json(d) for d in table3_grid(m=42)]
    assert len({fingerprint(c) for c in cfgs}) == 52
    assert len({method_label(c) for c in cfgs}) == 52
    assert all(c.m == 42 for c in cfgs if is_multiple_imputation(c))


def test_expand_grid_cartesian():
    out = expand_grid(dict(kind="forest", pmm_donors=[0, 3, 5], include_outcomes=[False, True], m=7))
    assert len(out) == 6 and all(d["m"] == 7 for d in out)
    assert {(d["pmm_donors"], d["include_outcomes"]) for d in out} == {(p, f) for p in (0, 3, 5)
                                                                       for f in (False, True)}


def test_config_json_roundtrip():
    for cfg in (FcsConfig(variant="norm"), ForestConfig(pmm_donors=5), JmConfig(), IpwConfig("forest"),
                OracleConfig()):
        back = config_from_json(cfg.to_json())
        assert back == cfg and fingerprint(back) == fingerprint(cfg)
    with pytest.raises(ValueError):
        config_from_json(dict(kind="gain"))


def test_labels():
    assert method_label(FcsConfig()) == "fcs-default_out"
    assert method_label(ForestConfig(pmm_donors=3, include_outcomes=False, visit_order="revmonotone")) == \
        "forest-pmm3_noout_rev"
    assert method_label(IpwConfig(include_outcomes=False)) == "ipw-logistic_noout"


def test_impute_m_override_and_determinism(mixed_dataset):
    a = impute(FcsConfig(), mixed_dataset, ["y"], [1, 2], m=3)
    b = impute(FcsConfig(), mixed_dataset, ["y"], [1, 2], m=3)
    assert len(a) == 3
    assert all(np.array_equal(x.values, y.values) for x, y in zip(a, b))
    with pytest.raises(TypeError):
        impute(IpwConfig(), mixed_dataset, ["y"], [1])
    with pytest.raises(ValueError):
        impute(OracleConfig(), mixed_dataset, ["y"], [1])


def test_pooled_estimates_shapes(small_cohort):
    ds, _, outcomes = small_cohort
    amp = ampute(ds, figure1_plan(A=1, seed=2), 1).dataset
    _, names = estimation_matrix(ds)
    for cfg in (JmConfig(m=2), IpwConfig()):
        res = pooled_estimates(cfg, amp, outcomes, names, [3])
        assert set(res) == {o["name"] for o in outcomes}
        for q, se, ci in res.values():
            assert q.shape == se.shape == (len(names),) and ci.shape == (len(names), 2)
            assert np.all(se > 0) and np.all(ci[:, 0] < q) and np.all(q < ci[:, 1])
