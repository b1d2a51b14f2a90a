import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from akinet.data import (
    EICU,
    MIMIC,
    Dataset,
    PatientRecord,
    apply_inclusion,
    apply_normalization,
    class_sizes,
    derive_bmi_group,
    fit_normalization,
    infer_schema,
    load_csv,
    minority_neighbors,
    prevalence_filter,
    preprocess,
    read_table,
    schema_for,
    smote_oversample,
    synth_generate,
    write_csv,
)
from akinet.errors import DataError, ResamplingError, SchemaError
from akinet.evaluation import auroc
from akinet.models import ArchitectureSpec, build_model, predict_matrix, train
from akinet.optim import Hyperparams
from oracles import knn_bruteforce, smote_geometry

HEADER = ("patient_id,first_icu_stay,gender,age,weight_kg,height_cm,bicarbonate,chloride,creatinine,"
          "glucose,magnesium,potassium,sodium,urea_nitrogen,hemoglobin,platelet_count,white_blood_cells,aki")
ROW = "{id},{stay},{g},{age},{w},{h},24,104,1.1,130,2.0,4.1,139,{bun},11.5,210,8.2,{aki}"


def _row(id="a", stay=1, g="M", age=60, w=80, h=175, bun=18, aki=0):
    return ROW.format(id=id, stay=stay, g=g, age=age, w=w, h=h, bun=bun, aki=aki)


def _write(tmp_path, lines, header=HEADER, name="x.csv"):
    p = tmp_path / name
    p.write_text("\n".join([header] + lines) + "\n")
    return p


# ---- schema

def test_schema_order_and_widths():
    assert MIMIC.names == [
        "gender", "age", "weight", "height", "bmi_group", "bicarbonate", "chloride", "creatinine",
        "glucose", "magnesium", "potassium", "sodium", "urea_nitrogen", "hemoglobin",
        "platelet_count", "white_blood_cells",
    ]
    assert MIMIC.width == 16 and EICU.width == 15
    assert EICU.names == [n for n in MIMIC.names if n != "urea_nitrogen"]
    with pytest.raises(SchemaError):
        schema_for("other")


# ---- CSV

def test_load_three_rows(tmp_path):
    p = _write(tmp_path, [_row("a"), _row("b", g="F", aki=1), _row("c", age=30)])
    ds = load_csv(p, MIMIC)
    assert len(ds) == 3 and ds.X.shape == (3, 16)
    assert ds.X[:, 0].tolist() == [0, 1, 0]
    assert ds.y.tolist() == [0, 1, 0]
    assert ds.X[0, 4] == derive_bmi_group(80, 175)


def test_missing_label_column(tmp_path):
    header = HEADER.rsplit(",", 1)[0]
    p = _write(tmp_path, [_row().rsplit(",", 1)[0]], header=header)
    with pytest.raises(SchemaError, match="aki"):
        load_csv(p, MIMIC)


def test_unparseable_value_names_line(tmp_path):
    p = _write(tmp_path, [_row("a"), _row("b", age="sixty")])
    with pytest.raises(DataError, match="line 3"):
        load_csv(p, MIMIC)


@pytest.mark.parametrize("bad", [{"aki": 2}, {"g": "X"}, {"stay": 3}])
def test_invalid_codes(tmp_path, bad):
    with pytest.raises(DataError):
        load_csv(_write(tmp_path, [_row(**bad)]), MIMIC)


def test_eicu_file_without_urea(tmp_path):
    header = HEADER.replace("urea_nitrogen,", "")
    row = _row().replace(",18,11.5", ",11.5")
    ds = load_csv(_write(tmp_path, [row], header=header), infer_schema(tmp_path / "x.csv"))
    assert ds.schema.variant == "eicu" and ds.X.shape == (1, 15)


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 10_000), st.sampled_from(["mimic", "eicu"]))
def test_write_then_load_round_trip(tmp_path_factory, seed, variant):
    ds = smote_oversample(synth_generate(schema_for(variant), 40, (3, 1), 1.0, seed), seed=seed)
    p = tmp_path_factory.mktemp("rt") / "d.csv"
    write_csv(p, ds, include_derived=True)
    back = load_csv(p, infer_schema(p))
    assert back.records == ds.records


# ---- inclusion and prevalence

def _raw(age=60, stay=1, w=80.0, h=175.0):
    return {"patient_id": "x", "first_icu_stay": stay, "age": age, "weight_kg": w, "height_cm": h}


@pytest.mark.parametrize("age,kept", [(17, False), (18, True), (89, True), (90, False), (None, False)])
def test_age_bounds(age, kept):
    out, tally = apply_inclusion([_raw(age=age)])
    assert bool(out) == kept
    assert tally["age_outside_18_89"] == (not kept)


def test_anthropometry_and_stay():
    _, tally = apply_inclusion([_raw(h=None), _raw(w=0.0), _raw(stay=0), _raw(stay=None)])
    assert tally == {"not_first_icu_stay": 2, "age_outside_18_89": 0, "missing_height_or_weight": 2}


def test_funnel_order():
    # a row failing several criteria is charged to the first stage it meets
    _, tally = apply_inclusion([_raw(age=10, stay=0, h=None)])
    assert tally["not_first_icu_stay"] == 1 and sum(tally.values()) == 1


raw_rows = st.lists(
    st.builds(_raw, age=st.one_of(st.none(), st.integers(0, 110)), stay=st.sampled_from([0, 1, None]),
              w=st.one_of(st.none(), st.floats(-5, 200)), h=st.one_of(st.none(), st.floats(-5, 220))),
    max_size=40,
)


@given(raw_rows)
def test_inclusion_conservation_and_idempotence(rows):
    kept, tally = apply_inclusion(rows)
    assert len(kept) + sum(tally.values()) == len(rows)
    again, tally2 = apply_inclusion(kept)
    assert again == kept and sum(tally2.values()) == 0


def test_prevalence_boundary():
    rows = [{"glucose": 1.0 if i < 199 else None, "sodium": 1.0 if i < 200 else None} for i in range(1000)]
    labs = prevalence_filter(rows, "mimic", candidates=("glucose", "sodium")).lab_features
    assert labs == ["sodium"]


def test_prevalence_drops_absent_urea():
    rows = [{n: 1.0 for n in EICU.lab_features} for _ in range(50)]
    assert prevalence_filter(rows, "eicu") == EICU
    rows[0]["urea_nitrogen"] = 5.0
    assert "urea_nitrogen" not in prevalence_filter(rows, "mimic").names


# ---- BMI

@pytest.mark.parametrize("w,h,code", [(70, 175, 1), (50, 180, 0), (100, 170, 3), (80, 175, 2)])
def test_bmi_examples(w, h, code):
    assert derive_bmi_group(w, h) == code


def test_bmi_cut_points():
    # BMI exactly on a cut point goes to the upper band
    assert derive_bmi_group(18.5, 100) == 1
    assert derive_bmi_group(25, 100) == 2
    assert derive_bmi_group(30, 100) == 3


@pytest.mark.parametrize("w,h", [(0, 170), (70, 0), (-1, 170)])
def test_bmi_rejects_nonpositive(w, h):
    with pytest.raises(ValueError):
        derive_bmi_group(w, h)


# ---- normalization

def test_normalization_on_own_source():
    ds = synth_generate(MIMIC, 300, (1, 1), 1.0, 0)
    stats = fit_normalization(ds, source="fold 0 train")
    Z = apply_normalization(ds, stats)
    cont = stats.continuous
    assert stats.source == "fold 0 train" and stats.n == 300
    assert np.all(np.abs(Z[:, cont].mean(axis=0)) <= 1e-9)
    assert np.all(np.abs(Z[:, cont].std(axis=0) - 1) <= 1e-9)
    assert np.array_equal(Z[:, ~cont], ds.X[:, ~cont])


def test_constant_feature_maps_to_zero():
    recs = [PatientRecord(str(i), (0.0, 50.0, 70.0, 170.0, 1.0) + (4.0,) * 11, i % 2) for i in range(6)]
    Z = apply_normalization(Dataset(MIMIC, recs), fit_normalization(Dataset(MIMIC, recs)))
    assert np.all(np.isfinite(Z)) and np.all(Z[:, 5:] == 0)


def test_test_partition_uses_train_stats():
    train_ds = synth_generate(MIMIC, 300, (1, 1), 1.0, 0)
    test_ds = synth_generate(MIMIC, 300, (9, 1), 1.0, 1)  # shifted class mix shifts the feature means
    Z = apply_normalization(test_ds, fit_normalization(train_ds))
    assert np.abs(Z[:, fit_normalization(train_ds).continuous].mean(axis=0)).max() > 0.1


# ---- SMOTE

def test_smote_reference_cohort_counts():
    ds = synth_generate(MIMIC, 2663, (2505, 158), 2.0, 0)
    assert ds.class_counts() == {0: 158, 1: 2505}
    out = smote_oversample(ds, seed=0)
    assert len(out) == 5010 and out.class_counts() == {0: 2505, 1: 2505}
    assert out.records[:2663] == ds.records
    assert sum(r.synthetic for r in out.records) == 2505 - 158


def test_smote_two_points_segment():
    a = (0.0, 40.0, 60.0, 160.0, 1.0) + tuple(float(i) for i in range(11))
    b = (1.0, 80.0, 90.0, 180.0, 2.0) + tuple(float(2 * i + 3) for i in range(11))
    maj = [PatientRecord(f"m{i}", a, 1) for i in range(10)]
    ds = Dataset(MIMIC, maj + [PatientRecord("p", a, 0), PatientRecord("q", b, 0)])
    out = smote_oversample(ds, k=1, seed=3)
    A, B = np.array(a), np.array(b)
    cont = ~MIMIC.categorical_mask
    for r in out.records[12:]:
        v = np.array(r.features)
        u = (v[3] - A[3]) / (B[3] - A[3])
        assert 0 <= u <= 1
        np.testing.assert_allclose(v[cont], (A + u * (B - A))[cont], rtol=0, atol=1e-9)
        assert v[0] in (0, 1) and v[4] in (0, 1, 2, 3)


def test_smote_needs_two_minority():
    recs = [PatientRecord(str(i), (0.0,) * 16, int(i > 0)) for i in range(5)]
    with pytest.raises(ResamplingError):
        smote_oversample(Dataset(MIMIC, recs))


def test_smote_balanced_input_unchanged():
    ds = synth_generate(MIMIC, 100, (1, 1), 1.0, 0)
    assert smote_oversample(ds).records == ds.records


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 7), st.sampled_from([(5, 1), (1, 4), (3, 2)]))
def test_smote_geometry_and_balance(seed, k, ratio):
    ds = synth_generate(MIMIC, 80, ratio, 1.0, seed)
    out = smote_oversample(ds, k=k, seed=seed)
    c = out.class_counts()
    assert c[0] == c[1] == max(ds.class_counts().values())
    assert out.records[:len(ds)] == ds.records
    assert smote_geometry(ds, out, k) == 0


def test_smote_deterministic():
    ds = synth_generate(MIMIC, 200, (4, 1), 1.0, 0)
    assert smote_oversample(ds, seed=9).records == smote_oversample(ds, seed=9).records
    assert smote_oversample(ds, seed=9).records != smote_oversample(ds, seed=10).records


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000), st.integers(3, 30), st.integers(1, 4))
def test_neighbors_match_bruteforce(seed, m, k):
    # coarse grid values force distance ties
    Z = np.random.default_rng(seed).integers(0, 3, size=(m, 2)).astype(float)
    k = min(k, m - 1)
    assert np.array_equal(minority_neighbors(Z, k, chunk=4), knn_bruteforce(Z, k))


# ---- synthetic generator

def test_class_sizes_round_toward_majority():
    assert class_sizes(1000, (9, 1)) == (900, 100)
    assert class_sizes(10, (2, 1)) == (7, 3)
    assert class_sizes(10, (1, 2)) == (3, 7)
    assert class_sizes(2663, (2505, 158)) == (2505, 158)


def test_synth_shape_and_determinism():
    a = synth_generate(EICU, 1000, (9, 1), 2.0, 4)
    assert a.class_counts() == {0: 100, 1: 900}
    assert a.X.shape == (1000, 15)
    assert a.records == synth_generate(EICU, 1000, (9, 1), 2.0, 4).records
    assert a.records != synth_generate(EICU, 1000, (9, 1), 2.0, 5).records


def test_synth_values_pass_inclusion():
    ds = synth_generate(MIMIC, 500, (1, 1), 2.0, 0)
    X = ds.X
    assert np.all((X[:, 1] >= 18) & (X[:, 1] <= 89))
    assert np.all(X[:, 2] > 0) and np.all(X[:, 3] > 0)


def test_synth_rejects_small_n():
    with pytest.raises(DataError):
        synth_generate(MIMIC, 9)


def _fit_auroc(separation):
    tr = synth_generate(MIMIC, 1000, (1, 1), separation, 0)
    te = synth_generate(MIMIC, 1000, (1, 1), separation, 1)
    stats = fit_normalization(tr)
    m = build_model(ArchitectureSpec("mlp", 8, 16), 0)
    train(m, apply_normalization(tr, stats), tr.y, Hyperparams(epochs=5))
    return auroc(predict_matrix(m, apply_normalization(te, stats)), te.y)


def test_zero_separation_is_chance():
    assert abs(_fit_auroc(0.0) - 0.5) <= 0.07


def test_separation_is_learnable():
    assert _fit_auroc(2.0) > 0.9


# ---- preprocess

def test_preprocess_funnel(tmp_path):
    lines = [_row(f"r{i}", aki=int(i % 3 == 0)) for i in range(12)]
    lines += [_row("young", age=16), _row("old", age=95), _row("tall", h=""), _row("again", stay=0),
              _row("nobun", bun="")]
    rows = read_table(_write(tmp_path, lines), MIMIC)
    ds, rep = preprocess(rows, "mimic", seed=0)
    assert rep.input_rows == 17
    assert rep.kept + sum(rep.excluded.values()) == rep.input_rows
    assert rep.excluded == {"not_first_icu_stay": 1, "age_outside_18_89": 2, "missing_height_or_weight": 1,
                            "missing_selected_feature": 1}
    assert rep.class_counts_before == {0: 8, 1: 4}
    assert ds.class_counts() == {0: 8, 1: 8} and rep.synthetic_added == 4


def test_preprocess_impute_keeps_rows(tmp_path):
    lines = [_row(f"r{i}", aki=i % 2, bun=10 + i) for i in range(6)] + [_row("nobun", bun="")]
    ds, rep = preprocess(read_table(_write(tmp_path, lines), MIMIC), "mimic", impute=True, smote=False)
    assert rep.kept == 7
    assert ds.records[-1].features[MIMIC.index("urea_nitrogen")] == float(np.median([10, 11, 12, 13, 14, 15]))


def test_preprocess_balanced_adds_nothing(tmp_path):
    lines = [_row(f"r{i}", aki=i % 2) for i in range(8)]
    ds, rep = preprocess(read_table(_write(tmp_path, lines), MIMIC), "mimic")
    assert rep.synthetic_added == 0 and len(ds) == 8
