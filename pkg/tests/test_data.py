import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ince.data import (
    Column,
    FitStatistics,
    RawTable,
    TabularSchema,
    load_csv,
    prepare_split,
    preprocess,
    split_kfold,
    train_test_split,
)
from ince.datasets import load_adult, load_titanic
from ince.errors import ContractViolation, ParseError, SchemaError


def _schema(task="regression"):
    return TabularSchema(
        [Column("x", "numerical"), Column("c", "categorical"), Column("y", "target")], task
    )


class TestSchema:
    def test_text_round_trip(self, tmp_path):
        schema = TabularSchema(
            [Column("a", "numerical"), Column("b", "categorical"), Column("t", "target")], "multiclass", 3
        )
        path = tmp_path / "s.ini"
        schema.save(path)
        again = TabularSchema.load(path)
        assert again == schema
        assert again.feature_names == ["a", "b"]

    def test_feature_order_numericals_first(self):
        schema = TabularSchema(
            [Column("c1", "categorical"), Column("n1", "numerical"), Column("t", "target"),
             Column("n2", "numerical")], "binary"
        )
        assert schema.feature_names == ["n1", "n2", "c1"]

    def test_missing_schema_names_path(self, tmp_path):
        with pytest.raises(SchemaError, match="nope.ini"):
            TabularSchema.load(tmp_path / "nope.ini")

    @pytest.mark.parametrize("cols", [
        [Column("a", "numerical")],
        [Column("a", "numerical"), Column("t", "target"), Column("u", "target")],
        [Column("t", "target")],
        [Column("a", "weird"), Column("t", "target")],
    ])
    def test_invalid(self, cols):
        with pytest.raises(SchemaError):
            TabularSchema(cols, "binary")


class TestLoadCsv:
    def test_three_rows(self, tmp_path):
        p = tmp_path / "d.csv"
        p.write_text("x,c,y\n1,a,0.5\n,b,1.5\n3,,2\n")
        raw = load_csv(p, _schema())
        assert raw.n_rows == 3
        assert np.isnan(raw.columns["x"][1])
        assert raw.columns["c"][2] is None

    def test_ragged_row_line_number(self, tmp_path):
        p = tmp_path / "d.csv"
        p.write_text("x,c,y\n1,a,0.5\n2,b\n")
        with pytest.raises(ParseError, match=":3:"):
            load_csv(p, _schema())

    def test_missing_column(self, tmp_path):
        p = tmp_path / "d.csv"
        p.write_text("x,y\n1,2\n")
        with pytest.raises(SchemaError, match="'c'"):
            load_csv(p, _schema())


def _raw(x, c, y, task="regression"):
    return RawTable.from_columns({"x": x, "c": c, "y": y}, _schema(task))


class TestPreprocess:
    def test_zscore_example(self):
        ds = preprocess(_raw([1, 2, 3], ["a", "a", "a"], [0, 0, 0]), _schema())
        # mean 2, population std sqrt(2/3) = 0.81650
        np.testing.assert_allclose(ds.numerical[:, 0], [-1.224744871391589, 0.0, 1.224744871391589],
                                   rtol=0, atol=1e-12)

    def test_lexicographic_codes(self):
        ds = preprocess(_raw([1, 2, 3], ["b", "a", "b"], [0, 0, 0]), _schema())
        np.testing.assert_array_equal(ds.categorical[:, 0], [2, 1, 2])
        assert ds.cardinalities == [3]

    def test_missing_becomes_zero(self):
        ds = preprocess(_raw([1, None, 3], ["b", None, "b"], [0, 0, 0]), _schema())
        assert ds.numerical[1, 0] == 0.0
        assert ds.categorical[1, 0] == 0

    def test_unseen_category(self):
        schema = _schema()
        train = preprocess(_raw([1, 2], ["a", "b"], [0, 1]), schema)
        test = preprocess(_raw([1], ["zzz"], [0]), schema, train.stats)
        assert test.categorical[0, 0] == 0
        with pytest.raises(SchemaError, match="zzz"):
            preprocess(_raw([1], ["zzz"], [0]), schema, train.stats, strict=True)

    def test_zero_variance_warns(self):
        with pytest.warns(UserWarning, match="zero variance"):
            ds = preprocess(_raw([5, 5, 5], ["a", "b", "a"], [0, 1, 2]), _schema())
        assert ds.stats.stds["x"] == 1.0
        assert ds.stats.warnings

    def test_idempotent_given_statistics(self):
        raw = _raw([1.5, -2, 7, 0.25], ["q", "r", "q", None], [1, 2, 3, 4])
        first = preprocess(raw, _schema())
        again = preprocess(raw, _schema(), first.stats)
        np.testing.assert_array_equal(first.numerical, again.numerical)
        np.testing.assert_array_equal(first.categorical, again.categorical)

    def test_statistics_json_round_trip(self, tmp_path):
        ds = preprocess(_raw([1, 2, 4], ["b", "a", "b"], [0, 1, 0], "binary"), _schema("binary"))
        ds.stats.save(tmp_path / "stats.json")
        assert FitStatistics.load(tmp_path / "stats.json") == ds.stats

    @settings(max_examples=30, deadline=None)
    @given(st.lists(st.floats(-1e3, 1e3), min_size=3, max_size=40).filter(lambda v: np.std(v) > 1e-3))
    def test_train_columns_standardized(self, values):
        ds = preprocess(_raw(values, ["a"] * len(values), [0.0] * len(values)), _schema())
        assert abs(ds.numerical[:, 0].mean()) < 1e-9
        assert abs(ds.numerical[:, 0].std() - 1.0) < 1e-9


class TestFolds:
    def test_even_sizes(self):
        folds = split_kfold(np.arange(10) % 3, 5, seed=0, stratify=False)
        assert np.bincount(folds).tolist() == [2] * 5

    def test_deterministic(self):
        y = np.arange(30) % 2
        np.testing.assert_array_equal(split_kfold(y, 5, 7), split_kfold(y, 5, 7))
        assert not np.array_equal(split_kfold(y, 5, 7), split_kfold(y, 5, 8))

    def test_stratified(self):
        y = np.array([1] * 6 + [0] * 4)
        folds = split_kfold(y, 2, seed=3)
        for f in range(2):
            assert (y[folds == f] == 1).sum() == 3
            assert (y[folds == f] == 0).sum() == 2

    def test_small_class_falls_back(self):
        y = np.array([0] * 9 + [1])
        with pytest.warns(UserWarning, match="unstratified"):
            folds = split_kfold(y, 5, seed=0)
        assert np.bincount(folds).tolist() == [2] * 5

    def test_too_few_rows(self):
        with pytest.raises(ContractViolation):
            split_kfold(np.zeros(3), 5, 0)

    def test_split_disjoint(self):
        y = np.arange(50) % 2
        tr, te = train_test_split(y, 0.2, 0)
        assert len(np.intersect1d(tr, te)) == 0
        assert len(tr) + len(te) == 50
        assert len(te) == 10


class TestBundledDatasets:
    def test_titanic(self):
        raw, schema = load_titanic()
        assert raw.n_rows == 891
        assert schema.n_features == 8
        assert set(raw.columns["title"]) <= {"Mr", "Mrs", "Miss", "Master", "Rare"}

    def test_adult_subsample(self):
        raw, schema = load_adult(n_rows=500, seed=1)
        assert raw.n_rows == 500
        assert schema.n_features == 14
        assert set(raw.columns["class"]) == {"<=50K", ">50K"}

    def test_prepare_split_uses_train_statistics(self):
        raw, schema = load_titanic()
        tr, te = train_test_split(raw.columns[schema.target_name], 0.25, 0)
        train, test = prepare_split(raw, schema, tr, te)
        assert abs(train.numerical.mean(axis=0)).max() < 1e-9
        assert test.cardinalities == train.cardinalities
