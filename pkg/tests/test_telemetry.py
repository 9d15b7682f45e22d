import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra import numpy as hnp

from _builders import make_series
from evci_soc.errors import EmptyInputError, ParseError, RangeError, ShapeError
from evci_soc.telemetry import (
    CHANNELS,
    PORT_BOARD,
    PORTS,
    PortId,
    Standardizer,
    TelemetrySeries,
    compute_delta_soc,
    csv_columns,
    dumps_series,
    load_series,
    loads_series,
    serialize_series,
    split_dataset,
    standardize,
)

EV0 = PortId.EV0_Terra53


def test_six_ports_on_four_boards():
    assert len(set(PORTS)) == 6
    assert sorted(set(PORT_BOARD.values())) == [0, 1, 2, 3]
    assert [p.board for p in PORTS] == [0, 1, 1, 2, 2, 3]
    assert PortId.parse("EV1_TerraHP-Cord_a") is PortId.EV1_TerraHP_Cord_a
    assert PortId.parse("EV1_TerraHP_Cord_a") is PortId.EV1_TerraHP_Cord_a
    with pytest.raises(ValueError):
        PortId.parse("EV9")


def test_channel_tags():
    assert CHANNELS["i_pcc"] == "GOOSE" and CHANNELS["i_bess"] == "GOOSE"
    assert CHANNELS[f"soc_{PORTS[0].value}"] == "OCPP"


@pytest.mark.parametrize("soc,cs,values,mask", [
    ([50, 50, 50], [1, 1, 1], [0, 0], [0, 0]),
    ([20.0, 20.1, 20.3], [1, 1, 1], [20.1 - 20.0, 20.3 - 20.1], [0, 0]),
    ([0, 45, 45.1], [0, 1, 1], [45, 45.1 - 45], [1, 0]),
])
def test_delta_soc_examples(soc, cs, values, mask):
    d = compute_delta_soc(make_series(soc, cs), EV0)
    assert d.port is EV0
    np.testing.assert_array_equal(d.values, values)
    np.testing.assert_array_equal(d.transition_mask, np.array(mask, dtype=bool))


def test_delta_soc_too_short():
    with pytest.raises(EmptyInputError):
        compute_delta_soc(make_series([50.0], [1]), EV0)


soc_cs = st.integers(2, 60).flatmap(lambda n: st.tuples(
    hnp.arrays(float, n, elements=st.floats(0, 100)),
    hnp.arrays(np.int8, n, elements=st.integers(0, 1)),
))


@given(soc_cs)
def test_delta_reconstruction_and_mask(data):
    soc, cs = data
    d = compute_delta_soc(make_series(soc, cs), EV0)
    rebuilt = soc[0] + np.concatenate([[0.0], np.cumsum(d.values)])
    assert np.max(np.abs(rebuilt - soc)) < 1e-9
    for t in range(len(d)):
        assert d.transition_mask[t] == (cs[t] != cs[t + 1])


def test_standardize_examples():
    scaler, out = standardize(np.array([[1.0], [2.0], [3.0]]), np.array([[1.0], [2.0], [3.0]]))
    assert scaler.mean[0] == 2.0
    assert scaler.scale[0] == pytest.approx(np.sqrt(2 / 3))
    assert round(scaler.scale[0], 5) == 0.81650
    np.testing.assert_allclose(out[:, 0], [-1.22474, 0, 1.22474], atol=1e-5)


def test_zero_variance_column():
    scaler, out = standardize(np.full((3, 1), 5.0), np.full((3, 1), 5.0))
    assert scaler.scale[0] == 1.0
    np.testing.assert_array_equal(out, 0.0)


def test_standardize_apply_to_train_matches_transform(rng):
    X = rng.normal(size=(20, 3))
    scaler, out = standardize(X, X)
    np.testing.assert_array_equal(out, scaler.transform(X))


def test_standardize_column_mismatch():
    with pytest.raises(ShapeError):
        standardize(np.ones((3, 2)), np.ones((3, 3)))


@given(hnp.arrays(float, st.tuples(st.integers(2, 40), st.integers(1, 4)),
                  elements=st.floats(-1e4, 1e4)))
def test_standardizer_idempotent(X):
    Z = Standardizer.fit(X).transform(X)
    again = Standardizer.fit(Z)
    assert np.all(np.abs(Z.mean(axis=0)) < 1e-9)
    varying = Z.std(axis=0) > 1e-6
    assert np.all(np.abs(again.mean) < 1e-9)
    assert np.all(np.abs(again.scale[varying] - 1) < 1e-9)
    assert np.all(again.scale > 0)


def test_split_five_days():
    s = make_series(n=5 * 86400)
    train, test = split_dataset(s)
    assert len(train) == 345600 and len(test) == 86400
    assert test.t[0] == 345600


def test_split_zero_train():
    s = make_series(n=100)
    train, test = split_dataset(s, 0, 40)
    assert len(train) == 0
    np.testing.assert_array_equal(test.t, np.arange(40))


def test_split_too_long():
    with pytest.raises(RangeError):
        split_dataset(make_series(n=5 * 86400), 10 * 86400, 0)


def test_gap_in_timestamps_rejected():
    s = make_series(n=4)
    with pytest.raises(RangeError):
        TelemetrySeries(np.array([0, 1, 3, 4]), s.i_pcc, s.i_bess, s.i_ev, s.p_ev, s.q_ev, s.cs, s.soc_ev)


def test_record_view(day_run):
    _, res = day_run
    rec = res.series[1000]
    assert rec.timestamp == 1000
    assert len(rec.ports) == 6
    assert set(rec.ports) == set(PORTS)


@given(st.integers(1, 30).flatmap(lambda n: hnp.arrays(
    float, (n, 6), elements=st.floats(-1e6, 1e6, allow_subnormal=True))))
def test_roundtrip_identity(currents):
    n = len(currents)
    s = make_series(soc=np.linspace(0, 100, n), cs=np.arange(n) % 2, i_ev=currents,
                    i_bess=currents[:, 0] * 0.5)
    back = loads_series(dumps_series(s))
    assert back.equals(s)


def test_roundtrip_file_keeps_metadata(day_run, tmp_path):
    _, res = day_run
    part = res.series.slice(0, 500)
    serialize_series(part, tmp_path / "t.csv")
    back = load_series(tmp_path / "t.csv")
    assert back.equals(part)
    assert back.meta == part.meta


def test_missing_column(tmp_path):
    text = dumps_series(make_series(n=3))
    header = csv_columns()
    lines = text.splitlines()
    k = lines.index(",".join(header))
    lines[k] = ",".join(header[:-1])
    lines[k + 1:] = [",".join(ln.split(",")[:-1]) for ln in lines[k + 1:]]
    with pytest.raises(ParseError, match="missing"):
        loads_series("\n".join(lines))


def test_bad_row_names_line():
    lines = dumps_series(make_series(n=3)).splitlines()
    lines[-1] = lines[-1].replace("0", "x", 1)
    with pytest.raises(ParseError, match=f"line {len(lines)}"):
        loads_series("\n".join(lines))


def test_empty_file(tmp_path):
    (tmp_path / "e.csv").write_text("")
    with pytest.raises(EmptyInputError):
        load_series(tmp_path / "e.csv")
