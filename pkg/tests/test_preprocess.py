import csv
import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ctranatd import N_FEATURES
from ctranatd.errors import ConfigurationError, EmptyDatasetError, EncodingError, FitError, SchemaError
from ctranatd.nn.tensor import RngState
from ctranatd.preprocess import (
    ENV_CHANNELS,
    FLOW_FEATURES,
    SYNTH_HEADER,
    EnvChannel,
    EnvironmentConfig,
    FlowRecord,
    ProtocolTable,
    WindowedDataset,
    augment_environment,
    build_dataset,
    encode_ip,
    fit_standardizer,
    fnv1a_32,
    label_window,
    map_protocol,
    normalize_port,
    parse_csv,
    select_windows,
    stratified_split_indices,
    write_csv,
)
from ctranatd.synthetic import SynthConfig, generate_records


def record(ts=0.0, abnormal=False, features=None, env=None, proto="TCP", src="10.0.0.1"):
    return FlowRecord(
        timestamp=float(ts),
        src_ip=src,
        dst_ip="192.168.10.1",
        src_port=40000,
        dst_port=443,
        protocol=proto,
        features=tuple(features) if features is not None else (1.0,) * len(FLOW_FEATURES),
        environment=tuple(env) if env is not None else (0.0,) * len(ENV_CHANNELS),
        abnormal=abnormal,
        attack="DoS" if abnormal else "none",
    )


def write_rows(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def synth_row(ts, feature_cell="1.5", label="normal"):
    return (
        [ts, "10.0.0.1", 40000, "192.168.10.2", 443, "tcp"]
        + [feature_cell] + ["2.0"] * (len(FLOW_FEATURES) - 1)
        + ["1000.0"] * len(ENV_CHANNELS)
        + [label, "none" if label == "normal" else "DoS"]
    )


# --- parsing ---------------------------------------------------------------


class TestParse:
    def test_three_rows(self, tmp_path):
        p = tmp_path / "a.csv"
        write_rows(p, SYNTH_HEADER, [synth_row(t) for t in (3, 1, 2)])
        res = parse_csv(p, "synthetic")
        assert len(res.records) == 3 and res.skipped == 0
        assert [r.timestamp for r in res.records] == [1.0, 2.0, 3.0]
        assert res.records[0].protocol == "TCP" and res.records[0].features[0] == 1.5

    def test_non_numeric_cell_skipped(self, tmp_path, caplog):
        p = tmp_path / "a.csv"
        write_rows(p, SYNTH_HEADER, [synth_row(1), synth_row(2, "abc"), synth_row(3)])
        res = parse_csv(p, "synthetic")
        assert (len(res.records), res.skipped) == (2, 1)
        assert "skipped" in caplog.text

    @pytest.mark.parametrize("cell", ["nan", "inf", "-Infinity"])
    def test_non_finite_skipped(self, tmp_path, cell):
        p = tmp_path / "a.csv"
        write_rows(p, SYNTH_HEADER, [synth_row(1, cell), synth_row(2)])
        assert parse_csv(p).skipped == 1

    def test_header_only(self, tmp_path):
        p = tmp_path / "a.csv"
        write_rows(p, SYNTH_HEADER, [])
        res = parse_csv(p)
        assert res.records == [] and res.skipped == 0

    def test_missing_column_named(self, tmp_path):
        p = tmp_path / "a.csv"
        header = [h for h in SYNTH_HEADER if h != "Flow Duration"]
        write_rows(p, header, [])
        with pytest.raises(SchemaError) as e:
            parse_csv(p)
        assert e.value.column == "Flow Duration"

    def test_missing_file(self, tmp_path):
        with pytest.raises(OSError):
            parse_csv(tmp_path / "nope.csv")

    def test_cicids_layout(self, tmp_path):
        # CICIDS2017 headers carry leading spaces and extra columns
        header = [" Timestamp", " Source IP", " Source Port", " Destination IP", " Destination Port",
                  " Protocol", "Flow ID"] + [f" {n}" for n in FLOW_FEATURES] + [" Label"]
        rows = []
        for i, lab in enumerate(["BENIGN", "DDoS", "DoS Hulk", "PortScan", "Bot"]):
            rows.append(["03/07/2017 08:55:%02d" % i,
                         "172.16.0.1", 1000, "192.168.10.50", 80, 6, "x"]
                        + ["1"] * len(FLOW_FEATURES) + [lab])
        p = tmp_path / "c.csv"
        write_rows(p, header, rows)
        res = parse_csv(p, "cicids")
        assert res.skipped == 0
        assert [(r.abnormal, r.attack) for r in res.records] == [
            (False, "none"), (True, "DDoS"), (True, "DoS"), (True, "PortScan"), (True, "other"),
        ]
        assert all(r.environment is None for r in res.records)

    def test_unknown_mode(self, tmp_path):
        with pytest.raises(ConfigurationError):
            parse_csv(tmp_path / "x.csv", "pcap")

    def test_write_read_round_trip(self, tmp_path):
        recs = generate_records(SynthConfig(records=90, seed=3))
        p = tmp_path / "r.csv"
        write_csv(recs, p)
        assert parse_csv(p).records == recs


# --- field encoders ----------------------------------------------------------


def chi_square_99(df):
    # Wilson-Hilferty approximation of the 0.99 quantile
    z = 2.326347874
    return df * (1 - 2 / (9 * df) + z * math.sqrt(2 / (9 * df))) ** 3


class TestEncoders:
    def test_fnv_reference_vectors(self):
        assert fnv1a_32(b"") == 0x811C9DC5
        assert fnv1a_32(b"a") == 0xE40C292C
        assert fnv1a_32(b"foobar") == 0xBF9CF968

    @given(st.ip_addresses(v=4))
    def test_ip_deterministic_and_in_range(self, addr):
        v = encode_ip(str(addr))
        assert v == encode_ip(str(addr)) and 0.0 <= v <= 1.0

    def test_ip_known_value(self):
        v = encode_ip("192.168.1.1")
        assert 0.0 <= v <= 1.0
        assert v == (fnv1a_32(b"192.168.1.1") % 65536) / 65535

    def test_ip_hash_uniformity(self):
        g = np.random.default_rng(99)
        octets = g.integers(0, 256, size=(100_000, 4))
        vals = np.array([encode_ip(".".join(map(str, o))) for o in octets])
        counts, _ = np.histogram(vals, bins=100, range=(0.0, 1.0))
        expected = len(vals) / 100
        stat = ((counts - expected) ** 2 / expected).sum()
        assert stat < chi_square_99(99)

    @pytest.mark.parametrize("bad", ["", "1.2.3", "300.1.1.1", "::1"])
    def test_ip_rejects(self, bad):
        with pytest.raises(EncodingError):
            encode_ip(bad)

    def test_ports(self):
        assert normalize_port(0) == 0.0
        assert normalize_port(65535) == 1.0
        assert normalize_port(32768) == pytest.approx(0.500008, abs=5e-7)
        assert normalize_port(32768) == float(Fraction(32768, 65535))
        for bad in (-1, 65536):
            with pytest.raises(ValueError):
                normalize_port(bad)

    def test_protocol_first_seen(self, caplog):
        t = ProtocolTable()
        ids = [map_protocol(x, t, fitting=True) for x in ["TCP", "UDP", "TCP"]]
        assert ids == [1, 2, 1] and t.ids == {"TCP": 1, "UDP": 2}
        t.frozen = True
        assert map_protocol("SCTP", t) == 0 and "SCTP" in caplog.text
        assert map_protocol("SCTP", t, fitting=True) == 0

    @given(st.lists(st.sampled_from(["TCP", "UDP", "ICMP", "GRE", "17", "6"]), min_size=1))
    def test_protocol_injective(self, tags):
        t = ProtocolTable().fit(tags)
        assert len(set(t.ids.values())) == len(t.ids) == len(set(tags))


# --- standardisation ---------------------------------------------------------


class TestStandardizer:
    def test_population_std(self):
        recs = [record(features=[v] + [5.0] * (len(FLOW_FEATURES) - 1)) for v in (1.0, 2.0, 3.0)]
        s = fit_standardizer(recs)
        assert s.mean[0] == 2.0
        assert s.std[0] == pytest.approx(math.sqrt(2 / 3), rel=1e-15)
        # constant column: std 1, encodes to zero
        assert s.std[1] == 1.0
        enc = s.encode_many(recs)
        assert enc.shape == (3, N_FEATURES)
        assert not enc[:, 1].any()

    def test_idempotent(self):
        recs = generate_records(SynthConfig(records=120, seed=1))
        a, b = fit_standardizer(recs), fit_standardizer(recs)
        assert a.to_dict() == b.to_dict()

    def test_errors(self):
        with pytest.raises(FitError):
            fit_standardizer([])
        r = record()
        with pytest.raises(FitError):
            fit_standardizer([FlowRecord(**{**r.__dict__, "environment": None})])

    def test_column_layout(self):
        s = fit_standardizer([record()])
        kinds = [k for _, k in s.columns]
        assert len(kinds) == 71
        assert kinds.count("zscore") == 66 and kinds.count("ip_hash") == 2
        assert kinds[-3:] == ["minmax", "minmax", "protocol_map"]

    def test_schema_round_trip(self):
        s = fit_standardizer(generate_records(SynthConfig(records=60, seed=2)))
        from ctranatd.preprocess import FeatureSchema

        back = FeatureSchema.from_dict(s.to_dict())
        assert back.to_dict() == s.to_dict() and back.protocols.frozen


# --- environment -------------------------------------------------------------


class TestEnvironment:
    def test_normal_within_band(self):
        env = augment_environment([record(t) for t in range(200)], None, RngState(0))
        cfg = EnvironmentConfig()
        arr = np.array([r.environment for r in env])
        for j, ch in enumerate(cfg.channels):
            assert np.all((arr[:, j] >= ch.low) & (arr[:, j] <= ch.high))
        p = arr[:, ENV_CHANNELS.index("atmosphere_pressure_hpa")]
        assert p.min() >= 990 and p.max() <= 1020

    def test_abnormal_excursion(self):
        cfg = EnvironmentConfig(excursion_probability=1.0)
        env = augment_environment([record(t, abnormal=True) for t in range(100)], cfg, RngState(0))
        arr = np.array([r.environment for r in env])
        for j, ch in enumerate(cfg.channels):
            assert np.all((arr[:, j] < ch.low) | (arr[:, j] > ch.high))

    def test_same_seed_same_output(self):
        recs = [record(t, abnormal=t % 3 == 0) for t in range(50)]
        assert augment_environment(recs, None, RngState(4)) == augment_environment(recs, None, RngState(4))

    def test_bad_band(self):
        chans = list(EnvironmentConfig().channels)
        chans[0] = EnvChannel(chans[0].name, 5.0, 1.0)
        with pytest.raises(ConfigurationError):
            EnvironmentConfig(channels=tuple(chans)).validate()


# --- windows -----------------------------------------------------------------


class TestWindows:
    def test_label_rule(self):
        assert label_window([0] * 60) == 0
        assert label_window([1] * 60) == 1
        assert label_window([1] * 30 + [0] * 30) == 1
        assert label_window([1] * 29 + [0] * 31) == 0

    @given(st.lists(st.integers(0, 1), min_size=60, max_size=60))
    def test_label_matches_majority_oracle(self, labels):
        assert label_window(labels) == (Fraction(sum(labels), 60) >= Fraction(1, 2))

    def test_exact_bin(self):
        recs = [record(t) for t in range(60)]
        sel = select_windows(recs, RngState(0))
        assert sel.groups == [recs] and sel.dropped == 0

    def test_short_bin_dropped(self):
        sel = select_windows([record(t) for t in range(59)], RngState(0))
        assert sel.groups == [] and sel.dropped == 1

    def test_big_bin_seeded(self):
        recs = [record(t / 2) for t in range(120)]
        a = select_windows(recs, RngState(5)).groups[0]
        b = select_windows(recs, RngState(5)).groups[0]
        assert a == b and len(a) == 60
        assert [r.timestamp for r in a] == sorted(r.timestamp for r in a)

    def test_synthetic_minutes(self):
        recs = generate_records(SynthConfig(records=6000, seed=0))
        assert select_windows(recs, RngState(0)).bins == 100

    @settings(max_examples=40)
    @given(st.integers(0, 60), st.integers(1, 60), st.floats(0.05, 0.5), st.integers(0, 2**32))
    def test_stratified_split(self, n_pos, n_neg, fraction, seed):
        labels = np.array([1] * n_pos + [0] * n_neg)
        keep, held = stratified_split_indices(labels, fraction, RngState(seed))
        assert sorted(np.r_[keep, held].tolist()) == list(range(len(labels)))
        if n_pos and n_neg:
            assert labels[held].sum() == round(fraction * n_pos)


def test_build_dataset_leakage_guard():
    recs = generate_records(SynthConfig(records=3000, seed=8))
    ds = build_dataset(recs, seed=8)
    assert ds.windows.shape == (50, 60, 71)
    fit_part = ds.subset(~ds.is_test & ~ds.is_val)
    assert ds.stats["train_windows"] == len(fit_part) == 32
    assert ds.stats["val_windows"] == int(ds.is_val.sum()) == 8
    assert ds.stats["test_windows"] == len(ds.test_part()) == 10
    assert not np.any(ds.is_test & ds.is_val)
    n_z = 66
    # the schema was fitted on exactly the training windows: their z-scored
    # columns are centred with unit population std; validation/test columns are not
    flat = fit_part.windows[:, :, :n_z].reshape(-1, n_z)
    np.testing.assert_allclose(flat.mean(axis=0), 0.0, atol=1e-9)
    np.testing.assert_allclose(flat.std(axis=0), 1.0, atol=1e-9)
    held = ds.subset(ds.is_val).windows[:, :, :n_z].reshape(-1, n_z).mean(axis=0)
    assert np.abs(held).max() > 1e-6


def test_build_dataset_deterministic(tmp_path):
    recs = generate_records(SynthConfig(records=1200, seed=1))
    a, b = build_dataset(recs, seed=2), build_dataset(recs, seed=2)
    assert np.array_equal(a.windows, b.windows) and np.array_equal(a.is_test, b.is_test)
    assert np.array_equal(a.is_val, b.is_val)
    a.save(tmp_path / "a.npz")
    b.save(tmp_path / "b.npz")
    assert (tmp_path / "a.npz").read_bytes() == (tmp_path / "b.npz").read_bytes()
    back = WindowedDataset.load(tmp_path / "a.npz")
    assert np.array_equal(back.windows, a.windows) and back.stats == a.stats
    assert np.array_equal(back.is_val, a.is_val)


def test_build_dataset_without_validation():
    ds = build_dataset(generate_records(SynthConfig(records=1200, seed=1)), seed=2, val_fraction=0.0)
    assert not ds.is_val.any() and ds.stats["val_windows"] == 0


def test_build_dataset_empty():
    with pytest.raises(EmptyDatasetError):
        build_dataset([record(t) for t in range(30)], seed=0)


def test_synth_fraction_zero_all_normal():
    recs = generate_records(SynthConfig(records=600, attack_fraction=0.0))
    assert not any(r.abnormal for r in recs)


def test_synth_attack_minutes():
    recs = generate_records(SynthConfig(records=6000, attack_fraction=0.3, attack="PortScan"))
    assert sum(r.abnormal for r in recs) == 30 * 60
    assert {r.attack for r in recs if r.abnormal} == {"PortScan"}


def test_synth_bad_config():
    with pytest.raises(ConfigurationError):
        generate_records(SynthConfig(attack_fraction=1.5))
