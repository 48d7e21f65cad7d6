import csv
import io
import json
import math
import textwrap

import pytest

from gwpcn.cli import SWEEP_HEADER, ConfigError, main, parse_config

NETWORK = """
[network]
p_b_dbm = 30.0
sigma2_dbm_hz = -160.0
bandwidth_hz = 1e6
gamma_db = 9.8
"""

SINGLE_GAMMA_ONE = """
[network]
p_b_dbm = 30.0
sigma2_dbm_hz = -160.0
bandwidth_hz = 1e6
gamma_db = 0.0

[[users]]
eta = 0.1
d_meters = 10.0
h_gain = 1e-6
g_gain = 1e-6
"""

TWO_USER = """
[network]
p_b_dbm = 20.0
sigma2_dbm_hz = -160.0
bandwidth_hz = 1e6
gamma_db = 9.8
e_max_joules = 1e-6
fading = 1.0
[[users]]
eta = 0.5
e_budget_joules = 1e-7
d_meters = 5.0

[[users]]
eta = 0.5
e_budget_joules = 1e-7
d_meters = 10.0
"""

SWEEP = NETWORK + """
[[users]]
eta = 0.5
d_meters = 10.0

[[users]]
eta = 0.5
d_meters = 5.0

[sweep]
param = "beta"
values = [2.0, 3.0]
realizations = 3
seed = 11
problems = ["p1", "p3", "p3_maxmin"]
"""


def write(tmp_path, text, name="cfg.toml"):
    p = tmp_path / name
    p.write_text(textwrap.dedent(text))
    return p


def test_minimal_config_builds_instance(tmp_path):
    cfg = parse_config(write(tmp_path, NETWORK + "[[users]]\neta = 0.5\nd_meters = 10.0\n"))
    inst = cfg.instance(seed=3)
    assert inst.k == 1 and inst.alpha[0] > 0
    assert inst.sigma2 == pytest.approx(1e-13)
    assert inst.gamma_gap == pytest.approx(10 ** 0.98)
    assert cfg.sweep is None


def test_eta_out_of_range_names_the_field(tmp_path):
    with pytest.raises(ConfigError, match=r"users\[0\]\.eta"):
        parse_config(write(tmp_path, NETWORK + "[[users]]\neta = 1.5\nd_meters = 10.0\n"))


def test_unknown_key_rejected(tmp_path):
    with pytest.raises(ConfigError, match="foo"):
        parse_config(write(tmp_path, NETWORK + "foo = 1\n[[users]]\neta = 0.5\nd_meters = 1.0\n"))


@pytest.mark.parametrize(
    "text, needle",
    [
        (NETWORK, "users"),
        ("[network]\np_b_dbm = 30.0\n[[users]]\neta = 0.5\nd_meters = 1.0\n", "sigma2_dbm_hz"),
        (NETWORK + "[[users]]\nd_meters = 1.0\n", "eta"),
        (NETWORK + "[[users]]\neta = 0.5\nd_meters = 1.0\ntype = \"solar\"\n", "type"),
        (NETWORK + "[[users]]\neta = 0.5\nd_meters = -1.0\n", "d_meters"),
        (NETWORK + "[[users]]\neta = 0.5\nd_meters = 1.0\n[extra]\n", "extra"),
        (NETWORK + "[[users]]\neta = 0.5\nd_meters = 1.0\ng_gain = 1e-6\nh_gain = 1e-6\n"
         "[[users]]\neta = 0.5\nd_meters = 1.0\n", "g_gain"),
    ],
)
def test_config_errors(tmp_path, text, needle):
    with pytest.raises(ConfigError, match=needle):
        parse_config(write(tmp_path, text))


def test_toml_syntax_error_reports_line(tmp_path):
    with pytest.raises(ConfigError, match="line 3"):
        parse_config(write(tmp_path, "[network]\np_b_dbm = 30\nbad = = 1\n"))


def test_overrides(tmp_path):
    path = write(tmp_path, TWO_USER)
    cfg = parse_config(path, ["network.p_b_dbm=10", "users.1.d_meters=7.5"])
    assert cfg.scenario.p_b_dbm == 10.0 and cfg.scenario.distances == (5.0, 7.5)
    with pytest.raises(ConfigError):
        parse_config(path, ["network.p_b_dbm"])
    with pytest.raises(ConfigError):
        parse_config(path, ["users.5.eta=0.3"])


def test_legacy_users_need_no_eta(tmp_path):
    text = NETWORK + "e_max_joules = 1e-6\n[[users]]\neta = 0.5\nd_meters = 5.0\n" \
        "[[users]]\ntype = \"legacy\"\nd_meters = 5.0\n"
    cfg = parse_config(write(tmp_path, text))
    assert cfg.scenario.legacy_mask == (False, True)


def test_solve_single_user_gamma_one(tmp_path, capsys):
    assert main(["solve", "--config", str(write(tmp_path, SINGLE_GAMMA_ONE)), "--problem", "p3"]) == 0
    rows = list(csv.reader(io.StringIO(capsys.readouterr().out)))
    head, row = rows[0], rows[1]
    got = dict(zip(head, row))
    assert float(got["tau0"]) == pytest.approx((math.e - 1) / math.e, abs=1e-12)
    assert float(got["objective"]) == pytest.approx(math.log2(math.e) / math.e, abs=1e-12)
    assert rows[3] == ["user", "role", "tau", "energy_joules", "rate_bps_hz"]


def test_solve_hetero_detail(tmp_path, capsys):
    out = tmp_path / "p4.csv"
    text = TWO_USER + "type = \"legacy\"\n"
    assert main(["solve", "--config", str(write(tmp_path, text)), "--problem", "p4",
                 "--out", str(out)]) == 0
    text = out.read_text()
    assert "harvest" in text and "legacy" in text


def test_certify_two_user_passes(tmp_path, capsys):
    code = main(["certify", "--config", str(write(tmp_path, TWO_USER)), "--problem", "p1",
                 "--rel-tol", "1e-3"])
    assert code == 0
    assert capsys.readouterr().out.strip().endswith("true")


def test_certify_rejects_large_networks(tmp_path, caplog):
    text = NETWORK + "[[users]]\neta = 0.5\nd_meters = 5.0\n" * 4
    assert main(["certify", "--config", str(write(tmp_path, text)), "--problem", "p1"]) == 2
    assert "at most 3" in caplog.text


def test_config_error_exit_code(tmp_path, caplog):
    assert main(["solve", "--config", str(tmp_path / "missing.toml")]) == 2
    assert "config error" in caplog.text
    assert main(["solve", "--config", str(write(tmp_path, SINGLE_GAMMA_ONE)), "--problem", "p9"]) == 2


def test_p3_on_budgeted_config_is_a_config_error(tmp_path, capsys):
    # P3 drops budgets and the cap, so it is always posable; p4 needs a cap.
    text = NETWORK + "[[users]]\neta = 0.5\nd_meters = 5.0\n"
    assert main(["solve", "--config", str(write(tmp_path, text)), "--problem", "p4"]) == 2


def test_sweep_csv_and_manifest(tmp_path):
    out = tmp_path / "sweep.csv"
    cfg = write(tmp_path, SWEEP)
    assert main(["sweep", "--config", str(cfg), "--out", str(out), "--format", "both"]) == 0
    rows = list(csv.reader(out.open()))
    assert tuple(rows[0]) == SWEEP_HEADER
    assert len(rows) == 1 + 2 * 3
    for r in rows[1:]:
        assert all(math.isfinite(float(x)) for x in r[3:7])
        assert r[7:] == ["3", "11", "0"]
    manifest = json.loads(out.with_suffix(".manifest.json").read_text())
    assert manifest["seed"] == 11 and set(manifest["matched_e_max_joules"]) == {"2.0", "3.0"}
    svg = out.with_suffix(".svg").read_text()
    assert svg.startswith("<svg") and svg.count("<polyline") == 3


def test_sweep_flags_override_config(tmp_path):
    out = tmp_path / "s.csv"
    cfg = write(tmp_path, SWEEP)
    main(["sweep", "--config", str(cfg), "--out", str(out), "--seed", "4", "--realizations", "2"])
    rows = list(csv.reader(out.open()))
    assert rows[1][7:9] == ["2", "4"]


def test_sweep_without_section_is_config_error(tmp_path):
    assert main(["sweep", "--config", str(write(tmp_path, TWO_USER))]) == 2


def test_figure_svg_needs_out(capsys):
    assert main(["figure", "fig3", "--format", "svg"]) == 2


def test_figure_to_stdout(capsys):
    assert main(["figure", "fig3"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0] == ",".join(SWEEP_HEADER)
    assert len(lines) == 1 + 24


def test_unknown_figure(capsys):
    assert main(["figure", "fig99"]) == 2


def test_csv_is_byte_identical(tmp_path):
    cfg = write(tmp_path, SWEEP)
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    main(["sweep", "--config", str(cfg), "--out", str(a)])
    main(["sweep", "--config", str(cfg), "--out", str(b)])
    assert a.read_bytes() == b.read_bytes()
    assert a.with_suffix(".manifest.json").read_bytes() == b.with_suffix(".manifest.json").read_bytes()
