import json

import numpy as np
import pytest

from v2g_menu.config import ConfigError, SimConfig, dump_config, load_config, parse_config


def test_empty_document_gives_defaults(tmp_path):
    cfg = parse_config({})
    assert cfg == SimConfig()
    assert cfg.station.horizon == 24 and cfg.station.storage_capacity == 20.0
    assert cfg.station.rate_max == 3.3 and cfg.station.eta_charge == 0.95
    assert cfg.population.energy_mean == 6.9 and cfg.population.energy_sd == 4.9
    assert cfg.population.deadline_mean == 2.5 and cfg.population.alpha == 0.07
    assert cfg.arrivals.on_peak_rate == 15.0 and cfg.arrivals.off_peak_rate == 5.0
    c, g = cfg.prices()
    assert c[8] == 0.40 and c[17] == 0.15 and c[7] == 0.15
    assert np.all(g <= c)
    empty = tmp_path / "empty.json"
    empty.write_text("")
    assert load_config(empty) == cfg
    assert load_config(None) == cfg


def test_arbitrage_rejected():
    buy = [0.2] * 24
    sell = [0.1] * 24
    sell[5] = 0.3
    with pytest.raises(ConfigError, match="arbitrage.*5"):
        parse_config({"tariff": {"buy_price": buy, "sell_price": sell}})


def test_unknown_field_named():
    with pytest.raises(ConfigError, match="station.colour"):
        parse_config({"station": {"colour": "red"}})
    with pytest.raises(ConfigError, match="bogus"):
        parse_config({"bogus": 1})


def test_all_problems_reported_together():
    with pytest.raises(ConfigError) as err:
        parse_config({"station": {"horizon": 0}, "population": {"alpha": -1}})
    text = str(err.value)
    assert "station.horizon" in text and "population.alpha" in text


def test_round_trip_and_digest(tmp_path):
    cfg = parse_config({"strategy": {"kind": "beta", "beta": 1.5}, "seed": 9})
    path = tmp_path / "c.json"
    path.write_text(dump_config(cfg))
    back = load_config(path)
    assert back == cfg and back.digest() == cfg.digest()
    assert cfg.digest() != SimConfig().digest()


def test_replace_revalidates():
    cfg = SimConfig()
    assert cfg.replace(**{"station.storage_capacity": 5.0}).station.storage_capacity == 5.0
    with pytest.raises(ValueError):
        cfg.replace(**{"station.storage_capacity": -1.0})


def test_bad_json_and_wrong_top_level(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text("{nope")
    with pytest.raises(ConfigError):
        load_config(p)
    p.write_text(json.dumps([1, 2]))
    with pytest.raises(ConfigError):
        load_config(p)
