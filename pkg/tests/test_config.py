import pytest

from weakmvc.config import (
    AddReplica,
    ClusterConfig,
    ConfigError,
    RemoveReplica,
    Settings,
    apply_reconfig,
    decode_reconfig,
    encode_reconfig,
    parse_config,
    render_config,
)

TEXT = """
# three replicas on loopback
replica.1 = 127.0.0.1:7001
replica.2 = 127.0.0.1:7002
replica.3 = localhost:7003
n = 3
f = 1
shared_seed = 42
proxy_batch_size = 4
compaction_interval = 250
conservative_compaction = true
"""


def test_parse():
    cluster, settings = parse_config(TEXT)
    assert cluster.members == (1, 2, 3) and cluster.n == 3 and cluster.f == 1
    assert cluster.shared_seed == 42
    assert cluster.addresses[3] == ("localhost", 7003)
    assert settings.proxy_batch_size == 4
    assert settings.compaction_interval_ms == 250
    assert settings.conservative_compaction is True


def test_render_roundtrip():
    cluster, settings = parse_config(TEXT)
    again = parse_config(render_config(cluster, settings))
    assert again == (cluster, settings)
    assert again[0].addresses == cluster.addresses


@pytest.mark.parametrize(
    "text",
    [
        "f = 1",
        "replica.1 = h:1\nreplica.2 = h:2\nf = 1",
        "replica.1 = h:1\nn = 2",
        "replica.1 = h:1\nbogus = 3",
        "replica.1 = h:1\njust words",
    ],
)
def test_parse_errors(text):
    with pytest.raises(ConfigError):
        parse_config(text)


def test_membership_changes():
    c = ClusterConfig((3, 1, 2), 1)
    assert c.members == (1, 2, 3)
    bigger = apply_reconfig(c, AddReplica(4, ("h", 9)))
    assert bigger.members == (1, 2, 3, 4) and bigger.epoch == 1
    assert apply_reconfig(bigger, RemoveReplica(2)).members == (1, 3, 4)
    with pytest.raises(ConfigError):
        apply_reconfig(c, RemoveReplica(1))  # two replicas cannot tolerate one crash
    with pytest.raises(ConfigError):
        apply_reconfig(c, AddReplica(2))


@pytest.mark.parametrize("cmd", [AddReplica(7), AddReplica(8, ("10.0.0.8", 7008)), RemoveReplica(3)])
def test_reconfig_payload_roundtrip(cmd):
    assert decode_reconfig(encode_reconfig(cmd)) == cmd


def test_ordinary_payload_is_not_reconfig():
    assert decode_reconfig(b"\x02\x00\x00\x00\x01") is None


def test_settings_defaults():
    s = Settings()
    assert s.proxy_batch_size == 1 and not s.conservative_compaction
