"""Script parsing, fixture faithfulness, and deterministic replay."""

import pytest

from hydratwin.control import ControlConfig
from hydratwin.gateway import AccessRule, GatewayCore, PeerIdentity
from hydratwin.plant import PlantSimulator
from hydratwin.replayer import (
    Action,
    GatewayClient,
    ScriptError,
    load_script,
    parse_script,
    replay,
    tokenize,
)
from hydratwin.telemetry import EventKind, EventStore
from hydratwin.topology import build_topology

from conftest import small_config

MINIMAL = "schema script_v1\nname t\nclock 0\n"


class TestTokenizer:
    def test_plain_tokens(self):
        assert tokenize("0 LOGIN a=1 b=2", 1) == ["0", "LOGIN", "a=1", "b=2"]

    def test_quoted_value_keeps_spaces(self):
        assert tokenize('1 SPAWN image="C:\\Program Files\\x.exe"', 1) == [
            "1",
            "SPAWN",
            "image=C:\\Program Files\\x.exe",
        ]

    def test_doubled_quote_is_literal(self):
        assert tokenize('0 FILE note="say ""hi"" now"', 1) == ["0", "FILE", 'note=say "hi" now']

    def test_backslashes_never_escape(self):
        (tok,) = tokenize("p=\\\\tsclient\\B\\BUG\\mc_hand.exe", 1)
        assert tok == "p=\\\\tsclient\\B\\BUG\\mc_hand.exe"

    def test_unterminated_quote_rejected(self):
        with pytest.raises(ScriptError, match="unterminated"):
            tokenize('x="open', 3)

    def test_mid_token_quotes_join(self):
        (tok,) = tokenize('k=HKU\\"Internet Settings"\\ZoneMap', 1)
        assert tok == "k=HKU\\Internet Settings\\ZoneMap"


class TestParsing:
    def test_schema_required(self):
        with pytest.raises(ScriptError, match="schema"):
            parse_script("0 WAIT\n")

    def test_empty_step_list_is_valid(self):
        script = parse_script(MINIMAL)
        assert script.steps == ()
        assert script.name == "t"

    def test_iso_clock_parsed(self):
        script = parse_script("schema script_v1\nclock 2025-03-06T02:14:00Z\n")
        assert script.clock == 1741227240.0

    def test_times_must_not_go_backwards(self):
        with pytest.raises(ScriptError, match="backwards"):
            parse_script(MINIMAL + "5 WAIT\n3 WAIT\n")

    def test_unknown_action_rejected_with_line(self):
        with pytest.raises(ScriptError, match="line 4"):
            parse_script(MINIMAL + "0 EXPLODE\n")

    def test_dangling_parent_ref_rejected(self):
        with pytest.raises(ScriptError, match="undefined process reference 'p9'"):
            parse_script(MINIMAL + "0 SPAWN ref=a image=x.exe parent=p9\n")

    def test_duplicate_ref_rejected(self):
        with pytest.raises(ScriptError, match="duplicate process ref"):
            parse_script(
                MINIMAL + "0 SPAWN ref=a image=x.exe\n1 SPAWN ref=a image=y.exe\n"
            )

    def test_missing_required_param_rejected(self):
        with pytest.raises(ScriptError, match="missing 'outcome'"):
            parse_script(MINIMAL + "0 LOGIN username=u source=1.2.3.4\n")

    def test_connect_needs_target(self):
        with pytest.raises(ScriptError, match="domain or address"):
            parse_script(MINIMAL + "0 CONNECT port=80\n")

    def test_file_path_not_a_script_rejected(self):
        with pytest.raises(ScriptError, match="neither a builtin nor a file"):
            load_script("no-such-script")


class TestBuiltinFixtures:
    def test_makop_loads_with_payload_spawns(self):
        script = load_script("makop")
        spawns = [s for s in script.steps if s.action is Action.SPAWN]
        payload = [s for s in spawns if s.params["image"] == "\\\\tsclient\\B\\BUG\\mc_hand.exe"]
        assert len(payload) == 24
        assert all(s.params["parent"] == "shell" for s in payload)
        shell = [s for s in spawns if s.params["ref"] == "shell"]
        assert shell[0].params["image"].lower().endswith("explorer.exe")

    def test_benign_loads(self):
        script = load_script("benign")
        assert script.name == "benign"
        assert any(s.action is Action.HMI_COMMAND for s in script.steps)

    def test_makop_replay_emits_expected_artifacts(self):
        store = EventStore()
        replay(load_script("makop"), store)
        haystack = []
        for ev in store.events():
            if ev.actor:
                haystack.append(ev.actor.image)
            for v in ev.detail.values():
                haystack.append(str(v))
        joined = "\n".join(haystack)
        for artifact in [
            "+README-WARNING+.txt",
            "setZeroData",
            "offset=0",
            "length=131072",
            "ping",
            "1.1.1.1",
            "-n",
            "5",
            "del /q /f",
            "ZoneMap\\ProxyBypass",
            "ZoneMap\\AutoDetect",
            "Notifications\\Data\\418A073AA3BC3475",
            "4506.tmp.bmp",
            "iplogger.com",
            "c.pki.goog",
            "\\\\tsclient\\B\\BUG\\mc_hand.exe",
            ".makop",
            ".mkp",
            "rew_NS.exe",
            "Internet Settings",
        ]:
            assert artifact in joined, artifact

    def test_makop_registry_writes_queryable(self):
        from hydratwin.telemetry import EventFilter

        store = EventStore()
        replay(load_script("makop"), store)
        hits = store.query(
            EventFilter(
                kinds=frozenset({EventKind.REGISTRY_SET}),
                detail_contains=("key", "ZoneMap\\ProxyBypass"),
            )
        )
        assert len(hits) == 1

    def test_all_emitted_events_are_schema_valid(self):
        store = EventStore()
        replay(load_script("makop"), store)
        for ev in store.events():
            ev.validate()  # closure: nothing outside the host-event schema


class TestReplay:
    def test_empty_script_summary_zeros(self):
        summary = replay(parse_script(MINIMAL), EventStore())
        assert summary.events_emitted == 0
        assert summary.counts == {}

    def test_double_run_byte_identical_logs(self, tmp_path):
        a_path, b_path = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
        replay(load_script("makop"), EventStore(a_path))
        replay(load_script("makop"), EventStore(b_path))
        assert a_path.read_bytes() == b_path.read_bytes()

    def test_summary_counts_by_action(self):
        text = MINIMAL + (
            "0 LOGIN username=u source=192.0.2.1 outcome=FAILURE\n"
            "1 SPAWN ref=a image=x.exe\n"
            "2 FILE op=create path=C:\\x.txt actor=a\n"
            "3 WAIT\n"
        )
        summary = replay(parse_script(text), EventStore())
        assert summary.counts == {"LOGIN": 1, "SPAWN": 1, "FILE": 1, "WAIT": 1}
        assert summary.events_emitted == 3  # WAIT emits nothing

    def test_spawn_pids_deterministic_and_parents_resolved(self):
        store = EventStore()
        text = MINIMAL + (
            "0 SPAWN ref=a image=x.exe\n"
            "1 SPAWN ref=b image=y.exe parent=a\n"
        )
        replay(parse_script(text), store)
        a, b = store.events()
        assert b.parent == a.actor

    def test_timestamps_offset_from_clock(self):
        store = EventStore()
        text = "schema script_v1\nclock 1000\n5 SPAWN ref=a image=x.exe\n"
        replay(parse_script(text), store)
        assert store.events()[0].timestamp == 1005.0

    def test_hmi_commands_reach_gateway_and_nacks_not_fatal(self):
        cfg = small_config()
        cfg.tanks[0]["initial_level"] = 5.0  # T101 at LL: P101 ON will be interlocked
        topo = build_topology(cfg)
        sim = PlantSimulator(topo)
        core = GatewayCore(
            topology=topo,
            rules=[AccessRule("10.10.1.20", "twin_v1")],
            control_config=ControlConfig.from_topology(topo),
            state_provider=sim.snapshot,
        )
        session, _ = core.connect(PeerIdentity("10.10.1.20", "REPLAY", "twin_v1"))
        client = GatewayClient(core, session)
        text = MINIMAL + (
            "0 HMI_COMMAND tag=MV101 target=OPEN\n"
            "1 HMI_COMMAND tag=P101 target=ON\n"
            "2 HMI_COMMAND tag=XYZ999 target=ON\n"
        )
        summary = replay(parse_script(text), EventStore(), gateway_client=client)
        assert summary.commands_sent == 3
        assert summary.acks == 1
        assert summary.nacks == 2
        assert sorted(summary.nack_reasons) == ["interlock", "schema"]

    def test_hmi_command_always_leaves_host_trace(self):
        store = EventStore()
        replay(parse_script(MINIMAL + "0 HMI_COMMAND tag=MV101 target=OPEN\n"), store)
        (ev,) = store.events()
        assert ev.kind is EventKind.NET_CONNECT
        assert ev.detail["purpose"] == "hmi-command"

    def test_invalid_speed_rejected(self):
        with pytest.raises(ScriptError):
            replay(parse_script(MINIMAL), EventStore(), speed=0)
