"""Smoke test for the trajforge extension module.

Build it first, either with `maturin develop -m crates/py/Cargo.toml` or with
`cargo build -p trajforge-py --release` and then copying
`target/release/libtrajforge.so` to `trajforge.so` somewhere on PYTHONPATH.
"""

import json
import os
import tempfile

import trajforge


def check_parser():
    text = '[get_zipcode(city="Rivermist"), book(seats=2, tags=["a", "b"])]'
    calls = trajforge.parse_call_list(text)
    assert calls[0] == {"tool": "get_zipcode", "args": {"city": "Rivermist"}}
    assert trajforge.parse_call_list(trajforge.render_call_list(calls)) == calls
    try:
        trajforge.parse_call_list("[broken(")
    except ValueError:
        pass
    else:
        raise AssertionError("malformed input must raise")


def check_validator():
    gt = '[ls(), cd(folder="docs")]'
    assert trajforge.validate(gt, gt)["passed"]
    report = trajforge.validate('[ls(), cd(folder="src")]', gt)
    assert not report["passed"]
    assert report["mismatches"][0]["kind"] == "wrong argument value"
    swapped = '[cd(folder="docs"), ls()]'
    assert trajforge.validate(swapped, gt, "order-insensitive")["passed"]
    assert trajforge.validate("I cannot help with that.", gt)["mismatches"][0]["kind"] == "no function calls"


def check_environment():
    env = trajforge.Env("ticketing")
    state = env.reset(env.golden_seed)
    feedback, after = env.execute(state, 'get_zipcode(city="Rivermist")')
    assert feedback == {"ok": True, "payload": "83214", "raw": "\"83214\""}
    assert after.version == state.version

    turn = env.run_turn(state, "buy_tickets", 3, env.golden_seed)
    assert turn.target_reached
    tool = env.abstract_tool(turn)
    query = env.synthesize_query(tool)
    for value in tool.exposed_args().values():
        assert str(value) in query
    replayed, end = env.replay(state, tool)
    assert [step["payload"] for step in replayed] == [s["feedback"]["payload"] for s in turn.steps()]
    assert end.digest() == turn.end_state().digest()


def check_pipeline():
    config = "\n".join(
        ["env_id = \"filesys\"", "rounds = 2", "calls_per_round = 3", "trajectories = 6"]
    )
    with tempfile.TemporaryDirectory() as tmp:
        outs = []
        for workers in (1, 3):
            path = os.path.join(tmp, f"w{workers}.jsonl")
            report = trajforge.run_synthesis(config, path, seed=4, workers=workers)
            assert report["retained"] == 6, report
            outs.append(open(path, "rb").read())
        assert outs[0] == outs[1]
        audit = trajforge.audit(path)
        assert audit["samples"] == report["samples_written"] == 24
        first = json.loads(outs[0].splitlines()[0])
        assert first["metadata"]["turn_kind"] == "call"


if __name__ == "__main__":
    check_parser()
    check_validator()
    check_environment()
    check_pipeline()
    print("smoke test passed")
