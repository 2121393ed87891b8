import json

from behaviorspec import experiments
from behaviorspec.experiments import Bar

TINY = """
run.seeds = 0, 1
arena.max_steps = 30
arena.lava_rects = -1,-4,1,4
trainer.hidden = 8
trainer.total_steps = 400
trainer.eval_every = 200
trainer.eval_episodes = 2
trainer.random_exploration_steps = 100
trainer.warmup_steps = 100
trainer.update_every = 100
trainer.gradient_steps_per_round = 1
trainer.batch_size = 16
trainer.multiplier_every = 100
trainer.multiplier_batch = 100
constraint.in_lava = upper 0.01
"""


def _setup(tmp_path, monkeypatch, extra=""):
    (tmp_path / "cfg").mkdir()
    (tmp_path / "cfg" / "tiny.cfg").write_text(TINY + extra)
    monkeypatch.setattr(experiments, "CONFIG_DIR", tmp_path / "cfg")
    return tmp_path / "res"


def test_bar():
    bar = Bar(0.8, (("in_lava", 0.06),))
    assert bar.met({"success_rate": 0.8, "rate_in_lava": 0.06})
    assert not bar.met({"success_rate": 0.79, "rate_in_lava": 0.0})
    assert not bar.met({"success_rate": 1.0, "rate_in_lava": 0.07})
    assert not bar.met({"success_rate": float("nan"), "rate_in_lava": 0.0})


def test_seed_results_are_cached(tmp_path, monkeypatch):
    res = _setup(tmp_path, monkeypatch)
    never = Bar(2.0)
    first = experiments.bar_experiment("tiny", never, res)
    assert [r["reached_step"] for r in first] == [None, None]
    assert [r["rows"][-1]["step"] for r in first] == [400, 400]
    files = sorted(res.rglob("seed_*.json"))
    assert len(files) == 2
    # a tampered cache entry is what comes back: nothing is recomputed
    data = json.loads(files[0].read_text())
    data["seconds"] = -1.0
    files[0].write_text(json.dumps(data))
    again = experiments.bar_experiment("tiny", never, res)
    assert -1.0 in [r["seconds"] for r in again]


def test_bar_stops_early(tmp_path, monkeypatch):
    res = _setup(tmp_path, monkeypatch)
    out = experiments.seed_until_bar("tiny", 0, Bar(0.0), res)
    assert out["reached_step"] == 200 and len(out["rows"]) == 1


def test_key_tracks_config_not_comments(tmp_path, monkeypatch):
    from behaviorspec.config import parse_config
    a = experiments.config_key(parse_config(TINY))
    b = experiments.config_key(parse_config("# note\n" + TINY))
    c = experiments.config_key(parse_config(TINY + "trainer.alpha = 0.5\n"))
    assert a == b != c


def test_source_digest_ignores_docstrings():
    import ast
    src = 'def f(x):\n    """doc"""\n    return x  # note\n'
    plain = 'def f(x):\n    return x\n'
    dump = lambda s: ast.dump(experiments._strip_docstrings(ast.parse(s)))
    assert dump(src) == dump(plain)
    assert len(experiments.source_digest()) == 16
