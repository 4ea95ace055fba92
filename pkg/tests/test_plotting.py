import numpy as np

from lmutree import plotting
from lmutree.evaluation import CurvePoint
from lmutree.interpret import InfluenceTable


def is_png(path):
    return path.read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"


def test_learning_curve(tmp_path):
    curve = [CurvePoint(i, 32 * i, 1.0 / i, None) for i in range(1, 20)]
    out = plotting.learning_curve({"lmut": curve, "empty": []}, tmp_path / "c.png", title="t")
    assert is_png(out)


def test_influence_bars(tmp_path):
    table = InfluenceTable(np.array([0.0, 3.0, 1.0]), [], ("a", "b", "c"))
    assert is_png(plotting.influence_bars(table, tmp_path / "i.png"))
    empty = InfluenceTable(np.zeros(2), [])
    assert is_png(plotting.influence_bars(empty, tmp_path / "e.png"))


def test_superpixel_figure(tmp_path):
    obs = np.zeros((4, 16, 16))
    mask = np.zeros((4, 16, 16), np.uint8)
    mask[0, 3, 3] = 255
    assert is_png(plotting.superpixel_figure(obs, mask, tmp_path / "s.png", title="x"))


def test_play_bars_are_reproducible(tmp_path):
    a = plotting.play_bars({"teacher": 150.0, "lmut": 140.0}, tmp_path / "a.png")
    b = plotting.play_bars({"teacher": 150.0, "lmut": 140.0}, tmp_path / "b.png")
    assert a.read_bytes() == b.read_bytes()
