"""Smoke test for the dsr_py extension: features, losses and a smoke-profile run."""

import json
import math
import sys
import tempfile
from pathlib import Path

import dsr_py


def check_features():
    samples = [0.1 * math.sin(2 * math.pi * 200 * t / 16000) for t in range(16000)]
    mel = dsr_py.mel_spectrogram(samples)
    assert len(mel) == 98 and len(mel[0]) == 80, (len(mel), len(mel[0]))
    feats = dsr_py.encoder_features(samples)
    assert len(feats) == 98 and len(feats[0]) == 120
    log_f0, voiced = dsr_py.extract_f0(samples)
    assert len(log_f0) == len(voiced) == 98
    mid = [f for f, v in zip(log_f0, voiced) if v]
    assert mid and abs(math.exp(sorted(mid)[len(mid) // 2]) - 200) < 10


def check_losses():
    assert abs(dsr_py.discrimination_loss(0.9, 0.1) + 4.60517) < 1e-5
    assert abs(dsr_py.mtl_loss(2.0, -1.38629) - 3.38629) < 1e-9
    z = [[3.0, 4.0] + [0.0] * 78]
    m = [[0.0] * 80]
    assert abs(dsr_py.generation_loss(z, m) - 5.0) < 1e-12
    assert dsr_py.phoneme_error_rate([1, 2, 3], [1, 2, 4]) == 1 / 3


def check_pipeline(root: Path):
    corpus, work = root / "corpus", root / "work"
    n = dsr_py.gen_corpus(str(corpus), seed=7, healthy=4, dysarthric=1, utterances=8, reference_utterances=8)
    assert n == 48, n
    p = dsr_py.Pipeline(str(corpus), str(work), profile="smoke", seed=7)
    assert p.dysarthric_speakers() == ["d00"]
    assert p.train_all() == ["d00"]
    asa = p.adapt_asa("d00")
    assert Path(asa).exists()
    rows = [json.loads(r) for r in p.evaluate("d00", mode="GG")]
    systems = {r["system"] for r in rows}
    assert systems == {"raw", "SV-DSR", "ASA-DSR"}, systems
    utt = next(r["id"] for r in rows)
    mel = p.reconstruct(asa, utt, mode="GG")
    assert len(mel[0]) == 80
    try:
        p.reconstruct(asa, utt, mode="XX")
    except ValueError:
        pass
    else:
        raise AssertionError("bad mode accepted")


def main():
    check_features()
    check_losses()
    with tempfile.TemporaryDirectory() as d:
        check_pipeline(Path(d))
    print("python smoke test passed")
    return 0


if __name__ == "__main__":
    sys.exit(main())
