"""Shared fixtures: a tiny synthetic corpus with in-memory features."""

import numpy as np
import pytest

from phonosim import corpus, dsp


@pytest.fixture(scope="session")
def tiny_corpus(tmp_path_factory):
    """2 speakers, 6 sentences, 1 interactive + 1 imitation session."""
    root = tmp_path_factory.mktemp("tiny_corpus")
    cfg = corpus.SynthConfig(
        n_speakers=2, n_sentences=6, interactive_sessions=1, imitation_sessions=1
    )
    manifest = corpus.generate_synthetic_corpus(cfg, seed=11, out_dir=root)
    return manifest


@pytest.fixture(scope="session")
def tiny_features(tiny_corpus):
    """CMVN-normalized 39-dim features for every tiny-corpus utterance."""
    cfg = dsp.MfccConfig()
    store = {}
    for u in tiny_corpus.utterances:
        wav = dsp.load_audio(tiny_corpus.resolve(u.audio_path))
        feats = dsp.append_deltas(dsp.compute_mfcc(wav, cfg), cfg.delta_window)
        store[u.key] = dsp.cmvn(feats).frames
    return store


def metadata_manifest(n_speakers, n_sentences, conditions=("solo",), sessions=(1,)):
    """Audio-free manifest: dyads are consecutive speaker pairs."""
    speakers = [corpus.Speaker(id=f"P{i:03d}") for i in range(n_speakers)]
    dyads = [(speakers[i].id, speakers[i + 1].id) for i in range(0, n_speakers, 2)]
    by_speaker = corpus.dyad_id
    utterances = []
    for i, spk in enumerate(speakers):
        did = by_speaker(*dyads[i // 2])
        for cond in conditions:
            for sess in sessions if cond != "solo" else (1,):
                for sent in range(1, n_sentences + 1):
                    utterances.append(
                        corpus.Utterance(
                            speaker_id=spk.id,
                            dyad_id=did,
                            condition=cond,
                            session=sess,
                            sentence_index=sent,
                        )
                    )
    return corpus.Manifest(speakers=speakers, dyads=dyads, utterances=utterances)
