"""
From waveform to model input
============================

One synthetic clip is pushed through each representation the detectors
consume: the normalized mel matrix, the 3-channel image, and the sequence
of windowed images used by the recurrent model.
"""
import numpy as np

from spoofbench import corpus as cp
from spoofbench import frontend as fe

rng = np.random.default_rng(0)

# a 22.05 kHz clip, as found in LJ Speech style corpora
x = cp.synth_clip(rng, cp.Label.REAL)
clip = fe.AudioClip(x, cp.FIXTURE_RATE)
print(f"input: {len(clip)} samples at {clip.sample_rate_hz} Hz")

# resample to 16 kHz, then keep exactly 5 s (zero-padded here)
clip = fe.fix_duration(fe.AudioClip(fe.resample(clip.samples, clip.sample_rate_hz, 16000), 16000), 5.0)
print(f"fixed: {len(clip)} samples")

# 64 mel bands over a centered 1024-point STFT with hop 512
mel = fe.mel_spectrogram(clip)
print("mel power:", mel.values.shape, mel.scale)

# dB with an 80 dB floor, then squeezed into [0, 1]
norm = fe.to_db_and_normalize(mel)
print("normalized range:", norm.values.min(), norm.values.max())

# bilinear resize to 224 x 224, copied to three channels
img = fe.to_image(norm)
print("image:", img.shape, "channels equal:", bool(np.all(img[0] == img[2])))

# overlapping 64-frame windows, 32 frames apart; the tail is zero-padded
offsets = fe.window_offsets(norm.n_frames, 64, 32)
seq = fe.window_sequence(norm, 64, 32)
print("window offsets:", offsets, "->", np.stack(seq).shape)
