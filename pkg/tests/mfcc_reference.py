"""Straight-line textbook MFCC used only as a test oracle.

Written loop-by-loop from the recipe (per-frame pre-emphasis 0.97, Hamming
window, 23 mel filters 20 Hz..min(7800, sr/2-100), log floor 1e-10,
orthonormal DCT-II, lifter 22, C0 := log raw frame energy) without
touching the package's helpers.
"""

import math

import numpy as np
from scipy.fft import dct


def reference_mfcc(samples, sr):
    win = int(sr * 0.025 + 0.5)
    hop = int(sr * 0.010 + 0.5)
    n_frames = (len(samples) - win) // hop + 1
    nfft = 1
    while nfft < win:
        nfft *= 2
    hamming = [0.54 - 0.46 * math.cos(2 * math.pi * i / (win - 1)) for i in range(win)]

    def hz_to_mel(f):
        return 1127.0 * math.log(1.0 + f / 700.0)

    lo = hz_to_mel(20.0)
    hi = hz_to_mel(min(7800.0, sr / 2.0 - 100.0))
    centers = [lo + (hi - lo) * k / 24.0 for k in range(25)]
    filters = np.zeros((23, nfft // 2 + 1))
    for m in range(23):
        left, center, right = centers[m], centers[m + 1], centers[m + 2]
        for k in range(nfft // 2 + 1):
            mel = hz_to_mel(k * sr / nfft)
            if left < mel <= center:
                filters[m, k] = (mel - left) / (center - left)
            elif center < mel < right:
                filters[m, k] = (right - mel) / (right - center)

    out = np.zeros((n_frames, 13))
    for t in range(n_frames):
        frame = [float(s) for s in samples[t * hop:t * hop + win]]
        energy = sum(s * s for s in frame)
        emph = [frame[0] - 0.97 * frame[0]] + [frame[i] - 0.97 * frame[i - 1] for i in range(1, win)]
        windowed = np.array([emph[i] * hamming[i] for i in range(win)])
        spec = np.fft.fft(windowed, nfft)[:nfft // 2 + 1]
        power = spec.real ** 2 + spec.imag ** 2
        logmel = np.array([math.log(max(float(filters[m] @ power), 1e-10)) for m in range(23)])
        ceps = dct(logmel, type=2, norm="ortho")[:13]
        for n in range(13):
            ceps[n] *= 1.0 + 11.0 * math.sin(math.pi * n / 22.0)
        ceps[0] = math.log(max(energy, 1e-10))
        out[t] = ceps
    return out
