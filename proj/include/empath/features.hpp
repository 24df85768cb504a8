// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "empath/common.hpp"
#include "empath/wav.hpp"

namespace empath::features {

enum class FeatureScale { LinearPower, Log };

/// T x d time-frequency feature sequence. Rows are analysis frames, columns mel bands.
struct FeatureMatrix {
  Matd values;               // T x d
  double frame_rate = 0.0;   // frames per second
  int n_mels = 0;            // d
  FeatureScale scale = FeatureScale::LinearPower;

  Index frames() const { return values.rows(); }
  Index dim() const { return values.cols(); }
};

struct MelConfig {
  int n_mels = 128;
  int win_samples = 400;   // 25 ms at 16 kHz
  int hop_samples = 160;   // 10 ms at 16 kHz
  double f_min = 0.0;
  double f_max = 0.0;      // 0 -> sample_rate / 2
};

/// Triangular mel filterbank (HTK mel scale, peak-1 triangles), one row per mel band,
/// one column per non-negative FFT bin.
Matd mel_filterbank(int n_mels, int n_fft, int sample_rate, double f_min, double f_max);

/// Linear-power mel spectrogram via periodic-Hann STFT. No centering: frame t covers
/// samples [t*hop, t*hop + win). Input shorter than one window is zero-padded to one
/// frame. Deterministic for fixed input and config.
FeatureMatrix extract_features(const Waveform& w, const MelConfig& cfg = {});
FeatureMatrix extract_features(const Waveform& w, int n_mels, int frame_hop);

/// Non-overlapping mean pooling over time. T' = ceil(T / factor); the last block
/// averages the remaining (< factor) frames. Feature dimension unchanged.
FeatureMatrix downsample_input(const FeatureMatrix& x, int factor);

/// Average per-frame l2 norm across mel bands: e = (1/T) * sum_t ||row_t||_2.
/// Requires a non-empty linear-power matrix.
double mean_energy(const FeatureMatrix& x);

/// Binary feature cache: magic, version, shape, frame_rate, scale, row-major doubles.
void save_feature_cache(const std::string& path, const FeatureMatrix& x);
FeatureMatrix load_feature_cache(const std::string& path);

namespace detail {
/// In-place radix-2 FFT; size must be a power of two.
void fft_radix2(std::vector<double>& re, std::vector<double>& im);
int next_pow2(int n);
double hz_to_mel(double hz);
double mel_to_hz(double mel);
}  // namespace detail

}  // namespace empath::features
