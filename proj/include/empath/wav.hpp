// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "empath/common.hpp"

namespace empath::features {

/// Mono audio at a known sample rate. Samples are dimensionless amplitudes in [-1, 1].
struct Waveform {
  std::vector<double> samples;
  int sample_rate = 16000;
};

/// Reads a RIFF/PCM16 WAV file. Stereo input is averaged down to mono; when that
/// happens a note is appended to `warnings` (if given).
Waveform read_wav(const std::string& path, std::vector<std::string>* warnings = nullptr);

/// Writes mono PCM16. Samples are clamped to [-1, 1].
void write_wav(const std::string& path, const Waveform& w);

}  // namespace empath::features
