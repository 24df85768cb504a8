// SPDX-License-Identifier: Apache-2.0
#include "empath/features.hpp"

#include <cstring>
#include <fstream>
#include <numbers>

namespace empath::features {

namespace detail {

int next_pow2(int n) {
  int p = 1;
  while (p < n) p <<= 1;
  return p;
}

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

void fft_radix2(std::vector<double>& re, std::vector<double>& im) {
  const std::size_t n = re.size();
  if (n < 2) return;
  // bit-reversal permutation
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) {
      std::swap(re[i], re[j]);
      std::swap(im[i], im[j]);
    }
  }
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const double ang = -2.0 * std::numbers::pi / static_cast<double>(len);
    const double wr = std::cos(ang), wi = std::sin(ang);
    for (std::size_t i = 0; i < n; i += len) {
      double cr = 1.0, ci = 0.0;
      for (std::size_t k = 0; k < len / 2; ++k) {
        const std::size_t a = i + k, b = i + k + len / 2;
        const double tr = re[b] * cr - im[b] * ci;
        const double ti = re[b] * ci + im[b] * cr;
        re[b] = re[a] - tr;
        im[b] = im[a] - ti;
        re[a] += tr;
        im[a] += ti;
        const double ncr = cr * wr - ci * wi;
        ci = cr * wi + ci * wr;
        cr = ncr;
      }
    }
  }
}

}  // namespace detail

Matd mel_filterbank(int n_mels, int n_fft, int sample_rate, double f_min, double f_max) {
  require(n_mels >= 1, "n_mels must be >= 1");
  if (f_max <= 0.0) f_max = sample_rate / 2.0;
  const int n_bins = n_fft / 2 + 1;
  const double mel_lo = detail::hz_to_mel(f_min);
  const double mel_hi = detail::hz_to_mel(f_max);
  std::vector<double> edges(static_cast<std::size_t>(n_mels) + 2);
  for (int i = 0; i < n_mels + 2; ++i)
    edges[i] = detail::mel_to_hz(mel_lo + (mel_hi - mel_lo) * i / (n_mels + 1));

  Matd fb = Matd::Zero(n_mels, n_bins);
  for (int m = 0; m < n_mels; ++m) {
    const double lo = edges[m], mid = edges[m + 1], hi = edges[m + 2];
    for (int k = 0; k < n_bins; ++k) {
      const double f = static_cast<double>(k) * sample_rate / n_fft;
      if (f <= lo || f >= hi) continue;
      fb(m, k) = (f <= mid) ? (f - lo) / (mid - lo) : (hi - f) / (hi - mid);
    }
  }
  return fb;
}

FeatureMatrix extract_features(const Waveform& w, const MelConfig& cfg) {
  if (w.samples.empty()) throw ValidationError("empty audio");
  for (double s : w.samples)
    if (!std::isfinite(s)) throw ValidationError("invalid samples");
  require(cfg.n_mels >= 1, "n_mels must be >= 1");
  require(cfg.win_samples >= 2 && cfg.hop_samples >= 1, "bad window/hop configuration");

  const int win = cfg.win_samples;
  const int hop = cfg.hop_samples;
  const int n_fft = detail::next_pow2(win);
  const Index n = static_cast<Index>(w.samples.size());
  const Index t_frames = (n >= win) ? 1 + (n - win) / hop : 1;

  // periodic Hann
  std::vector<double> window(static_cast<std::size_t>(win));
  for (int i = 0; i < win; ++i)
    window[i] = 0.5 * (1.0 - std::cos(2.0 * std::numbers::pi * i / win));

  const Matd fb = mel_filterbank(cfg.n_mels, n_fft, w.sample_rate, cfg.f_min, cfg.f_max);
  const int n_bins = n_fft / 2 + 1;

  FeatureMatrix out;
  out.values = Matd::Zero(t_frames, cfg.n_mels);
  out.n_mels = cfg.n_mels;
  out.frame_rate = static_cast<double>(w.sample_rate) / hop;
  out.scale = FeatureScale::LinearPower;

  std::vector<double> re(static_cast<std::size_t>(n_fft));
  std::vector<double> im(static_cast<std::size_t>(n_fft));
  Vecd power(n_bins);
  for (Index t = 0; t < t_frames; ++t) {
    const Index start = t * hop;
    for (int i = 0; i < n_fft; ++i) {
      const Index idx = start + i;
      re[i] = (i < win && idx < n) ? w.samples[static_cast<std::size_t>(idx)] * window[i] : 0.0;
      im[i] = 0.0;
    }
    detail::fft_radix2(re, im);
    for (int k = 0; k < n_bins; ++k) power[k] = re[k] * re[k] + im[k] * im[k];
    out.values.row(t) = (fb * power).transpose();
  }
  return out;
}

FeatureMatrix extract_features(const Waveform& w, int n_mels, int frame_hop) {
  MelConfig cfg;
  cfg.n_mels = n_mels;
  cfg.hop_samples = frame_hop;
  cfg.win_samples = std::max(2, w.sample_rate * 25 / 1000);
  return extract_features(w, cfg);
}

FeatureMatrix downsample_input(const FeatureMatrix& x, int factor) {
  require(factor >= 1, "downsample factor must be >= 1");
  require(x.frames() >= 1, "empty feature matrix");
  if (factor == 1) return x;
  const Index t_in = x.frames();
  const Index t_out = (t_in + factor - 1) / factor;
  FeatureMatrix out = x;
  out.values = Matd::Zero(t_out, x.dim());
  for (Index t = 0; t < t_out; ++t) {
    const Index lo = t * factor;
    const Index len = std::min<Index>(factor, t_in - lo);
    out.values.row(t) = x.values.middleRows(lo, len).colwise().mean();
  }
  out.frame_rate = x.frame_rate / factor;
  return out;
}

double mean_energy(const FeatureMatrix& x) {
  require(x.frames() >= 1 && x.dim() >= 1, "empty feature matrix");
  require(x.scale == FeatureScale::LinearPower, "mean_energy requires linear-power features");
  return x.values.rowwise().norm().mean();
}

namespace {
constexpr char kFeatMagic[8] = {'E', 'M', 'P', 'F', 'E', 'A', 'T', '1'};
}

void save_feature_cache(const std::string& path, const FeatureMatrix& x) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw RuntimeFailure("cannot write feature cache: " + path);
  f.write(kFeatMagic, 8);
  const std::uint64_t rows = static_cast<std::uint64_t>(x.values.rows());
  const std::uint64_t cols = static_cast<std::uint64_t>(x.values.cols());
  const std::uint8_t scale = x.scale == FeatureScale::LinearPower ? 0 : 1;
  f.write(reinterpret_cast<const char*>(&rows), 8);
  f.write(reinterpret_cast<const char*>(&cols), 8);
  f.write(reinterpret_cast<const char*>(&x.frame_rate), 8);
  f.write(reinterpret_cast<const char*>(&scale), 1);
  for (Index r = 0; r < x.values.rows(); ++r)
    f.write(reinterpret_cast<const char*>(x.values.row(r).data()),
            static_cast<std::streamsize>(sizeof(double)) * x.values.cols());
}

FeatureMatrix load_feature_cache(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw RuntimeFailure("cannot open feature cache: " + path);
  char magic[8];
  f.read(magic, 8);
  if (!f || std::memcmp(magic, kFeatMagic, 8) != 0)
    throw RuntimeFailure("bad feature cache magic in " + path);
  std::uint64_t rows = 0, cols = 0;
  double frame_rate = 0.0;
  std::uint8_t scale = 0;
  f.read(reinterpret_cast<char*>(&rows), 8);
  f.read(reinterpret_cast<char*>(&cols), 8);
  f.read(reinterpret_cast<char*>(&frame_rate), 8);
  f.read(reinterpret_cast<char*>(&scale), 1);
  FeatureMatrix x;
  x.values.resize(static_cast<Index>(rows), static_cast<Index>(cols));
  for (std::uint64_t r = 0; r < rows; ++r)
    f.read(reinterpret_cast<char*>(x.values.row(static_cast<Index>(r)).data()),
           static_cast<std::streamsize>(sizeof(double) * cols));
  if (!f) throw RuntimeFailure("truncated feature cache: " + path);
  x.frame_rate = frame_rate;
  x.n_mels = static_cast<int>(cols);
  x.scale = scale == 0 ? FeatureScale::LinearPower : FeatureScale::Log;
  return x;
}

}  // namespace empath::features
