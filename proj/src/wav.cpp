// SPDX-License-Identifier: Apache-2.0
#include "empath/wav.hpp"

#include <algorithm>
#include <cstdint>
#include <cstring>
#include <fstream>

namespace empath::features {

namespace {

std::uint32_t read_u32(const char* p) {
  std::uint32_t v;
  std::memcpy(&v, p, 4);
  return v;
}
std::uint16_t read_u16(const char* p) {
  std::uint16_t v;
  std::memcpy(&v, p, 2);
  return v;
}

void put_u32(std::string& s, std::uint32_t v) { s.append(reinterpret_cast<const char*>(&v), 4); }
void put_u16(std::string& s, std::uint16_t v) { s.append(reinterpret_cast<const char*>(&v), 2); }

}  // namespace

Waveform read_wav(const std::string& path, std::vector<std::string>* warnings) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw RuntimeFailure("cannot open WAV file: " + path);
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.size() < 12 || bytes.compare(0, 4, "RIFF") != 0 || bytes.compare(8, 4, "WAVE") != 0)
    throw RuntimeFailure("not a RIFF/WAVE file: " + path);

  std::uint16_t channels = 0, bits = 0, format = 0;
  std::uint32_t sample_rate = 0;
  const char* data = nullptr;
  std::size_t data_len = 0;

  std::size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const std::string id = bytes.substr(pos, 4);
    const std::uint32_t len = read_u32(bytes.data() + pos + 4);
    pos += 8;
    if (pos + len > bytes.size()) throw RuntimeFailure("truncated WAV chunk in " + path);
    if (id == "fmt ") {
      if (len < 16) throw RuntimeFailure("malformed fmt chunk in " + path);
      format = read_u16(bytes.data() + pos);
      channels = read_u16(bytes.data() + pos + 2);
      sample_rate = read_u32(bytes.data() + pos + 4);
      bits = read_u16(bytes.data() + pos + 14);
    } else if (id == "data") {
      data = bytes.data() + pos;
      data_len = len;
    }
    pos += len + (len & 1u);  // chunks are word-aligned
  }

  if (format != 1 || bits != 16)
    throw RuntimeFailure("unsupported WAV encoding (need PCM16) in " + path);
  if (channels == 0 || data == nullptr) throw RuntimeFailure("missing fmt/data chunk in " + path);

  const std::size_t n_frames = data_len / (2u * channels);
  Waveform w;
  w.sample_rate = static_cast<int>(sample_rate);
  w.samples.resize(n_frames);
  for (std::size_t i = 0; i < n_frames; ++i) {
    double acc = 0.0;
    for (std::uint16_t c = 0; c < channels; ++c) {
      std::int16_t s;
      std::memcpy(&s, data + 2 * (i * channels + c), 2);
      acc += static_cast<double>(s) / 32768.0;
    }
    w.samples[i] = acc / channels;
  }
  if (channels > 1 && warnings)
    warnings->push_back("WAV " + path + " has " + std::to_string(channels) +
                        " channels; averaged to mono");
  return w;
}

void write_wav(const std::string& path, const Waveform& w) {
  std::string out;
  const std::uint32_t data_len = static_cast<std::uint32_t>(w.samples.size() * 2);
  out.reserve(44 + data_len);
  out += "RIFF";
  put_u32(out, 36 + data_len);
  out += "WAVEfmt ";
  put_u32(out, 16);
  put_u16(out, 1);  // PCM
  put_u16(out, 1);  // mono
  put_u32(out, static_cast<std::uint32_t>(w.sample_rate));
  put_u32(out, static_cast<std::uint32_t>(w.sample_rate) * 2);
  put_u16(out, 2);
  put_u16(out, 16);
  out += "data";
  put_u32(out, data_len);
  for (double s : w.samples) {
    const double clamped = std::clamp(s, -1.0, 1.0);
    const auto q = static_cast<std::int16_t>(std::lround(clamped * 32767.0));
    out.append(reinterpret_cast<const char*>(&q), 2);
  }
  std::ofstream f(path, std::ios::binary);
  if (!f) throw RuntimeFailure("cannot write WAV file: " + path);
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
}

}  // namespace empath::features
