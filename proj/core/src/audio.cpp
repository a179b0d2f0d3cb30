// SPDX-License-Identifier: Apache-2.0
#include "vcd/audio.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <numbers>
#include <numeric>
#include <string>

#include "vcd/error.hpp"

namespace vcd {

namespace {

std::uint32_t le32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | static_cast<std::uint32_t>(p[1]) << 8 |
         static_cast<std::uint32_t>(p[2]) << 16 | static_cast<std::uint32_t>(p[3]) << 24;
}
std::uint16_t le16(const unsigned char* p) {
  return static_cast<std::uint16_t>(p[0] | p[1] << 8);
}

void put32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
void put16(std::string& out, std::uint16_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>(v >> 8));
}

constexpr std::uint16_t kFormatPcm = 1;
constexpr std::uint16_t kFormatFloat = 3;
constexpr std::uint16_t kFormatExtensible = 0xfffe;

}  // namespace

Waveform read_wav(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const std::string where = path.string();
  if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0 || std::memcmp(bytes.data() + 8, "WAVE", 4) != 0) {
    throw DataError(where + ": not a RIFF/WAVE file");
  }
  std::uint16_t format = 0, channels = 0, bits = 0;
  std::uint32_t rate = 0;
  const unsigned char* data = nullptr;
  std::size_t data_size = 0;
  std::size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const unsigned char* chunk = bytes.data() + pos;
    const std::size_t size = le32(chunk + 4);
    const std::size_t body = pos + 8;
    const std::size_t avail = std::min(size, bytes.size() - body);
    if (std::memcmp(chunk, "fmt ", 4) == 0) {
      if (avail < 16) throw DataError(where + ": truncated fmt chunk");
      format = le16(chunk + 8);
      channels = le16(chunk + 10);
      rate = le32(chunk + 12);
      bits = le16(chunk + 22);
      if (format == kFormatExtensible && avail >= 26) format = le16(chunk + 8 + 24);
    } else if (std::memcmp(chunk, "data", 4) == 0) {
      data = bytes.data() + body;
      data_size = avail;
    }
    pos = body + size + (size & 1);
  }
  if (channels == 0 || rate == 0) throw DataError(where + ": missing fmt chunk");
  if (data == nullptr) throw DataError(where + ": missing data chunk");
  const bool pcm = format == kFormatPcm && (bits == 8 || bits == 16 || bits == 24 || bits == 32);
  const bool flt = format == kFormatFloat && bits == 32;
  if (!pcm && !flt) {
    throw DataError(where + ": unsupported WAV encoding (format " + std::to_string(format) + ", " +
                    std::to_string(bits) + " bits)");
  }
  const std::size_t width = bits / 8;
  const std::size_t frames = data_size / (width * channels);
  Waveform wav;
  wav.sample_rate = static_cast<int>(rate);
  wav.samples.assign(frames, 0.0);
  for (std::size_t f = 0; f < frames; ++f) {
    double acc = 0.0;
    for (std::size_t c = 0; c < channels; ++c) {
      const unsigned char* p = data + (f * channels + c) * width;
      double v = 0.0;
      if (flt) {
        float x;
        std::memcpy(&x, p, 4);
        v = x;
      } else if (bits == 8) {
        v = (static_cast<int>(p[0]) - 128) / 128.0;
      } else if (bits == 16) {
        v = static_cast<std::int16_t>(le16(p)) / 32768.0;
      } else if (bits == 24) {
        std::int32_t s = static_cast<std::int32_t>(p[0] | p[1] << 8 | p[2] << 16);
        if (s & 0x800000) s -= 0x1000000;
        v = s / 8388608.0;
      } else {
        v = static_cast<std::int32_t>(le32(p)) / 2147483648.0;
      }
      acc += v;
    }
    wav.samples[f] = acc / channels;
  }
  return wav;
}

void write_wav(const std::filesystem::path& path, const Waveform& wav) {
  if (wav.sample_rate <= 0) throw ParameterError("sample rate must be positive");
  const std::size_t n = wav.samples.size();
  std::string out;
  out.reserve(44 + 2 * n);
  out += "RIFF";
  put32(out, static_cast<std::uint32_t>(36 + 2 * n));
  out += "WAVEfmt ";
  put32(out, 16);
  put16(out, kFormatPcm);
  put16(out, 1);
  put32(out, static_cast<std::uint32_t>(wav.sample_rate));
  put32(out, static_cast<std::uint32_t>(wav.sample_rate * 2));
  put16(out, 2);
  put16(out, 16);
  out += "data";
  put32(out, static_cast<std::uint32_t>(2 * n));
  for (double x : wav.samples) {
    if (!std::isfinite(x)) throw NumericError("non-finite sample in " + path.string());
    const long q = std::clamp(std::lround(x * 32768.0), -32768L, 32767L);
    put16(out, static_cast<std::uint16_t>(static_cast<std::int16_t>(q)));
  }
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot write " + path.string());
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw DataError("write failed for " + path.string());
}

Waveform load_wav(const std::filesystem::path& path, int target_rate) {
  Waveform wav = read_wav(path);
  if (wav.sample_rate != target_rate) {
    wav.samples = resample(wav.samples, wav.sample_rate, target_rate);
    wav.sample_rate = target_rate;
  }
  return wav;
}

std::vector<double> resample(std::span<const double> x, int from_rate, int to_rate) {
  if (from_rate <= 0 || to_rate <= 0) throw ParameterError("sample rates must be positive");
  if (from_rate == to_rate) return {x.begin(), x.end()};
  const int g = std::gcd(from_rate, to_rate);
  const long up = to_rate / g;
  const long down = from_rate / g;
  const std::size_t n_out = static_cast<std::size_t>((static_cast<long double>(x.size()) * up) / down);
  constexpr int kZeros = 16;
  constexpr double kBeta = 8.6;
  // Cutoff relative to the input Nyquist.
  const double cutoff = std::min(1.0, static_cast<double>(up) / down) * 0.95;
  const double half_width = kZeros / cutoff;
  const double i0_beta = std::cyl_bessel_i(0.0, kBeta);
  std::vector<double> y(n_out, 0.0);
  const long n_in = static_cast<long>(x.size());
  for (std::size_t j = 0; j < n_out; ++j) {
    const double centre = static_cast<double>(j) * down / up;
    const long lo = std::max(0L, static_cast<long>(std::ceil(centre - half_width)));
    const long hi = std::min(n_in - 1, static_cast<long>(std::floor(centre + half_width)));
    double acc = 0.0;
    for (long i = lo; i <= hi; ++i) {
      const double d = static_cast<double>(i) - centre;
      const double r = d / half_width;
      if (r <= -1.0 || r >= 1.0) continue;
      const double arg = std::numbers::pi * cutoff * d;
      const double sinc = d == 0.0 ? 1.0 : std::sin(arg) / arg;
      const double window = std::cyl_bessel_i(0.0, kBeta * std::sqrt(1.0 - r * r)) / i0_beta;
      acc += x[static_cast<std::size_t>(i)] * cutoff * sinc * window;
    }
    y[j] = acc;
  }
  return y;
}

double rms(std::span<const double> x) {
  if (x.empty()) return 0.0;
  double s = 0.0;
  for (double v : x) s += v * v;
  return std::sqrt(s / static_cast<double>(x.size()));
}

}  // namespace vcd
