#include "neuform/audio_io.hpp"

#include "neuform/error.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <numbers>
#include <numeric>
#include <string>
#include <vector>

namespace neuform {
namespace {

constexpr std::uint16_t kFormatPcm = 1;
constexpr std::uint16_t kFormatFloat = 3;
constexpr std::uint16_t kFormatExtensible = 0xFFFE;

std::uint16_t le16(const unsigned char* p) {
  return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}

std::uint32_t le32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

void put16(std::vector<unsigned char>& out, std::uint16_t v) {
  out.push_back(static_cast<unsigned char>(v & 0xFF));
  out.push_back(static_cast<unsigned char>(v >> 8));
}

void put32(std::vector<unsigned char>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<unsigned char>((v >> (8 * i)) & 0xFF));
}

Error malformed(const std::filesystem::path& path, std::size_t offset, const std::string& what) {
  return data_error("malformed WAV '" + path.string() + "' at byte " + std::to_string(offset) +
                    ": " + what);
}

struct FmtChunk {
  std::uint16_t format = 0;
  std::uint16_t channels = 0;
  std::uint32_t sample_rate = 0;
  std::uint16_t bits = 0;
};

double kaiser(double x, double beta) {
  // x in [-1, 1]
  const double arg = 1.0 - x * x;
  if (arg <= 0.0) return 0.0;
  return std::cyl_bessel_i(0.0, beta * std::sqrt(arg)) / std::cyl_bessel_i(0.0, beta);
}

double sinc(double x) {
  if (std::abs(x) < 1e-12) return 1.0;
  const double px = std::numbers::pi * x;
  return std::sin(px) / px;
}

}  // namespace

Waveform read_wav(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw data_error("cannot open WAV file '" + path.string() + "'");
  const std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                         std::istreambuf_iterator<char>());

  if (bytes.size() < 12) throw malformed(path, 0, "file shorter than RIFF header");
  if (std::memcmp(bytes.data(), "RIFF", 4) != 0) throw malformed(path, 0, "missing RIFF tag");
  if (std::memcmp(bytes.data() + 8, "WAVE", 4) != 0) throw malformed(path, 8, "missing WAVE tag");

  FmtChunk fmt;
  bool have_fmt = false;
  const unsigned char* data = nullptr;
  std::size_t data_size = 0;
  std::size_t data_offset = 0;

  std::size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const unsigned char* chunk = bytes.data() + pos;
    const std::uint32_t size = le32(chunk + 4);
    const std::size_t body = pos + 8;
    if (std::memcmp(chunk, "fmt ", 4) == 0) {
      if (size < 16 || body + 16 > bytes.size()) throw malformed(path, pos, "truncated fmt chunk");
      fmt.format = le16(bytes.data() + body);
      fmt.channels = le16(bytes.data() + body + 2);
      fmt.sample_rate = le32(bytes.data() + body + 4);
      fmt.bits = le16(bytes.data() + body + 14);
      if (fmt.format == kFormatExtensible) {
        if (size < 40 || body + 40 > bytes.size())
          throw malformed(path, pos, "truncated WAVE_FORMAT_EXTENSIBLE fmt chunk");
        fmt.format = le16(bytes.data() + body + 24);
      }
      have_fmt = true;
    } else if (std::memcmp(chunk, "data", 4) == 0) {
      data_offset = body;
      data = bytes.data() + body;
      // Tolerate writers that leave the data size unset or too large.
      data_size = std::min<std::size_t>(size, bytes.size() - body);
      break;
    }
    pos = body + size + (size & 1u);
  }

  if (!have_fmt) throw malformed(path, 12, "no fmt chunk before data");
  if (data == nullptr) throw malformed(path, pos, "no data chunk");
  if (fmt.channels < 1 || fmt.channels > 2)
    throw data_error("unsupported WAV codec in '" + path.string() + "': " +
                     std::to_string(fmt.channels) + " channels");
  if (fmt.sample_rate == 0) throw malformed(path, 24, "zero sample rate");

  const bool pcm16 = fmt.format == kFormatPcm && fmt.bits == 16;
  const bool f32 = fmt.format == kFormatFloat && fmt.bits == 32;
  if (!pcm16 && !f32)
    throw data_error("unsupported WAV codec in '" + path.string() + "': format " +
                     std::to_string(fmt.format) + ", " + std::to_string(fmt.bits) + " bits");

  const std::size_t sample_bytes = fmt.bits / 8;
  const std::size_t frame_bytes = sample_bytes * fmt.channels;
  const std::size_t n_frames = data_size / frame_bytes;
  (void)data_offset;

  Waveform wav;
  wav.sample_rate = static_cast<int>(fmt.sample_rate);
  wav.samples.resize(static_cast<Eigen::Index>(n_frames));
  for (std::size_t i = 0; i < n_frames; ++i) {
    double acc = 0.0;
    for (std::size_t c = 0; c < fmt.channels; ++c) {
      const unsigned char* p = data + i * frame_bytes + c * sample_bytes;
      if (pcm16) {
        acc += static_cast<std::int16_t>(le16(p)) / 32768.0;
      } else {
        const std::uint32_t bits = le32(p);
        float v;
        std::memcpy(&v, &bits, sizeof v);
        acc += v;
      }
    }
    const double v = acc / fmt.channels;
    if (!std::isfinite(v))
      throw malformed(path, data_offset + i * frame_bytes, "non-finite sample");
    wav.samples[static_cast<Eigen::Index>(i)] = v;
  }
  return wav;
}

void write_wav(const std::filesystem::path& path, const Waveform& waveform) {
  const auto n = static_cast<std::uint32_t>(waveform.samples.size());
  const std::uint32_t data_bytes = n * 2;
  std::vector<unsigned char> out;
  out.reserve(44 + data_bytes);
  out.insert(out.end(), {'R', 'I', 'F', 'F'});
  put32(out, 36 + data_bytes);
  out.insert(out.end(), {'W', 'A', 'V', 'E', 'f', 'm', 't', ' '});
  put32(out, 16);
  put16(out, kFormatPcm);
  put16(out, 1);
  put32(out, static_cast<std::uint32_t>(waveform.sample_rate));
  put32(out, static_cast<std::uint32_t>(waveform.sample_rate) * 2);
  put16(out, 2);
  put16(out, 16);
  out.insert(out.end(), {'d', 'a', 't', 'a'});
  put32(out, data_bytes);
  for (Eigen::Index i = 0; i < waveform.samples.size(); ++i) {
    const double x = std::clamp(waveform.samples[i], -1.0, 1.0);
    const double q = std::clamp(std::round(x * 32768.0), -32768.0, 32767.0);
    put16(out, static_cast<std::uint16_t>(static_cast<std::int16_t>(q)));
  }

  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw data_error("cannot write WAV file '" + path.string() + "'");
  os.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size()));
  if (!os) throw data_error("write failed for '" + path.string() + "'");
}

Waveform resample(const Waveform& waveform, int target_rate) {
  if (target_rate <= 0) throw usage_error("resample: target rate must be positive");
  if (target_rate == waveform.sample_rate) return waveform;

  const long source = waveform.sample_rate;
  const long g = std::gcd(source, static_cast<long>(target_rate));
  const long up = target_rate / g;    // output samples per cycle
  const long down = source / g;       // input samples per cycle
  const Eigen::Index n_in = waveform.samples.size();
  const auto n_out = static_cast<Eigen::Index>(
      std::llround(static_cast<double>(n_in) * target_rate / source));

  constexpr double kZeroCrossings = 32.0;
  constexpr double kBeta = 8.6;
  constexpr double kRolloff = 0.95;
  const double cutoff = kRolloff * std::min(1.0, static_cast<double>(target_rate) / source);
  const double half_width = kZeroCrossings / cutoff;
  const auto taps = static_cast<Eigen::Index>(std::floor(half_width));

  auto kernel = [&](double x) {
    if (std::abs(x) >= half_width) return 0.0;
    return cutoff * sinc(cutoff * x) * kaiser(x / half_width, kBeta);
  };

  // Polyphase table: the fractional offset of output n is ((n * down) mod up) / up.
  const Eigen::Index width = 2 * taps + 2;
  const bool tabulate = up <= 4096;
  Eigen::MatrixXd table;
  if (tabulate) {
    table.resize(width, up);
    for (long phase = 0; phase < up; ++phase) {
      const double frac = static_cast<double>(phase) / up;
      for (Eigen::Index j = 0; j < width; ++j) {
        const double k = static_cast<double>(j - taps);
        table(j, phase) = kernel(frac - k);
      }
    }
  }

  Waveform out;
  out.sample_rate = target_rate;
  out.samples.setZero(n_out);
  for (Eigen::Index n = 0; n < n_out; ++n) {
    const long long num = static_cast<long long>(n) * down;
    const Eigen::Index base = static_cast<Eigen::Index>(num / up);
    const long phase = static_cast<long>(num % up);
    const double frac = static_cast<double>(phase) / up;
    double acc = 0.0;
    for (Eigen::Index j = 0; j < width; ++j) {
      const Eigen::Index k = base + j - taps;
      if (k < 0 || k >= n_in) continue;
      const double h = tabulate ? table(j, phase) : kernel(frac - static_cast<double>(j - taps));
      acc += h * waveform.samples[k];
    }
    out.samples[n] = acc;
  }
  return out;
}

std::pair<Eigen::Index, Eigen::Index> speech_bounds(const Waveform& waveform,
                                                    const VadConfig& cfg) {
  const Eigen::Index n = waveform.samples.size();
  if (n == 0) return {0, 0};
  const double sr = waveform.sample_rate;
  const Eigen::Index win = std::min<Eigen::Index>(n, std::max<Eigen::Index>(1, std::lround(0.020 * sr)));
  const Eigen::Index hop = std::max<Eigen::Index>(1, std::lround(0.010 * sr));
  const Eigen::Index n_win = 1 + (n - win) / hop;

  std::vector<double> rms(static_cast<std::size_t>(n_win));
  for (Eigen::Index w = 0; w < n_win; ++w)
    rms[static_cast<std::size_t>(w)] =
        std::sqrt(waveform.samples.segment(w * hop, win).squaredNorm() / static_cast<double>(win));
  const double peak = *std::max_element(rms.begin(), rms.end());
  if (peak <= 0.0) return {0, 0};
  const double threshold = peak * std::pow(10.0, cfg.energy_threshold_db / 20.0);

  Eigen::Index first = -1;
  Eigen::Index last = -1;
  for (Eigen::Index w = 0; w < n_win; ++w) {
    if (rms[static_cast<std::size_t>(w)] >= threshold) {
      if (first < 0) first = w;
      last = w;
    }
  }
  if (first < 0) return {0, 0};

  const auto min_silence = static_cast<Eigen::Index>(std::lround(cfg.min_silence_ms * 1e-3 * sr));
  const auto margin = static_cast<Eigen::Index>(std::lround(cfg.margin_ms * 1e-3 * sr));

  Eigen::Index begin = 0;
  const Eigen::Index lead = first * hop;
  if (lead >= min_silence) begin = std::max<Eigen::Index>(0, lead - margin);

  Eigen::Index end = n;
  const Eigen::Index speech_end = (last == n_win - 1) ? n : last * hop + win;
  if (n - speech_end >= min_silence) end = std::min(n, speech_end + margin);
  return {begin, end};
}

Waveform trim_silence(const Waveform& waveform, const VadConfig& cfg) {
  const auto [begin, end] = speech_bounds(waveform, cfg);
  Waveform out;
  out.sample_rate = waveform.sample_rate;
  out.samples = waveform.samples.segment(begin, end - begin);
  return out;
}

}  // namespace neuform
