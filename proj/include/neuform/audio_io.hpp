#pragma once

#include <Eigen/Core>

#include <cstddef>
#include <filesystem>

namespace neuform {

inline constexpr int kWorkingRate = 22050;

/// Mono audio. Samples nominally lie in [-1, 1].
struct Waveform {
  Eigen::VectorXd samples;
  int sample_rate = kWorkingRate;

  Eigen::Index size() const { return samples.size(); }
  bool empty() const { return samples.size() == 0; }
  double duration() const { return static_cast<double>(samples.size()) / sample_rate; }
};

struct VadConfig {
  double energy_threshold_db = -40.0;  // relative to the loudest window
  double min_silence_ms = 100.0;
  double margin_ms = 50.0;
};

/// Reads a RIFF/WAVE file (PCM16 or IEEE float32, mono or stereo). Stereo is
/// averaged to mono. Throws neuform::Error (kind Data) with the byte offset of
/// the offending chunk on malformed input.
Waveform read_wav(const std::filesystem::path& path);

/// Writes mono PCM16. Samples are clamped to [-1, 1] before quantization.
void write_wav(const std::filesystem::path& path, const Waveform& waveform);

/// Kaiser-windowed sinc resampling. Output length is round(n * target / source).
Waveform resample(const Waveform& waveform, int target_rate);

/// Energy-based trimming of leading and trailing silence. The result is always
/// a contiguous slice of the input; an all-silent input yields an empty result.
Waveform trim_silence(const Waveform& waveform, const VadConfig& cfg = {});

/// Half-open sample range [begin, end) that trim_silence would keep.
std::pair<Eigen::Index, Eigen::Index> speech_bounds(const Waveform& waveform,
                                                    const VadConfig& cfg = {});

}  // namespace neuform
