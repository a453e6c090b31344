#pragma once

#include "neuform/audio_io.hpp"
#include "neuform/formant.hpp"
#include "neuform/pitch.hpp"
#include "neuform/spectral.hpp"

#include <Eigen/Core>
#include <nlohmann/json_fwd.hpp>

#include <array>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string_view>
#include <vector>

namespace neuform {

/// Column order of SpeechParams::values.
enum class Param : int { Vuv = 0, LogF0, F1, F2, F3, F4, Tilt, Centroid, Energy };

inline constexpr int kNumParams = 9;
inline constexpr int kNumContinuous = 8;  // everything but the voicing flag

inline constexpr std::array<std::string_view, kNumParams> kParamNames = {
    "vuv", "log_f0", "f1", "f2", "f3", "f4", "tilt", "centroid", "energy"};

constexpr int index(Param p) { return static_cast<int>(p); }
std::string_view name(Param p);
/// Parses a parameter name ("f1", "log_f0", ...); also accepts "f0" for log_f0.
std::optional<Param> parse_param(std::string_view text);

/// The nine per-frame control parameters. Rows are frames.
struct SpeechParams {
  Eigen::MatrixXd values;  // n_frames x 9
  FrameGrid grid;

  Eigen::Index n_frames() const { return values.rows(); }
  auto col(Param p) { return values.col(index(p)); }
  auto col(Param p) const { return values.col(index(p)); }
};

/// Per-parameter mean and population standard deviation (floored at 1e-8).
struct NormStats {
  Eigen::VectorXd mean;
  Eigen::VectorXd std;

  Eigen::Index size() const { return mean.size(); }
  friend bool operator==(const NormStats& a, const NormStats& b) {
    return a.mean.size() == b.mean.size() && a.mean == b.mean && a.std == b.std;
  }
};

inline constexpr double kStdFloor = 1e-8;

/// Per-parameter scalings (linear parameters) and an additive log-F0 shift.
struct ManipulationSpec {
  std::array<std::optional<double>, kNumParams> factor{};
  std::optional<double> log_f0_shift;

  ManipulationSpec& scale(Param p, double f);
  ManipulationSpec& shift_log_f0(double delta);
  /// Scales F0 by alpha, i.e. shifts log F0 by ln(alpha).
  ManipulationSpec& scale_f0(double alpha);

  bool empty() const;
  void validate() const;
};

struct AnalysisConfig {
  int win_length = 1024;
  int hop_length = 256;
  int sample_rate = kWorkingRate;
  int n_mels = 80;
  double mel_f_min = 0.0;
  double mel_f_max = 8000.0;
  TiltScale tilt_scale = TiltScale::Decibel;
  std::optional<VoicePreset> preset;  // chosen automatically when empty
  LpcFrameConfig lpc;                 // ceiling is taken from the preset
  // Voicing settings applied on top of whichever preset is used.
  double voicing_threshold = 0.45;
  double silence_threshold = 0.03;
  double octave_cost = 0.01;
  // Range widening for manipulated inputs: a factor a moves f_min down by
  // min(1, a) and f_max up by max(1, a); the formant ceiling grows by max(1, a).
  double f0_range_scale = 1.0;
  double ceiling_scale = 1.0;

  FrameGrid grid_for(const Waveform& waveform) const;
  MelBasis mel_basis() const;
};

struct Analysis {
  SpeechParams params;
  MelSpectrogram mel;
  PitchTrack pitch;       // raw track (NaN where unvoiced)
  FormantTracks formants;
  VoicePreset preset;
};

/// Extracts all nine parameters and the reference mel-spectrogram on one grid.
Analysis analyze(const Waveform& waveform, const AnalysisConfig& cfg = {});

/// Pooled statistics of the eight continuous parameters over all frames.
NormStats compute_norm_stats(const std::vector<SpeechParams>& collection);

/// Pooled per-column statistics of arbitrary row-major data (rows are frames).
NormStats compute_column_stats(const std::vector<const Eigen::MatrixXd*>& blocks);

/// z-scores the continuous parameters; the voicing column passes through.
Eigen::MatrixXd normalize(const SpeechParams& params, const NormStats& stats);
SpeechParams denormalize(const Eigen::MatrixXd& z, const NormStats& stats, const FrameGrid& grid);

SpeechParams manipulate(const SpeechParams& params, const ManipulationSpec& spec);

void write_params_csv(std::ostream& os, const SpeechParams& params);
void write_params_csv(const std::filesystem::path& path, const SpeechParams& params);
SpeechParams read_params_csv(std::istream& is, FrameGrid grid = {});
SpeechParams read_params_csv(const std::filesystem::path& path, FrameGrid grid = {});

nlohmann::json to_json(const NormStats& stats);
NormStats norm_stats_from_json(const nlohmann::json& j);
void save_norm_stats(const std::filesystem::path& path, const NormStats& stats);
NormStats load_norm_stats(const std::filesystem::path& path);

/// printf("%.9g") formatting used by every text output.
std::string format_g9(double v);

}  // namespace neuform
