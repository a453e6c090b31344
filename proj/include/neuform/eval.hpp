#pragma once

#include "neuform/params.hpp"
#include "neuform/pipeline.hpp"

#include <array>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

namespace neuform {

/// z-scored error of the eight continuous parameters plus voicing agreement.
/// F0 and formant errors use only frames voiced in both trajectories.
struct ParamErrorReport {
  std::array<double, kNumContinuous> mse{};        // NaN when no frame qualified
  std::array<double, kNumContinuous> median_se{};
  std::array<long, kNumContinuous> frames{};
  double vuv_disagreement = 0.0;
  long total_frames = 0;
  bool truncated = false;  // frame counts differed by at most two and were trimmed

  double mse_of(Param p) const { return mse[static_cast<std::size_t>(index(p) - 1)]; }
  double median_of(Param p) const { return median_se[static_cast<std::size_t>(index(p) - 1)]; }
};

/// Pools squared z-errors over any number of utterance pairs.
class ErrorAccumulator {
public:
  explicit ErrorAccumulator(NormStats stats);

  /// Adds one (reference, test) pair. Throws neuform::Error (Data) when the
  /// frame counts differ by more than two.
  void add(const SpeechParams& reference, const SpeechParams& test);
  ParamErrorReport report() const;

private:
  NormStats stats_;
  std::array<std::vector<double>, kNumContinuous> squared_;
  long vuv_mismatch_ = 0;
  long frames_ = 0;
  bool truncated_ = false;
};

ParamErrorReport copy_synthesis_error(const SpeechParams& reference, const SpeechParams& resynthesized,
                                      const NormStats& stats);

inline const std::vector<double> kPaperFactors{0.7, 0.8, 0.9, 1.1, 1.2, 1.3};

struct SweepEntry {
  Param param = Param::LogF0;
  double factor = 1.0;
  ParamErrorReport errors;          // against the manipulated target
  double median_relative_error = 0.0;  // |re-extracted / target - 1| of the manipulated parameter
  int failures = 0;
};

struct SweepFailure {
  std::size_t utterance = 0;
  Param param = Param::LogF0;
  double factor = 1.0;
  std::string message;
};

struct SweepReport {
  std::vector<SweepEntry> entries;
  std::vector<SweepFailure> failures;
};

struct SweepOptions {
  std::vector<Param> params{Param::LogF0, Param::F1, Param::F2, Param::F3, Param::F4,
                            Param::Tilt,  Param::Centroid, Param::Energy};
  std::vector<double> factors = kPaperFactors;
  bool synthesize = true;  // false compares targets with themselves (parameter domain only)
  int jobs = 1;
};

/// One utterance to sweep: its waveform analysis supplies reference params and preset.
struct SweepUtterance {
  Analysis analysis;
};

/// Analysis settings for re-extracting a manipulated rendering: the original
/// voice preset with F0 bounds or formant ceiling widened by the factor.
AnalysisConfig widened_config(const AnalysisConfig& base, const VoicePreset& preset, Param param,
                              double factor);

/// Copy synthesis over a set of utterances: render each analysis unchanged,
/// re-analyze with its original preset, pool the errors.
ParamErrorReport copy_synthesis_report(const std::vector<SweepUtterance>& utterances, const Pipeline& pipeline,
                                       const NormStats& stats, int jobs = 1);

SweepReport manipulation_sweep(const std::vector<SweepUtterance>& utterances, const Pipeline& pipeline,
                               const NormStats& stats, const SweepOptions& options = {});

enum class ReportFormat { Csv, Json };

void write_report(std::ostream& os, const ParamErrorReport& report, ReportFormat format);
void write_report(std::ostream& os, const SweepReport& report, ReportFormat format);
void write_report(const std::filesystem::path& path, const ParamErrorReport& report, ReportFormat format);
void write_report(const std::filesystem::path& path, const SweepReport& report, ReportFormat format);

ParamErrorReport read_error_report_csv(std::istream& is);
SweepReport read_sweep_report_csv(std::istream& is);

}  // namespace neuform
