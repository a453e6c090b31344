#pragma once

#include "neuform/audio_io.hpp"
#include "neuform/spectral.hpp"

#include <Eigen/Core>

#include <string>

namespace neuform {

struct F0Config {
  double f_min = 75.0;
  double f_max = 300.0;
  double voicing_threshold = 0.45;
  double silence_threshold = 0.03;
  double octave_cost = 0.01;  // per octave

  void validate(int sample_rate) const;
};

/// Per-frame natural-log F0 and voicing. Before interpolate_unvoiced() the
/// unvoiced frames hold NaN.
struct PitchTrack {
  Eigen::VectorXd log_f0;
  Eigen::VectorXi vuv;
  Eigen::VectorXd strength;  // best normalized autocorrelation peak per frame

  Eigen::Index size() const { return log_f0.size(); }
  Eigen::Index voiced_count() const { return vuv.sum(); }
};

struct VoicePreset {
  std::string name;
  F0Config f0;
  double formant_ceiling = 5000.0;
  bool warning = false;  // set when the preset was chosen without voiced evidence
};

VoicePreset low_voice_preset();
VoicePreset high_voice_preset();

/// Autocorrelation pitch tracker evaluated at the centres of `grid`'s frames.
PitchTrack estimate_f0(const Waveform& waveform, const F0Config& cfg, const FrameGrid& grid);

/// Fills unvoiced frames by linear interpolation in log F0 with edge hold.
/// Throws neuform::Error (Data) when no frame is voiced.
PitchTrack interpolate_unvoiced(const PitchTrack& track);

/// Picks the low or high preset from the median F0 of a wide-range first pass.
VoicePreset auto_voice_preset(const Waveform& waveform);

/// Linear interpolation over entries where `valid` is zero, holding the first
/// and last valid values at the edges. Returns false if nothing is valid.
bool interpolate_gaps(Eigen::Ref<Eigen::VectorXd> values, const Eigen::Ref<const Eigen::VectorXi>& valid);

}  // namespace neuform
