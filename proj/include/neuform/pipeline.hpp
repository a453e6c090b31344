#pragma once

#include "neuform/mapper.hpp"
#include "neuform/params.hpp"
#include "neuform/vocoder.hpp"

#include <vector>

namespace neuform {

/// Parameters -> mel (mapper) -> linear magnitude -> Griffin-Lim -> gain fix.
class Pipeline {
public:
  Pipeline(MapperModel<float> model, GriffinLimConfig gl = {}, bool fix_energy = true);

  const MapperModel<float>& model() const { return model_; }
  const MelBasis& basis() const { return basis_; }
  /// Analysis settings consistent with the model's features.
  AnalysisConfig analysis_config() const;

  MelSpectrogram mel(const SpeechParams& params) const;
  Waveform render(const SpeechParams& params) const;
  /// Renders an externally supplied mel-spectrogram (no energy correction).
  Waveform render_mel(const MelSpectrogram& mel) const;

private:
  MapperModel<float> model_;
  GriffinLimConfig gl_;
  bool fix_energy_;
  MelBasis basis_;
};

/// Training pairs from analyses: stats are computed over all given analyses.
struct PreparedData {
  NormStats input_stats;
  NormStats mel_stats;
  std::vector<TrainingPair> pairs;
};

PreparedData prepare_training_data(const std::vector<Analysis>& analyses);

/// Normalizes one analysis with existing stats.
TrainingPair make_training_pair(const Analysis& analysis, const NormStats& input_stats,
                                const NormStats& mel_stats);

}  // namespace neuform
