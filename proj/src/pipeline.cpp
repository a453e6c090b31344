#include "neuform/pipeline.hpp"

namespace neuform {

Pipeline::Pipeline(MapperModel<float> model, GriffinLimConfig gl, bool fix_energy)
    : model_(std::move(model)), gl_(gl), fix_energy_(fix_energy) {
  const FeatureSettings& f = model_.features;
  basis_ = mel_filterbank(f.win_length, f.n_mels, f.mel_f_min, f.mel_f_max, f.sample_rate);
}

AnalysisConfig Pipeline::analysis_config() const {
  const FeatureSettings& f = model_.features;
  AnalysisConfig cfg;
  cfg.sample_rate = f.sample_rate;
  cfg.win_length = f.win_length;
  cfg.hop_length = f.hop_length;
  cfg.n_mels = f.n_mels;
  cfg.mel_f_min = f.mel_f_min;
  cfg.mel_f_max = f.mel_f_max;
  return cfg;
}

MelSpectrogram Pipeline::mel(const SpeechParams& params) const {
  if (params.grid.sample_rate != model_.features.sample_rate ||
      params.grid.hop_length != model_.features.hop_length ||
      params.grid.win_length != model_.features.win_length)
    throw usage_error("parameters were extracted with a frame grid the model was not trained on");
  return predict_mel(model_, params);
}

Waveform Pipeline::render_mel(const MelSpectrogram& mel) const {
  MelSpectrogram m = mel;
  m.grid.win_length = model_.features.win_length;
  m.grid.n_frames = mel.n_frames();
  return griffin_lim(mel_to_linear(m, basis_), gl_);
}

Waveform Pipeline::render(const SpeechParams& params) const {
  Waveform wav = render_mel(mel(params));
  if (fix_energy_ && params.n_frames() > 0)
    wav = match_energy(wav, params.col(Param::Energy), params.grid);
  return wav;
}

TrainingPair make_training_pair(const Analysis& analysis, const NormStats& input_stats,
                                const NormStats& mel_stats) {
  TrainingPair pair;
  pair.params = normalize(analysis.params, input_stats).cast<float>();
  const Eigen::MatrixXd mel = analysis.mel.values.cast<double>();
  pair.mel = ((mel.rowwise() - mel_stats.mean.transpose()).array().rowwise() /
              mel_stats.std.transpose().array())
                 .matrix()
                 .cast<float>();
  return pair;
}

PreparedData prepare_training_data(const std::vector<Analysis>& analyses) {
  PreparedData out;
  std::vector<SpeechParams> params;
  std::vector<Eigen::MatrixXd> mels;
  for (const auto& a : analyses) {
    params.push_back(a.params);
    mels.push_back(a.mel.values.cast<double>());
  }
  out.input_stats = compute_norm_stats(params);
  std::vector<const Eigen::MatrixXd*> blocks;
  for (const auto& m : mels) blocks.push_back(&m);
  out.mel_stats = compute_column_stats(blocks);
  for (const auto& a : analyses) out.pairs.push_back(make_training_pair(a, out.input_stats, out.mel_stats));
  return out;
}

}  // namespace neuform
