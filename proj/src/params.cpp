#include "neuform/params.hpp"

#include "neuform/error.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>

namespace neuform {

std::string_view name(Param p) { return kParamNames[static_cast<std::size_t>(index(p))]; }

std::optional<Param> parse_param(std::string_view text) {
  if (text == "f0") return Param::LogF0;
  for (int i = 0; i < kNumParams; ++i)
    if (kParamNames[static_cast<std::size_t>(i)] == text) return static_cast<Param>(i);
  return std::nullopt;
}

std::string format_g9(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

ManipulationSpec& ManipulationSpec::scale(Param p, double f) {
  if (p == Param::Vuv) throw usage_error("the voicing flag cannot be manipulated");
  if (p == Param::LogF0) return scale_f0(f);
  factor[static_cast<std::size_t>(index(p))] = f;
  return *this;
}

ManipulationSpec& ManipulationSpec::shift_log_f0(double delta) {
  log_f0_shift = delta;
  return *this;
}

ManipulationSpec& ManipulationSpec::scale_f0(double alpha) {
  if (!(alpha > 0.0) || !std::isfinite(alpha))
    throw usage_error("F0 factor must be positive, got " + format_g9(alpha));
  return shift_log_f0(std::log(alpha));
}

bool ManipulationSpec::empty() const {
  return !log_f0_shift && std::none_of(factor.begin(), factor.end(),
                                       [](const auto& f) { return f.has_value(); });
}

void ManipulationSpec::validate() const {
  for (int i = 0; i < kNumParams; ++i) {
    const auto& f = factor[static_cast<std::size_t>(i)];
    if (!f) continue;
    const auto p = static_cast<Param>(i);
    if (p == Param::Vuv || p == Param::LogF0)
      throw usage_error(std::string(name(p)) + " takes no multiplicative factor");
    if (!(*f > 0.0) || !std::isfinite(*f))
      throw usage_error("factor for " + std::string(name(p)) + " must be positive, got " +
                        format_g9(*f));
  }
  if (log_f0_shift && !std::isfinite(*log_f0_shift)) throw usage_error("log F0 shift must be finite");
}

FrameGrid AnalysisConfig::grid_for(const Waveform& waveform) const {
  return FrameGrid::for_waveform(waveform, win_length, hop_length);
}

MelBasis AnalysisConfig::mel_basis() const {
  return mel_filterbank(win_length, n_mels, mel_f_min, mel_f_max, sample_rate);
}

Analysis analyze(const Waveform& waveform, const AnalysisConfig& cfg) {
  if (waveform.sample_rate != cfg.sample_rate)
    throw usage_error("analyze expects " + std::to_string(cfg.sample_rate) + " Hz input, got " +
                      std::to_string(waveform.sample_rate) + " Hz");
  Analysis out;
  const FrameGrid grid = cfg.grid_for(waveform);

  out.preset = cfg.preset ? *cfg.preset : auto_voice_preset(waveform);
  F0Config f0 = out.preset.f0;
  f0.voicing_threshold = cfg.voicing_threshold;
  f0.silence_threshold = cfg.silence_threshold;
  f0.octave_cost = cfg.octave_cost;
  f0.f_min *= std::min(1.0, cfg.f0_range_scale);
  f0.f_max = std::min(f0.f_max * std::max(1.0, cfg.f0_range_scale), 0.45 * cfg.sample_rate);
  LpcFrameConfig lpc = cfg.lpc;
  lpc.ceiling = std::min(out.preset.formant_ceiling * std::max(1.0, cfg.ceiling_scale),
                         0.5 * cfg.sample_rate);

  out.pitch = estimate_f0(waveform, f0, grid);
  const PitchTrack filled = interpolate_unvoiced(out.pitch);
  out.formants = estimate_formants(waveform, lpc, grid, out.pitch.vuv);

  const Eigen::MatrixXd frames = frame_signal(waveform, grid);
  const MagnitudeSpectrogram spec = stft_magnitude(frames, grid);
  out.mel = mel_spectrogram(spec, cfg.mel_basis());

  SpeechParams& p = out.params;
  p.grid = grid;
  p.values.resize(grid.n_frames, kNumParams);
  p.col(Param::Vuv) = out.pitch.vuv.cast<double>();
  p.col(Param::LogF0) = filled.log_f0;
  p.values.middleCols(index(Param::F1), kTrackedFormants) = out.formants.values;
  for (Eigen::Index t = 0; t < grid.n_frames; ++t) {
    const Eigen::VectorXd row = spec.values.row(t).transpose();
    p.values(t, index(Param::Tilt)) = spectral_tilt(row, grid.sample_rate, cfg.tilt_scale);
    p.values(t, index(Param::Centroid)) = spectral_centroid(row, grid.sample_rate);
    p.values(t, index(Param::Energy)) = frame_energy(frames.row(t).transpose());
  }
  return out;
}

NormStats compute_column_stats(const std::vector<const Eigen::MatrixXd*>& blocks) {
  Eigen::Index cols = -1;
  Eigen::Index rows = 0;
  for (const auto* b : blocks) {
    if (b->rows() == 0) continue;
    if (cols >= 0 && b->cols() != cols) throw usage_error("column count differs between blocks");
    cols = b->cols();
    rows += b->rows();
  }
  if (rows == 0) throw data_error("cannot compute statistics of an empty collection");

  NormStats stats;
  stats.mean = Eigen::VectorXd::Zero(cols);
  for (const auto* b : blocks)
    if (b->rows() > 0) stats.mean += b->colwise().sum().transpose();
  stats.mean /= static_cast<double>(rows);
  Eigen::VectorXd ss = Eigen::VectorXd::Zero(cols);
  for (const auto* b : blocks)
    if (b->rows() > 0)
      ss += (b->rowwise() - stats.mean.transpose()).colwise().squaredNorm().transpose();
  stats.std = (ss / static_cast<double>(rows)).cwiseSqrt().cwiseMax(kStdFloor);
  return stats;
}

NormStats compute_norm_stats(const std::vector<SpeechParams>& collection) {
  std::vector<Eigen::MatrixXd> continuous;
  continuous.reserve(collection.size());
  for (const auto& p : collection) continuous.push_back(p.values.rightCols(kNumContinuous));
  std::vector<const Eigen::MatrixXd*> blocks;
  for (const auto& c : continuous) blocks.push_back(&c);
  return compute_column_stats(blocks);
}

Eigen::MatrixXd normalize(const SpeechParams& params, const NormStats& stats) {
  if (stats.size() != kNumContinuous) throw usage_error("normalize: stats must cover 8 parameters");
  Eigen::MatrixXd z = params.values;
  auto cont = z.rightCols(kNumContinuous);
  cont = (cont.rowwise() - stats.mean.transpose()).array().rowwise() / stats.std.transpose().array();
  return z;
}

SpeechParams denormalize(const Eigen::MatrixXd& z, const NormStats& stats, const FrameGrid& grid) {
  if (stats.size() != kNumContinuous || z.cols() != kNumParams)
    throw usage_error("denormalize: shape mismatch");
  SpeechParams p;
  p.grid = grid;
  p.grid.n_frames = z.rows();
  p.values = z;
  auto cont = p.values.rightCols(kNumContinuous);
  cont = (cont.array().rowwise() * stats.std.transpose().array()).matrix().rowwise() +
         stats.mean.transpose();
  return p;
}

SpeechParams manipulate(const SpeechParams& params, const ManipulationSpec& spec) {
  spec.validate();
  SpeechParams out = params;
  for (int i = 0; i < kNumParams; ++i)
    if (const auto& f = spec.factor[static_cast<std::size_t>(i)]) out.values.col(i) *= *f;
  if (spec.log_f0_shift) out.col(Param::LogF0).array() += *spec.log_f0_shift;
  return out;
}

void write_params_csv(std::ostream& os, const SpeechParams& params) {
  os << "frame,time_s";
  for (auto n : kParamNames) os << ',' << n;
  os << '\n';
  for (Eigen::Index t = 0; t < params.n_frames(); ++t) {
    const double time = static_cast<double>(t) * params.grid.hop_length / params.grid.sample_rate;
    os << t << ',' << format_g9(time) << ',' << static_cast<int>(params.values(t, 0));
    for (int c = 1; c < kNumParams; ++c) os << ',' << format_g9(params.values(t, c));
    os << '\n';
  }
}

void write_params_csv(const std::filesystem::path& path, const SpeechParams& params) {
  std::ofstream os(path);
  if (!os) throw data_error("cannot write '" + path.string() + "'");
  write_params_csv(os, params);
  if (!os) throw data_error("write failed for '" + path.string() + "'");
}

SpeechParams read_params_csv(std::istream& is, FrameGrid grid) {
  std::string line;
  if (!std::getline(is, line)) throw data_error("params CSV: missing header");
  std::string expected = "frame,time_s";
  for (auto n : kParamNames) expected += "," + std::string(n);
  if (line != expected) throw data_error("params CSV: unexpected header '" + line + "'");

  std::vector<std::array<double, kNumParams>> rows;
  std::size_t line_no = 1;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    std::vector<std::string> cells;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() != 2 + kNumParams)
      throw data_error("params CSV line " + std::to_string(line_no) + ": expected " +
                       std::to_string(2 + kNumParams) + " fields");
    if (std::stol(cells[0]) != static_cast<long>(rows.size()))
      throw data_error("params CSV line " + std::to_string(line_no) + ": frames out of order");
    std::array<double, kNumParams> row{};
    for (int c = 0; c < kNumParams; ++c) {
      try {
        row[static_cast<std::size_t>(c)] = std::stod(cells[static_cast<std::size_t>(c) + 2]);
      } catch (const std::exception&) {
        throw data_error("params CSV line " + std::to_string(line_no) + ": bad number");
      }
    }
    rows.push_back(row);
  }
  SpeechParams p;
  p.grid = grid;
  p.grid.n_frames = static_cast<Eigen::Index>(rows.size());
  p.values.resize(p.grid.n_frames, kNumParams);
  for (Eigen::Index t = 0; t < p.grid.n_frames; ++t)
    for (int c = 0; c < kNumParams; ++c)
      p.values(t, c) = rows[static_cast<std::size_t>(t)][static_cast<std::size_t>(c)];
  return p;
}

SpeechParams read_params_csv(const std::filesystem::path& path, FrameGrid grid) {
  std::ifstream is(path);
  if (!is) throw data_error("cannot open '" + path.string() + "'");
  return read_params_csv(is, grid);
}

nlohmann::json to_json(const NormStats& stats) {
  nlohmann::json j;
  j["mean"] = std::vector<double>(stats.mean.data(), stats.mean.data() + stats.mean.size());
  j["std"] = std::vector<double>(stats.std.data(), stats.std.data() + stats.std.size());
  if (stats.size() == kNumContinuous) {
    std::vector<std::string> names;
    for (int i = 1; i < kNumParams; ++i) names.emplace_back(kParamNames[static_cast<std::size_t>(i)]);
    j["parameters"] = names;
  }
  return j;
}

NormStats norm_stats_from_json(const nlohmann::json& j) {
  try {
    const auto mean = j.at("mean").get<std::vector<double>>();
    const auto std = j.at("std").get<std::vector<double>>();
    if (mean.size() != std.size()) throw data_error("norm stats: mean/std length mismatch");
    NormStats s;
    s.mean = Eigen::Map<const Eigen::VectorXd>(mean.data(), static_cast<Eigen::Index>(mean.size()));
    s.std = Eigen::Map<const Eigen::VectorXd>(std.data(), static_cast<Eigen::Index>(std.size()));
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw data_error(std::string("norm stats: ") + e.what());
  }
}

void save_norm_stats(const std::filesystem::path& path, const NormStats& stats) {
  std::ofstream os(path);
  if (!os) throw data_error("cannot write '" + path.string() + "'");
  os << to_json(stats).dump(2) << '\n';
}

NormStats load_norm_stats(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw data_error("cannot open '" + path.string() + "'");
  try {
    return norm_stats_from_json(nlohmann::json::parse(is));
  } catch (const nlohmann::json::parse_error& e) {
    throw data_error("norm stats '" + path.string() + "': " + e.what());
  }
}

}  // namespace neuform
