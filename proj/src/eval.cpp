#include "neuform/eval.hpp"

#include "neuform/error.hpp"
#include "neuform/parallel.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

namespace neuform {
namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

bool voicing_restricted(int continuous_index) {
  const auto p = static_cast<Param>(continuous_index + 1);
  return p == Param::LogF0 || p == Param::F1 || p == Param::F2 || p == Param::F3 || p == Param::F4;
}

double median_of(std::vector<double> v) {
  if (v.empty()) return kNaN;
  const auto mid = v.begin() + static_cast<std::ptrdiff_t>(v.size() / 2);
  std::nth_element(v.begin(), mid, v.end());
  double m = *mid;
  if (v.size() % 2 == 0) m = 0.5 * (m + *std::max_element(v.begin(), mid));
  return m;
}

std::string cell(double v) { return std::isnan(v) ? "nan" : format_g9(v); }

double parse_cell(const std::string& s) {
  if (s.empty() || s == "nan") return kNaN;
  try {
    return std::stod(s);
  } catch (const std::exception&) {
    throw data_error("report CSV: bad number '" + s + "'");
  }
}

nlohmann::json json_number(double v) { return std::isnan(v) ? nlohmann::json(nullptr) : nlohmann::json(v); }

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string c;
  while (std::getline(ss, c, ',')) out.push_back(c);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

std::string param_name(int continuous_index) {
  return std::string(kParamNames[static_cast<std::size_t>(continuous_index + 1)]);
}

const std::string kErrorHeader = "parameter,mse,median_se,vuv_disagreement,frames";

std::string sweep_header() {
  std::string h = "parameter,factor,median_relative_error";
  for (int i = 0; i < kNumContinuous; ++i) h += "," + param_name(i) + "_mse";
  h += ",vuv_disagreement,frames,failures";
  return h;
}

nlohmann::json error_json(const ParamErrorReport& r) {
  nlohmann::json j;
  nlohmann::json params = nlohmann::json::array();
  for (int i = 0; i < kNumContinuous; ++i) {
    const auto k = static_cast<std::size_t>(i);
    params.push_back({{"parameter", param_name(i)},
                      {"mse", json_number(r.mse[k])},
                      {"median_se", json_number(r.median_se[k])},
                      {"frames", r.frames[k]}});
  }
  j["parameters"] = params;
  j["vuv_disagreement"] = r.vuv_disagreement;
  j["frames"] = r.total_frames;
  j["truncated"] = r.truncated;
  return j;
}

}  // namespace

ErrorAccumulator::ErrorAccumulator(NormStats stats) : stats_(std::move(stats)) {
  if (stats_.size() != kNumContinuous) throw usage_error("error statistics must cover 8 parameters");
}

void ErrorAccumulator::add(const SpeechParams& reference, const SpeechParams& test) {
  const Eigen::Index diff = std::abs(reference.n_frames() - test.n_frames());
  if (diff > 2)
    throw data_error("frame counts differ by " + std::to_string(diff) + " (" +
                     std::to_string(reference.n_frames()) + " vs " + std::to_string(test.n_frames()) + ")");
  if (diff > 0) truncated_ = true;
  const Eigen::Index n = std::min(reference.n_frames(), test.n_frames());
  const Eigen::MatrixXd zr = normalize(reference, stats_).topRows(n);
  const Eigen::MatrixXd zt = normalize(test, stats_).topRows(n);
  for (Eigen::Index t = 0; t < n; ++t) {
    const bool vr = zr(t, 0) > 0.5;
    const bool vt = zt(t, 0) > 0.5;
    if (vr != vt) ++vuv_mismatch_;
    for (int i = 0; i < kNumContinuous; ++i) {
      if (voicing_restricted(i) && !(vr && vt)) continue;
      const double d = zt(t, i + 1) - zr(t, i + 1);
      squared_[static_cast<std::size_t>(i)].push_back(d * d);
    }
  }
  frames_ += n;
}

ParamErrorReport ErrorAccumulator::report() const {
  ParamErrorReport r;
  for (int i = 0; i < kNumContinuous; ++i) {
    const auto k = static_cast<std::size_t>(i);
    const auto& sq = squared_[k];
    r.frames[k] = static_cast<long>(sq.size());
    if (sq.empty()) {
      r.mse[k] = kNaN;
      r.median_se[k] = kNaN;
      continue;
    }
    double sum = 0.0;
    for (double v : sq) sum += v;
    r.mse[k] = sum / static_cast<double>(sq.size());
    r.median_se[k] = median_of(sq);
  }
  r.total_frames = frames_;
  r.vuv_disagreement = frames_ > 0 ? static_cast<double>(vuv_mismatch_) / static_cast<double>(frames_) : 0.0;
  r.truncated = truncated_;
  return r;
}

ParamErrorReport copy_synthesis_error(const SpeechParams& reference, const SpeechParams& resynthesized,
                                      const NormStats& stats) {
  ErrorAccumulator acc(stats);
  acc.add(reference, resynthesized);
  return acc.report();
}

AnalysisConfig widened_config(const AnalysisConfig& base, const VoicePreset& preset, Param param,
                              double factor) {
  AnalysisConfig cfg = base;
  cfg.preset = preset;
  if (param == Param::LogF0) cfg.f0_range_scale = factor;
  if (param == Param::F1 || param == Param::F2 || param == Param::F3 || param == Param::F4)
    cfg.ceiling_scale = factor;
  return cfg;
}

ParamErrorReport copy_synthesis_report(const std::vector<SweepUtterance>& utterances, const Pipeline& pipeline,
                                       const NormStats& stats, int jobs) {
  const AnalysisConfig base = pipeline.analysis_config();
  std::vector<SpeechParams> measured(utterances.size());
  parallel_for(utterances.size(), jobs, [&](std::size_t u) {
    const Analysis& a = utterances[u].analysis;
    measured[u] = analyze(pipeline.render(a.params), widened_config(base, a.preset, Param::LogF0, 1.0)).params;
  });
  ErrorAccumulator acc(stats);
  for (std::size_t u = 0; u < utterances.size(); ++u) acc.add(utterances[u].analysis.params, measured[u]);
  return acc.report();
}

SweepReport manipulation_sweep(const std::vector<SweepUtterance>& utterances, const Pipeline& pipeline,
                               const NormStats& stats, const SweepOptions& options) {
  SweepReport report;
  const AnalysisConfig base = pipeline.analysis_config();

  for (Param param : options.params) {
    if (param == Param::Vuv) throw usage_error("the voicing flag cannot be swept");
    for (double factor : options.factors) {
      ManipulationSpec spec;
      spec.scale(param, factor);
      spec.validate();

      struct Outcome {
        SpeechParams target;
        SpeechParams measured;
        std::string error;
      };
      std::vector<Outcome> outcomes(utterances.size());
      auto run = [&](std::size_t u) {
        Outcome& o = outcomes[u];
        try {
          o.target = manipulate(utterances[u].analysis.params, spec);
          if (!options.synthesize) {
            o.measured = o.target;
            return;
          }
          const Waveform wav = pipeline.render(o.target);
          o.measured =
              analyze(wav, widened_config(base, utterances[u].analysis.preset, param, factor)).params;
        } catch (const Error& e) {
          o.error = e.what();
        }
      };
      parallel_for(utterances.size(), options.jobs, run);

      SweepEntry entry;
      entry.param = param;
      entry.factor = factor;
      ErrorAccumulator acc(stats);
      std::vector<double> relative;
      for (std::size_t u = 0; u < outcomes.size(); ++u) {
        Outcome& o = outcomes[u];
        if (o.error.empty()) {
          try {
            acc.add(o.target, o.measured);
          } catch (const Error& e) {
            o.error = e.what();
          }
        }
        if (!o.error.empty()) {
          ++entry.failures;
          report.failures.push_back({u, param, factor, o.error});
          continue;
        }
        const Eigen::Index n = std::min(o.target.n_frames(), o.measured.n_frames());
        const bool voiced_only = param == Param::LogF0 || param == Param::F1 || param == Param::F2 ||
                                 param == Param::F3 || param == Param::F4;
        for (Eigen::Index t = 0; t < n; ++t) {
          if (voiced_only && !(o.target.values(t, 0) > 0.5 && o.measured.values(t, 0) > 0.5)) continue;
          double want = o.target.values(t, index(param));
          double got = o.measured.values(t, index(param));
          if (param == Param::LogF0) {
            want = std::exp(want);
            got = std::exp(got);
          }
          if (want != 0.0) relative.push_back(std::abs(got / want - 1.0));
        }
      }
      entry.errors = acc.report();
      entry.median_relative_error = median_of(relative);
      report.entries.push_back(entry);
    }
  }
  return report;
}

void write_report(std::ostream& os, const ParamErrorReport& r, ReportFormat format) {
  if (format == ReportFormat::Json) {
    os << error_json(r).dump(2) << '\n';
    return;
  }
  os << kErrorHeader << '\n';
  for (int i = 0; i < kNumContinuous; ++i) {
    const auto k = static_cast<std::size_t>(i);
    os << param_name(i) << ',' << cell(r.mse[k]) << ',' << cell(r.median_se[k]) << ",," << r.frames[k] << '\n';
  }
  os << "vuv,,," << cell(r.vuv_disagreement) << ',' << r.total_frames << '\n';
}

void write_report(std::ostream& os, const SweepReport& r, ReportFormat format) {
  if (format == ReportFormat::Json) {
    nlohmann::json entries = nlohmann::json::array();
    for (const auto& e : r.entries) {
      nlohmann::json j;
      j["parameter"] = std::string(name(e.param));
      j["factor"] = e.factor;
      j["median_relative_error"] = json_number(e.median_relative_error);
      for (int i = 0; i < kNumContinuous; ++i)
        j[param_name(i) + "_mse"] = json_number(e.errors.mse[static_cast<std::size_t>(i)]);
      j["vuv_disagreement"] = e.errors.vuv_disagreement;
      j["frames"] = e.errors.total_frames;
      j["failures"] = e.failures;
      j["errors"] = error_json(e.errors);
      entries.push_back(j);
    }
    nlohmann::json failures = nlohmann::json::array();
    for (const auto& f : r.failures)
      failures.push_back({{"utterance", f.utterance},
                          {"parameter", std::string(name(f.param))},
                          {"factor", f.factor},
                          {"message", f.message}});
    os << nlohmann::json{{"entries", entries}, {"failures", failures}}.dump(2) << '\n';
    return;
  }
  os << sweep_header() << '\n';
  for (const auto& e : r.entries) {
    os << name(e.param) << ',' << cell(e.factor) << ',' << cell(e.median_relative_error);
    for (int i = 0; i < kNumContinuous; ++i) os << ',' << cell(e.errors.mse[static_cast<std::size_t>(i)]);
    os << ',' << cell(e.errors.vuv_disagreement) << ',' << e.errors.total_frames << ',' << e.failures << '\n';
  }
}

template <typename Report>
void write_report_file(const std::filesystem::path& path, const Report& r, ReportFormat format) {
  std::ofstream os(path);
  if (!os) throw data_error("cannot write report '" + path.string() + "'");
  write_report(os, r, format);
  if (!os) throw data_error("write failed for report '" + path.string() + "'");
}

void write_report(const std::filesystem::path& path, const ParamErrorReport& r, ReportFormat format) {
  write_report_file(path, r, format);
}

void write_report(const std::filesystem::path& path, const SweepReport& r, ReportFormat format) {
  write_report_file(path, r, format);
}

ParamErrorReport read_error_report_csv(std::istream& is) {
  std::string line;
  if (!std::getline(is, line) || line != kErrorHeader) throw data_error("error report CSV: bad header");
  ParamErrorReport r;
  for (int i = 0; i < kNumContinuous; ++i) {
    if (!std::getline(is, line)) throw data_error("error report CSV: missing rows");
    const auto cells = split(line);
    if (cells.size() != 5 || cells[0] != param_name(i)) throw data_error("error report CSV: bad row '" + line + "'");
    const auto k = static_cast<std::size_t>(i);
    r.mse[k] = parse_cell(cells[1]);
    r.median_se[k] = parse_cell(cells[2]);
    r.frames[k] = std::stol(cells[4]);
  }
  if (!std::getline(is, line)) throw data_error("error report CSV: missing vuv row");
  const auto cells = split(line);
  if (cells.size() != 5 || cells[0] != "vuv") throw data_error("error report CSV: bad vuv row");
  r.vuv_disagreement = parse_cell(cells[3]);
  r.total_frames = std::stol(cells[4]);
  return r;
}

SweepReport read_sweep_report_csv(std::istream& is) {
  std::string line;
  if (!std::getline(is, line) || line != sweep_header()) throw data_error("sweep report CSV: bad header");
  SweepReport r;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto cells = split(line);
    if (cells.size() != static_cast<std::size_t>(3 + kNumContinuous + 3))
      throw data_error("sweep report CSV: bad row '" + line + "'");
    SweepEntry e;
    const auto p = parse_param(cells[0]);
    if (!p) throw data_error("sweep report CSV: unknown parameter '" + cells[0] + "'");
    e.param = *p;
    e.factor = parse_cell(cells[1]);
    e.median_relative_error = parse_cell(cells[2]);
    for (int i = 0; i < kNumContinuous; ++i)
      e.errors.mse[static_cast<std::size_t>(i)] = parse_cell(cells[static_cast<std::size_t>(3 + i)]);
    e.errors.vuv_disagreement = parse_cell(cells[3 + kNumContinuous]);
    e.errors.total_frames = std::stol(cells[4 + kNumContinuous]);
    e.failures = std::stoi(cells[5 + kNumContinuous]);
    r.entries.push_back(e);
  }
  return r;
}

}  // namespace neuform
