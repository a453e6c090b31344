#include "neuform/run_config.hpp"

#include "neuform/error.hpp"

#include <fstream>
#include <set>
#include <sstream>

namespace neuform {
namespace {

std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t\r");
  const auto e = s.find_last_not_of(" \t\r");
  return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
}

void check_keys(const nlohmann::json& patch, const nlohmann::json& reference, const std::string& where) {
  if (!patch.is_object()) return;
  for (auto it = patch.begin(); it != patch.end(); ++it) {
    const std::string key = where.empty() ? it.key() : where + "." + it.key();
    if (!reference.is_object() || !reference.contains(it.key()))
      throw usage_error("unknown config key '" + key + "'");
    if (it.value().is_object()) check_keys(it.value(), reference.at(it.key()), key);
  }
}

nlohmann::json lpc_to_json(const LpcFrameConfig& c) {
  return {{"order", c.order},
          {"window_ms", c.window_ms},
          {"pre_emphasis_from", c.pre_emphasis_from},
          {"max_formants", c.max_formants},
          {"max_bandwidth", c.max_bandwidth},
          {"min_frequency", c.min_frequency},
          {"mask_unvoiced", c.mask_unvoiced}};
}

LpcFrameConfig lpc_from_json(const nlohmann::json& j) {
  LpcFrameConfig c;
  c.order = j.at("order").get<int>();
  c.window_ms = j.at("window_ms").get<double>();
  c.pre_emphasis_from = j.at("pre_emphasis_from").get<double>();
  c.max_formants = j.at("max_formants").get<int>();
  c.max_bandwidth = j.at("max_bandwidth").get<double>();
  c.min_frequency = j.at("min_frequency").get<double>();
  c.mask_unvoiced = j.at("mask_unvoiced").get<bool>();
  return c;
}

}  // namespace

std::string_view name(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::Test: return "test";
  }
  return "?";
}

std::optional<Split> parse_split(std::string_view text) {
  if (text == "train") return Split::Train;
  if (text == "val" || text == "valid" || text == "validation") return Split::Val;
  if (text == "test") return Split::Test;
  return std::nullopt;
}

std::vector<ManifestEntry> Manifest::select(Split s) const {
  std::vector<ManifestEntry> out;
  for (const auto& e : entries)
    if (e.split == s) out.push_back(e);
  return out;
}

VoicePreset voice_preset_by_name(std::string_view n) {
  if (n == "low") return low_voice_preset();
  if (n == "high") return high_voice_preset();
  throw usage_error("unknown voice preset '" + std::string(n) + "' (expected low or high)");
}

Manifest parse_manifest(std::istream& is, const std::filesystem::path& base_dir) {
  std::string line;
  if (!std::getline(is, line)) throw data_error("manifest: empty file");
  if (trim(line) != "id,path,split,preset" && trim(line) != "id,path,split")
    throw data_error("manifest: expected header 'id,path,split,preset', got '" + trim(line) + "'");
  Manifest m;
  std::set<std::string> ids;
  std::size_t line_no = 1;
  while (std::getline(is, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string c;
    while (std::getline(ss, c, ',')) cells.push_back(trim(c));
    if (cells.size() < 3 || cells.size() > 4)
      throw data_error("manifest line " + std::to_string(line_no) + ": expected 3 or 4 fields");
    ManifestEntry e;
    e.id = cells[0];
    if (e.id.empty()) throw data_error("manifest line " + std::to_string(line_no) + ": empty id");
    if (!ids.insert(e.id).second)
      throw data_error("manifest line " + std::to_string(line_no) + ": duplicate id '" + e.id + "'");
    const std::filesystem::path p(cells[1]);
    e.path = p.is_absolute() ? p : base_dir / p;
    const auto split = parse_split(cells[2]);
    if (!split)
      throw data_error("manifest line " + std::to_string(line_no) + ": unknown split '" + cells[2] + "'");
    e.split = *split;
    if (cells.size() == 4 && !cells[3].empty()) {
      if (cells[3] != "low" && cells[3] != "high")
        throw data_error("manifest line " + std::to_string(line_no) + ": unknown preset '" + cells[3] + "'");
      e.preset = cells[3];
    }
    m.entries.push_back(std::move(e));
  }
  return m;
}

Manifest read_manifest(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw data_error("cannot open manifest '" + path.string() + "'");
  return parse_manifest(is, path.parent_path());
}

void write_manifest(const std::filesystem::path& path, const Manifest& manifest) {
  std::ofstream os(path);
  if (!os) throw data_error("cannot write manifest '" + path.string() + "'");
  const auto base = std::filesystem::absolute(path).parent_path();
  os << "id,path,split,preset\n";
  for (const auto& e : manifest.entries) {
    std::filesystem::path p = std::filesystem::absolute(e.path).lexically_normal();
    const auto rel = p.lexically_relative(base);
    if (!rel.empty()) p = rel;
    os << e.id << ',' << p.generic_string() << ',' << name(e.split) << ',' << e.preset.value_or("") << '\n';
  }
}

void RunConfig::validate() const {
  const AnalysisConfig& a = analysis;
  if (a.sample_rate <= 0) throw usage_error("sample_rate must be positive");
  if (a.win_length < a.hop_length || a.hop_length <= 0)
    throw usage_error("win_length must be >= hop_length > 0");
  if (!(a.mel_f_min >= 0.0 && a.mel_f_min < a.mel_f_max && a.mel_f_max <= 0.5 * a.sample_rate))
    throw usage_error("mel range must satisfy 0 <= f_min < f_max <= sample_rate / 2");
  if (mapper.mel_channels != a.n_mels)
    throw usage_error("mapper.mel_channels (" + std::to_string(mapper.mel_channels) +
                      ") must equal analysis.n_mels (" + std::to_string(a.n_mels) + ")");
  if (mapper.in_channels != kNumParams)
    throw usage_error("mapper.in_channels must be " + std::to_string(kNumParams));
  LpcFrameConfig lpc = a.lpc;
  lpc.ceiling = 0.5 * a.sample_rate;
  lpc.validate(a.sample_rate);
  mapper.validate();
  train.validate();
  griffin_lim.validate();
}

FeatureSettings RunConfig::features() const {
  return {analysis.sample_rate, analysis.win_length, analysis.hop_length,
          analysis.n_mels,      analysis.mel_f_min,  analysis.mel_f_max};
}

nlohmann::json to_json(const RunConfig& c) {
  const AnalysisConfig& a = c.analysis;
  nlohmann::json analysis = {
      {"sample_rate", a.sample_rate},
      {"win_length", a.win_length},
      {"hop_length", a.hop_length},
      {"n_mels", a.n_mels},
      {"mel_f_min", a.mel_f_min},
      {"mel_f_max", a.mel_f_max},
      {"tilt_scale", a.tilt_scale == TiltScale::Decibel ? "db" : "linear"},
      {"preset", a.preset ? nlohmann::json(a.preset->name) : nlohmann::json("auto")},
      {"voicing_threshold", a.voicing_threshold},
      {"silence_threshold", a.silence_threshold},
      {"octave_cost", a.octave_cost},
      {"lpc", lpc_to_json(a.lpc)},
  };
  nlohmann::json mapper = to_json(c.mapper);
  mapper.erase("seed");
  mapper.erase("in_channels");
  mapper.erase("mel_channels");
  const TrainConfig& t = c.train;
  nlohmann::json train = {{"learning_rate", t.learning_rate}, {"batch_size", t.batch_size},
                          {"seq_len", t.seq_len},             {"max_updates", t.max_updates},
                          {"beta1", t.beta1},                 {"beta2", t.beta2},
                          {"epsilon", t.epsilon},             {"checkpoint_every", t.checkpoint_every}};
  nlohmann::json gl = {{"n_iters", c.griffin_lim.n_iters},
                       {"momentum", c.griffin_lim.momentum},
                       {"peak", c.griffin_lim.peak},
                       {"match_energy", c.match_energy}};
  return {{"analysis", analysis},
          {"mapper", mapper},
          {"train", train},
          {"griffin_lim", gl},
          {"output_dir", c.output_dir.generic_string()},
          {"seed", c.seed}};
}

RunConfig apply_config_patch(const RunConfig& base, const nlohmann::json& patch) {
  if (!patch.is_object()) throw usage_error("config must be a JSON object");
  nlohmann::json j = to_json(base);
  check_keys(patch, j, "");
  j.merge_patch(patch);

  RunConfig c;
  try {
    const auto& a = j.at("analysis");
    c.analysis.sample_rate = a.at("sample_rate").get<int>();
    c.analysis.win_length = a.at("win_length").get<int>();
    c.analysis.hop_length = a.at("hop_length").get<int>();
    c.analysis.n_mels = a.at("n_mels").get<int>();
    c.analysis.mel_f_min = a.at("mel_f_min").get<double>();
    c.analysis.mel_f_max = a.at("mel_f_max").get<double>();
    const auto tilt = a.at("tilt_scale").get<std::string>();
    if (tilt == "db")
      c.analysis.tilt_scale = TiltScale::Decibel;
    else if (tilt == "linear")
      c.analysis.tilt_scale = TiltScale::Linear;
    else
      throw usage_error("analysis.tilt_scale must be 'db' or 'linear'");
    const auto preset = a.at("preset").get<std::string>();
    if (preset != "auto") c.analysis.preset = voice_preset_by_name(preset);
    c.analysis.voicing_threshold = a.at("voicing_threshold").get<double>();
    c.analysis.silence_threshold = a.at("silence_threshold").get<double>();
    c.analysis.octave_cost = a.at("octave_cost").get<double>();
    c.analysis.lpc = lpc_from_json(a.at("lpc"));

    c.seed = j.at("seed").get<std::uint64_t>();
    nlohmann::json m = j.at("mapper");
    m["seed"] = c.seed;
    m["in_channels"] = kNumParams;
    m["mel_channels"] = c.analysis.n_mels;
    c.mapper = mapper_config_from_json(m);

    const auto& t = j.at("train");
    c.train.learning_rate = t.at("learning_rate").get<double>();
    c.train.batch_size = t.at("batch_size").get<int>();
    c.train.seq_len = t.at("seq_len").get<int>();
    c.train.max_updates = t.at("max_updates").get<int>();
    c.train.beta1 = t.at("beta1").get<double>();
    c.train.beta2 = t.at("beta2").get<double>();
    c.train.epsilon = t.at("epsilon").get<double>();
    c.train.checkpoint_every = t.at("checkpoint_every").get<int>();
    c.train.seed = c.seed;

    const auto& g = j.at("griffin_lim");
    c.griffin_lim.n_iters = g.at("n_iters").get<int>();
    c.griffin_lim.momentum = g.at("momentum").get<double>();
    c.griffin_lim.peak = g.at("peak").get<double>();
    c.match_energy = g.at("match_energy").get<bool>();
    c.output_dir = j.at("output_dir").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw usage_error(std::string("config: ") + e.what());
  }
  c.validate();
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path, const RunConfig& base) {
  std::ifstream is(path);
  if (!is) throw usage_error("cannot open config '" + path.string() + "'");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(is);
  } catch (const nlohmann::json::parse_error& e) {
    throw usage_error("config '" + path.string() + "': " + e.what());
  }
  return apply_config_patch(base, j);
}

void save_run_config(const std::filesystem::path& path, const RunConfig& config) {
  std::ofstream os(path);
  if (!os) throw data_error("cannot write config '" + path.string() + "'");
  os << to_json(config).dump(2) << '\n';
}

}  // namespace neuform
