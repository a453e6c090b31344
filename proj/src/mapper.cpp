#include "neuform/mapper.hpp"

#include <nlohmann/json.hpp>
#include <zlib.h>

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

namespace neuform {
namespace {

constexpr char kCheckpointMagic[8] = {'N', 'F', 'C', 'K', 'P', 'T', '1', '\0'};
constexpr int kCheckpointVersion = 1;

static_assert(std::endian::native == std::endian::little,
              "checkpoint payload is written in host order and must be little-endian");


Error format_error(const std::filesystem::path& path, const std::string& what) {
  return data_error("checkpoint '" + path.string() + "': " + what);
}

}  // namespace

nlohmann::json to_json(const MapperConfig& c) {
  return {{"in_channels", c.in_channels},
          {"mel_channels", c.mel_channels},
          {"residual_channels", c.residual_channels},
          {"skip_channels", c.skip_channels},
          {"post_channels", c.post_channels},
          {"kernel_width", c.kernel_width},
          {"dilations", c.dilations},
          {"seed", c.seed}};
}

MapperConfig mapper_config_from_json(const nlohmann::json& j) {
  MapperConfig c;
  c.in_channels = j.at("in_channels").get<int>();
  c.mel_channels = j.at("mel_channels").get<int>();
  c.residual_channels = j.at("residual_channels").get<int>();
  c.skip_channels = j.at("skip_channels").get<int>();
  c.post_channels = j.at("post_channels").get<int>();
  c.kernel_width = j.at("kernel_width").get<int>();
  c.dilations = j.at("dilations").get<std::vector<int>>();
  c.seed = j.at("seed").get<std::uint64_t>();
  return c;
}

nlohmann::json to_json(const FeatureSettings& f) {
  return {{"sample_rate", f.sample_rate}, {"win_length", f.win_length},
          {"hop_length", f.hop_length},   {"n_mels", f.n_mels},
          {"mel_f_min", f.mel_f_min},     {"mel_f_max", f.mel_f_max}};
}

FeatureSettings feature_settings_from_json(const nlohmann::json& j) {
  FeatureSettings f;
  f.sample_rate = j.at("sample_rate").get<int>();
  f.win_length = j.at("win_length").get<int>();
  f.hop_length = j.at("hop_length").get<int>();
  f.n_mels = j.at("n_mels").get<int>();
  f.mel_f_min = j.at("mel_f_min").get<double>();
  f.mel_f_max = j.at("mel_f_max").get<double>();
  return f;
}

void MapperConfig::validate() const {
  if (in_channels <= 0 || mel_channels <= 0 || residual_channels <= 0 || skip_channels <= 0 ||
      post_channels <= 0)
    throw usage_error("mapper channel counts must be positive");
  if (kernel_width <= 0 || kernel_width % 2 == 0)
    throw usage_error("mapper kernel width must be odd");
  if (dilations.empty()) throw usage_error("mapper needs at least one residual block");
  for (int d : dilations)
    if (d <= 0) throw usage_error("mapper dilations must be positive");
}

int MapperConfig::context() const {
  int sum = 0;
  for (int d : dilations) sum += d;
  return (kernel_width / 2) * sum;
}

std::size_t MapperConfig::parameter_count() const {
  const auto r = static_cast<std::size_t>(residual_channels);
  const auto s = static_cast<std::size_t>(skip_channels);
  const auto p = static_cast<std::size_t>(post_channels);
  const auto k = static_cast<std::size_t>(kernel_width);
  const std::size_t per_block = 2 * r * k * r + 2 * r + r * r + r + s * r + s;
  return r * static_cast<std::size_t>(in_channels) + r + dilations.size() * per_block + p * s + p +
         static_cast<std::size_t>(mel_channels) * p + static_cast<std::size_t>(mel_channels);
}

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0) || batch_size <= 0 || seq_len <= 0 || max_updates <= 0)
    throw usage_error("training settings must be positive");
  if (!(beta1 > 0.0 && beta1 < 1.0 && beta2 > 0.0 && beta2 < 1.0 && epsilon > 0.0))
    throw usage_error("Adam settings out of range");
}

PackedLayout PackedLayout::uniform(int count, Eigen::Index length) {
  PackedLayout layout;
  for (int i = 0; i <= count; ++i) layout.offsets.push_back(static_cast<Eigen::Index>(i) * length);
  return layout;
}

std::vector<double> smooth(const std::vector<double>& values, std::size_t window) {
  std::vector<double> out(values.size());
  double acc = 0.0;
  for (std::size_t i = 0; i < values.size(); ++i) {
    acc += values[i];
    if (i >= window) acc -= values[i - window];
    out[i] = acc / static_cast<double>(std::min(i + 1, window));
  }
  return out;
}

TrainResult train(MapperModel<float> start, const std::vector<TrainingPair>& data,
                  const TrainConfig& cfg, const TrainObserver& observer) {
  cfg.validate();
  const MapperConfig& mc = start.config;
  TrainResult result;
  std::vector<const TrainingPair*> usable;
  for (const auto& pair : data) {
    if (pair.params.rows() != pair.mel.rows() || pair.params.cols() != mc.in_channels ||
        pair.mel.cols() != mc.mel_channels)
      throw data_error("training pair shapes do not match the mapper configuration");
    if (pair.params.rows() < cfg.seq_len)
      ++result.skipped;
    else
      usable.push_back(&pair);
  }
  if (usable.empty())
    throw data_error("training set is empty" +
                     (result.skipped ? " (" + std::to_string(result.skipped) +
                                           " utterances shorter than seq_len)"
                                     : std::string()));

  std::mt19937_64 rng(cfg.seed);
  std::uniform_int_distribution<std::size_t> pick(0, usable.size() - 1);
  const Eigen::Index len = cfg.seq_len;
  const PackedLayout layout = PackedLayout::uniform(cfg.batch_size, len);
  Eigen::MatrixXf input(mc.in_channels, layout.total());
  Eigen::MatrixXf target(mc.mel_channels, layout.total());
  AdamState<float> adam = AdamState<float>::zeros(mc);
  result.losses.reserve(static_cast<std::size_t>(cfg.max_updates));

  for (int step = 0; step < cfg.max_updates; ++step) {
    for (int b = 0; b < cfg.batch_size; ++b) {
      const TrainingPair& pair = *usable[pick(rng)];
      std::uniform_int_distribution<Eigen::Index> crop(0, pair.params.rows() - len);
      const Eigen::Index s = crop(rng);
      input.middleCols(b * len, len) = pair.params.middleRows(s, len).transpose();
      target.middleCols(b * len, len) = pair.mel.middleRows(s, len).transpose();
    }
    double value = 0.0;
    MapperWeights<float> grad;
    try {
      std::tie(value, grad) = loss_and_gradient(start.weights, mc, input, target, layout);
    } catch (const Error& e) {
      throw numeric_error(std::string(e.what()) + " at step " + std::to_string(step));
    }
    adam_step(start.weights, grad, adam, cfg);
    result.losses.push_back(value);
    if (observer) observer(step, value);
    if (cfg.checkpoint_every > 0 && !cfg.checkpoint_path.empty() &&
        (step + 1) % cfg.checkpoint_every == 0)
      save_checkpoint(cfg.checkpoint_path, start);
  }
  result.model = std::move(start);
  return result;
}

MelSpectrogram predict_mel(const MapperModel<float>& model, const SpeechParams& params) {
  MelSpectrogram mel;
  mel.grid = params.grid;
  if (params.n_frames() == 0) {
    mel.values.resize(0, model.config.mel_channels);
    return mel;
  }
  const Eigen::MatrixXf z = normalize(params, model.input_stats).cast<float>();
  const Eigen::MatrixXd out = forward(model, z).cast<double>();
  const Eigen::MatrixXd logmel =
      (out.array().rowwise() * model.mel_stats.std.transpose().array()).matrix().rowwise() +
      model.mel_stats.mean.transpose();
  mel.values = logmel.cast<float>();
  return mel;
}

void save_checkpoint(const std::filesystem::path& path, const MapperModel<float>& model) {
  std::vector<float> payload;
  payload.reserve(model.weights.size());
  nlohmann::json tensors = nlohmann::json::array();
  model.weights.visit([&](const std::string& name, const Eigen::MatrixXf& m) {
    tensors.push_back({{"name", name}, {"shape", {m.rows(), m.cols()}}});
    // Row-major order within each tensor.
    for (Eigen::Index i = 0; i < m.rows(); ++i)
      for (Eigen::Index j = 0; j < m.cols(); ++j) payload.push_back(m(i, j));
  });
  const auto* bytes = reinterpret_cast<const unsigned char*>(payload.data());
  const auto n_bytes = payload.size() * sizeof(float);
  const uLong crc = crc32(crc32(0L, Z_NULL, 0), bytes, static_cast<uInt>(n_bytes));

  nlohmann::json manifest = {{"format", "NFCKPT1"},
                             {"version", kCheckpointVersion},
                             {"config", to_json(model.config)},
                             {"features", to_json(model.features)},
                             {"tensors", tensors},
                             {"input_stats", to_json(model.input_stats)},
                             {"mel_stats", to_json(model.mel_stats)},
                             {"payload_bytes", n_bytes},
                             {"crc32", static_cast<std::uint32_t>(crc)}};
  const std::string text = manifest.dump();

  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw data_error("cannot write checkpoint '" + path.string() + "'");
  os.write(kCheckpointMagic, sizeof kCheckpointMagic);
  const auto len = static_cast<std::uint32_t>(text.size());
  const unsigned char len_le[4] = {static_cast<unsigned char>(len & 0xFF),
                                   static_cast<unsigned char>((len >> 8) & 0xFF),
                                   static_cast<unsigned char>((len >> 16) & 0xFF),
                                   static_cast<unsigned char>((len >> 24) & 0xFF)};
  os.write(reinterpret_cast<const char*>(len_le), 4);
  os.write(text.data(), static_cast<std::streamsize>(text.size()));
  os.write(reinterpret_cast<const char*>(bytes), static_cast<std::streamsize>(n_bytes));
  if (!os) throw data_error("write failed for checkpoint '" + path.string() + "'");
}

MapperModel<float> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw data_error("cannot open checkpoint '" + path.string() + "'");
  const std::vector<char> bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  if (bytes.size() < 12 || std::memcmp(bytes.data(), kCheckpointMagic, sizeof kCheckpointMagic) != 0)
    throw format_error(path, "bad magic bytes (not an NFCKPT1 file)");
  const auto* u = reinterpret_cast<const unsigned char*>(bytes.data());
  const std::uint32_t len = static_cast<std::uint32_t>(u[8]) | (static_cast<std::uint32_t>(u[9]) << 8) |
                            (static_cast<std::uint32_t>(u[10]) << 16) |
                            (static_cast<std::uint32_t>(u[11]) << 24);
  if (bytes.size() < 12 + static_cast<std::size_t>(len)) throw format_error(path, "truncated manifest");

  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(bytes.begin() + 12, bytes.begin() + 12 + len);
  } catch (const nlohmann::json::parse_error& e) {
    throw format_error(path, std::string("manifest is not valid JSON: ") + e.what());
  }

  MapperModel<float> model;
  try {
    if (manifest.at("format").get<std::string>() != "NFCKPT1")
      throw format_error(path, "unexpected format tag");
    const int version = manifest.at("version").get<int>();
    if (version != kCheckpointVersion)
      throw format_error(path, "version " + std::to_string(version) + " is not supported (expected " +
                                   std::to_string(kCheckpointVersion) + ")");
    model.config = mapper_config_from_json(manifest.at("config"));
    model.config.validate();
    model.features = feature_settings_from_json(manifest.at("features"));
    model.input_stats = norm_stats_from_json(manifest.at("input_stats"));
    model.mel_stats = norm_stats_from_json(manifest.at("mel_stats"));
    model.weights = MapperWeights<float>::zeros(model.config);

    const auto& tensors = manifest.at("tensors");
    const std::size_t payload_bytes = manifest.at("payload_bytes").get<std::size_t>();
    const auto crc_expected = manifest.at("crc32").get<std::uint32_t>();
    const std::size_t offset = 12 + len;
    if (bytes.size() - offset < payload_bytes) throw format_error(path, "truncated tensor payload");
    if (bytes.size() - offset != payload_bytes) throw format_error(path, "trailing bytes after payload");
    const uLong crc = crc32(crc32(0L, Z_NULL, 0), u + offset, static_cast<uInt>(payload_bytes));
    if (static_cast<std::uint32_t>(crc) != crc_expected) throw format_error(path, "CRC32 mismatch");

    std::size_t index = 0;
    std::size_t cursor = offset;
    model.weights.visit([&](const std::string& name, Eigen::MatrixXf& m) {
      if (index >= tensors.size()) throw format_error(path, "tensor table is too short");
      const auto& entry = tensors[index++];
      const auto shape = entry.at("shape").get<std::vector<Eigen::Index>>();
      if (entry.at("name").get<std::string>() != name || shape.size() != 2 ||
          shape[0] != m.rows() || shape[1] != m.cols())
        throw format_error(path, "tensor '" + name + "' has a shape inconsistent with the config");
      const std::size_t n = static_cast<std::size_t>(m.size()) * sizeof(float);
      if (cursor + n > offset + payload_bytes) throw format_error(path, "truncated tensor payload");
      std::vector<float> buf(static_cast<std::size_t>(m.size()));
      std::memcpy(buf.data(), u + cursor, n);
      cursor += n;
      std::size_t k = 0;
      for (Eigen::Index i = 0; i < m.rows(); ++i)
        for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = buf[k++];
    });
    if (index != tensors.size()) throw format_error(path, "tensor table has extra entries");
    if (cursor != offset + payload_bytes) throw format_error(path, "payload size disagrees with tensors");
  } catch (const nlohmann::json::exception& e) {
    throw format_error(path, std::string("manifest: ") + e.what());
  }
  if (model.input_stats.size() != kNumContinuous ||
      model.mel_stats.size() != model.config.mel_channels)
    throw format_error(path, "normalization statistics have the wrong size");
  return model;
}

MapperModel<float> load_checkpoint(const std::filesystem::path& path, const MapperConfig& expected) {
  MapperModel<float> model = load_checkpoint(path);
  MapperConfig a = model.config;
  MapperConfig b = expected;
  a.seed = b.seed = 0;
  if (!(a == b)) throw format_error(path, "architecture differs from the requested configuration");
  return model;
}

}  // namespace neuform
