#pragma once

// Parameter-to-mel feature mapping network: a non-causal stack of gated,
// dilated convolutions with residual and skip paths (WaveNet-style), followed
// by a two-layer 1x1 post-net. Everything is templated on the scalar type so
// that training runs in float while gradient checks can also run in double.
//
// Sequences are stored channels x frames (one column per frame). A batch is a
// set of sequences packed side by side; convolutions zero-pad each sequence
// independently, so packing never mixes frames of different sequences.

#include "neuform/error.hpp"
#include "neuform/params.hpp"

#include <Eigen/Core>

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <utility>
#include <vector>

namespace neuform {

struct MapperConfig {
  int in_channels = kNumParams;
  int mel_channels = 80;
  int residual_channels = 64;
  int skip_channels = 64;
  int post_channels = 64;
  int kernel_width = 3;
  std::vector<int> dilations{1, 2, 4, 1, 2, 4};
  std::uint64_t seed = 0;

  void validate() const;
  /// Frames on each side of an output frame that can influence it.
  int context() const;
  int receptive_field() const { return 1 + 2 * context(); }
  /// Closed-form number of trainable scalars.
  std::size_t parameter_count() const;

  friend bool operator==(const MapperConfig&, const MapperConfig&) = default;
};

struct TrainConfig {
  double learning_rate = 1e-4;
  int batch_size = 16;
  int seq_len = 46;
  int max_updates = 5000;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::uint64_t seed = 0;
  int checkpoint_every = 0;  // 0 disables periodic checkpoints
  std::filesystem::path checkpoint_path;

  void validate() const;
};

/// Feature extraction settings a model was trained with.
struct FeatureSettings {
  int sample_rate = kWorkingRate;
  int win_length = 1024;
  int hop_length = 256;
  int n_mels = 80;
  double mel_f_min = 0.0;
  double mel_f_max = 8000.0;

  friend bool operator==(const FeatureSettings&, const FeatureSettings&) = default;
};

nlohmann::json to_json(const MapperConfig& config);
MapperConfig mapper_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const FeatureSettings& features);
FeatureSettings feature_settings_from_json(const nlohmann::json& j);

template <typename Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

/// Every trainable tensor. Biases are single-column matrices so all tensors
/// share one type. Dilated kernels stack their taps column-wise: the weight
/// for tap k, input channel c sits in column k * residual + c.
template <typename Scalar>
struct MapperWeights {
  using Matrix = MatrixX<Scalar>;

  struct Block {
    Matrix dilated_w, dilated_b;  // 2R x (K R), 2R x 1; rows [0, R) filter, [R, 2R) gate
    Matrix residual_w, residual_b;  // R x R
    Matrix skip_w, skip_b;          // S x R
  };

  Matrix input_w, input_b;  // R x in
  std::vector<Block> blocks;
  Matrix post_w, post_b;  // P x S
  Matrix out_w, out_b;    // mel x P

  /// Zero tensors with the shapes implied by cfg.
  static MapperWeights zeros(const MapperConfig& cfg);

  template <typename F>
  void visit(F&& f) {
    f(std::string("input.w"), input_w);
    f(std::string("input.b"), input_b);
    for (std::size_t i = 0; i < blocks.size(); ++i) {
      const std::string p = "block" + std::to_string(i) + ".";
      f(p + "dilated.w", blocks[i].dilated_w);
      f(p + "dilated.b", blocks[i].dilated_b);
      f(p + "residual.w", blocks[i].residual_w);
      f(p + "residual.b", blocks[i].residual_b);
      f(p + "skip.w", blocks[i].skip_w);
      f(p + "skip.b", blocks[i].skip_b);
    }
    f(std::string("post.w"), post_w);
    f(std::string("post.b"), post_b);
    f(std::string("out.w"), out_w);
    f(std::string("out.b"), out_b);
  }

  template <typename F>
  void visit(F&& f) const {
    const_cast<MapperWeights*>(this)->visit(
        [&](const std::string& name, Matrix& m) { f(name, static_cast<const Matrix&>(m)); });
  }

  std::size_t size() const {
    std::size_t n = 0;
    visit([&](const std::string&, const Matrix& m) { n += static_cast<std::size_t>(m.size()); });
    return n;
  }
};

template <typename Scalar>
struct MapperModel {
  MapperConfig config;
  MapperWeights<Scalar> weights;
  NormStats input_stats;  // 8 continuous parameters
  NormStats mel_stats;    // per mel band
  FeatureSettings features;
};

/// Glorot-uniform weights, zero biases. Deterministic in seed.
template <typename Scalar>
MapperModel<Scalar> init_model(const MapperConfig& config, std::uint64_t seed);

/// Column offsets of sequences packed into one matrix.
struct PackedLayout {
  std::vector<Eigen::Index> offsets;  // size n_sequences + 1
  Eigen::Index total() const { return offsets.empty() ? 0 : offsets.back(); }

  static PackedLayout single(Eigen::Index length) { return PackedLayout{{0, length}}; }
  static PackedLayout uniform(int count, Eigen::Index length);
};

template <typename Scalar>
struct ForwardCache {
  using Matrix = MatrixX<Scalar>;
  struct Block {
    Matrix columns;  // im2col of the block input
    Matrix filter;   // tanh activations
    Matrix gate;     // sigmoid activations
    Matrix z;        // filter .* gate
  };
  Matrix input;
  std::vector<Block> blocks;
  Matrix skip_sum;
  Matrix post_act;  // relu(post_w relu(skip_sum) + post_b)
  Matrix output;
};

/// z-scored parameters (in_channels x frames) to z-scored mel (mel x frames).
template <typename Scalar>
MatrixX<Scalar> forward(const MapperWeights<Scalar>& w, const MapperConfig& cfg,
                        const MatrixX<Scalar>& input, const PackedLayout& layout,
                        ForwardCache<Scalar>* cache = nullptr);

/// Frames-as-rows convenience: (T x 9) -> (T x 80).
template <typename Scalar>
MatrixX<Scalar> forward(const MapperModel<Scalar>& model, const MatrixX<Scalar>& z_params);

/// Mean over all entries of the squared difference, accumulated in double.
template <typename Scalar>
double loss(const MatrixX<Scalar>& predicted, const MatrixX<Scalar>& target);

/// Reverse-mode gradient of the MSE loss with respect to every weight.
template <typename Scalar>
MapperWeights<Scalar> backward(const MapperWeights<Scalar>& w, const MapperConfig& cfg,
                               const PackedLayout& layout, const ForwardCache<Scalar>& cache,
                               const MatrixX<Scalar>& target);

template <typename Scalar>
struct AdamState {
  MapperWeights<Scalar> m;
  MapperWeights<Scalar> v;
  long step = 0;

  static AdamState zeros(const MapperConfig& cfg) {
    return {MapperWeights<Scalar>::zeros(cfg), MapperWeights<Scalar>::zeros(cfg), 0};
  }
};

/// One bias-corrected Adam update.
template <typename Scalar>
void adam_step(MapperWeights<Scalar>& w, const MapperWeights<Scalar>& grad,
               AdamState<Scalar>& state, const TrainConfig& cfg);

/// Loss and gradient of a packed batch in one call. Throws on a non-finite loss.
template <typename Scalar>
std::pair<double, MapperWeights<Scalar>> loss_and_gradient(const MapperWeights<Scalar>& w,
                                                           const MapperConfig& cfg,
                                                           const MatrixX<Scalar>& input,
                                                           const MatrixX<Scalar>& target,
                                                           const PackedLayout& layout);

/// An aligned (z-scored params, z-scored mel) pair, frames as rows.
struct TrainingPair {
  Eigen::MatrixXf params;  // T x 9
  Eigen::MatrixXf mel;     // T x 80
};

struct TrainResult {
  MapperModel<float> model;
  std::vector<double> losses;  // one per update
  int skipped = 0;             // utterances shorter than seq_len
};

using TrainObserver = std::function<void(int step, double loss)>;

/// Seeded random-crop training with Adam. The model's stats and features are
/// carried over from `start`.
TrainResult train(MapperModel<float> start, const std::vector<TrainingPair>& data,
                  const TrainConfig& cfg, const TrainObserver& observer = {});

/// Moving average with the given window (shorter at the start).
std::vector<double> smooth(const std::vector<double>& values, std::size_t window);

/// Normalizes params with the model's input stats, runs the network and
/// de-normalizes to log-mel.
MelSpectrogram predict_mel(const MapperModel<float>& model, const SpeechParams& params);

void save_checkpoint(const std::filesystem::path& path, const MapperModel<float>& model);
MapperModel<float> load_checkpoint(const std::filesystem::path& path);
/// Also rejects checkpoints whose config differs from `expected`.
MapperModel<float> load_checkpoint(const std::filesystem::path& path, const MapperConfig& expected);

// ---------------------------------------------------------------------------
// Implementation

namespace detail {

/// im2col for a dilated kernel with per-sequence zero padding.
template <typename Scalar>
MatrixX<Scalar> dilated_columns(const MatrixX<Scalar>& x, int kernel, int dilation,
                                const PackedLayout& layout) {
  const Eigen::Index c = x.rows();
  MatrixX<Scalar> col = MatrixX<Scalar>::Zero(c * kernel, x.cols());
  const int half = kernel / 2;
  for (std::size_t s = 0; s + 1 < layout.offsets.size(); ++s) {
    const Eigen::Index begin = layout.offsets[s];
    const Eigen::Index len = layout.offsets[s + 1] - begin;
    for (int k = 0; k < kernel; ++k) {
      const Eigen::Index shift = static_cast<Eigen::Index>(k - half) * dilation;
      // Output frame t reads input frame t + shift.
      const Eigen::Index t0 = std::max<Eigen::Index>(0, -shift);
      const Eigen::Index t1 = std::min<Eigen::Index>(len, len - shift);
      if (t1 > t0)
        col.block(k * c, begin + t0, c, t1 - t0) = x.block(0, begin + t0 + shift, c, t1 - t0);
    }
  }
  return col;
}

/// Adjoint of dilated_columns: accumulates column gradients back onto the input.
template <typename Scalar>
void scatter_columns(const MatrixX<Scalar>& dcol, int kernel, int dilation,
                     const PackedLayout& layout, MatrixX<Scalar>& dx) {
  const Eigen::Index c = dx.rows();
  const int half = kernel / 2;
  for (std::size_t s = 0; s + 1 < layout.offsets.size(); ++s) {
    const Eigen::Index begin = layout.offsets[s];
    const Eigen::Index len = layout.offsets[s + 1] - begin;
    for (int k = 0; k < kernel; ++k) {
      const Eigen::Index shift = static_cast<Eigen::Index>(k - half) * dilation;
      const Eigen::Index t0 = std::max<Eigen::Index>(0, -shift);
      const Eigen::Index t1 = std::min<Eigen::Index>(len, len - shift);
      if (t1 > t0)
        dx.block(0, begin + t0 + shift, c, t1 - t0) += dcol.block(k * c, begin + t0, c, t1 - t0);
    }
  }
}

template <typename Scalar>
MatrixX<Scalar> relu(const MatrixX<Scalar>& x) {
  return x.cwiseMax(Scalar(0));
}

}  // namespace detail

template <typename Scalar>
MapperWeights<Scalar> MapperWeights<Scalar>::zeros(const MapperConfig& cfg) {
  cfg.validate();
  const int r = cfg.residual_channels;
  const int s = cfg.skip_channels;
  const int p = cfg.post_channels;
  MapperWeights w;
  w.input_w = Matrix::Zero(r, cfg.in_channels);
  w.input_b = Matrix::Zero(r, 1);
  for (std::size_t i = 0; i < cfg.dilations.size(); ++i) {
    Block b;
    b.dilated_w = Matrix::Zero(2 * r, cfg.kernel_width * r);
    b.dilated_b = Matrix::Zero(2 * r, 1);
    b.residual_w = Matrix::Zero(r, r);
    b.residual_b = Matrix::Zero(r, 1);
    b.skip_w = Matrix::Zero(s, r);
    b.skip_b = Matrix::Zero(s, 1);
    w.blocks.push_back(std::move(b));
  }
  w.post_w = Matrix::Zero(p, s);
  w.post_b = Matrix::Zero(p, 1);
  w.out_w = Matrix::Zero(cfg.mel_channels, p);
  w.out_b = Matrix::Zero(cfg.mel_channels, 1);
  return w;
}

template <typename Scalar>
MapperModel<Scalar> init_model(const MapperConfig& config, std::uint64_t seed) {
  MapperModel<Scalar> model;
  model.config = config;
  model.config.seed = seed;
  model.weights = MapperWeights<Scalar>::zeros(config);
  std::mt19937_64 rng(seed);
  model.weights.visit([&](const std::string& name, MatrixX<Scalar>& m) {
    if (name.size() >= 2 && name.compare(name.size() - 2, 2, ".b") == 0) return;
    // fan_in counts every input tap; fan_out the output channels.
    const double fan_in = static_cast<double>(m.cols());
    const double fan_out = static_cast<double>(m.rows());
    const double limit = std::sqrt(6.0 / (fan_in + fan_out));
    std::uniform_real_distribution<double> dist(-limit, limit);
    for (Eigen::Index j = 0; j < m.cols(); ++j)
      for (Eigen::Index i = 0; i < m.rows(); ++i) m(i, j) = static_cast<Scalar>(dist(rng));
  });
  model.input_stats.mean = Eigen::VectorXd::Zero(kNumContinuous);
  model.input_stats.std = Eigen::VectorXd::Ones(kNumContinuous);
  model.mel_stats.mean = Eigen::VectorXd::Zero(config.mel_channels);
  model.mel_stats.std = Eigen::VectorXd::Ones(config.mel_channels);
  model.features.n_mels = config.mel_channels;
  return model;
}

template <typename Scalar>
MatrixX<Scalar> forward(const MapperWeights<Scalar>& w, const MapperConfig& cfg,
                        const MatrixX<Scalar>& input, const PackedLayout& layout,
                        ForwardCache<Scalar>* cache) {
  using Matrix = MatrixX<Scalar>;
  if (input.rows() != cfg.in_channels || input.cols() != layout.total())
    throw usage_error("mapper forward: input shape does not match the configuration");
  const int r = cfg.residual_channels;

  Matrix x = (w.input_w * input).colwise() + w.input_b.col(0);
  Matrix skip = Matrix::Zero(cfg.skip_channels, input.cols());
  if (cache) {
    cache->input = input;
    cache->blocks.resize(w.blocks.size());
  }
  for (std::size_t i = 0; i < w.blocks.size(); ++i) {
    const auto& b = w.blocks[i];
    Matrix col = detail::dilated_columns(x, cfg.kernel_width, cfg.dilations[i], layout);
    Matrix a = (b.dilated_w * col).colwise() + b.dilated_b.col(0);
    Matrix filter = a.topRows(r).array().tanh().matrix();
    Matrix gate = (Scalar(1) / (Scalar(1) + (-a.bottomRows(r).array()).exp())).matrix();
    Matrix z = filter.cwiseProduct(gate);
    skip.noalias() += b.skip_w * z;
    skip.colwise() += b.skip_b.col(0);
    x.noalias() += b.residual_w * z;
    x.colwise() += b.residual_b.col(0);
    if (cache) {
      auto& c = cache->blocks[i];
      c.columns = std::move(col);
      c.filter = std::move(filter);
      c.gate = std::move(gate);
      c.z = std::move(z);
    }
  }
  Matrix post = detail::relu<Scalar>((w.post_w * detail::relu<Scalar>(skip)).colwise() + w.post_b.col(0));
  Matrix out = (w.out_w * post).colwise() + w.out_b.col(0);
  if (cache) {
    cache->skip_sum = std::move(skip);
    cache->post_act = std::move(post);
    cache->output = out;
  }
  return out;
}

template <typename Scalar>
MatrixX<Scalar> forward(const MapperModel<Scalar>& model, const MatrixX<Scalar>& z_params) {
  const MatrixX<Scalar> in = z_params.transpose();
  return forward(model.weights, model.config, in, PackedLayout::single(in.cols())).transpose();
}

template <typename Scalar>
double loss(const MatrixX<Scalar>& predicted, const MatrixX<Scalar>& target) {
  if (predicted.rows() != target.rows() || predicted.cols() != target.cols())
    throw usage_error("loss: shape mismatch");
  if (predicted.size() == 0) return 0.0;
  return (predicted.template cast<double>() - target.template cast<double>()).squaredNorm() /
         static_cast<double>(predicted.size());
}

template <typename Scalar>
MapperWeights<Scalar> backward(const MapperWeights<Scalar>& w, const MapperConfig& cfg,
                               const PackedLayout& layout, const ForwardCache<Scalar>& cache,
                               const MatrixX<Scalar>& target) {
  using Matrix = MatrixX<Scalar>;
  const int r = cfg.residual_channels;
  MapperWeights<Scalar> g = MapperWeights<Scalar>::zeros(cfg);

  const Matrix d_out =
      (cache.output - target) * static_cast<Scalar>(2.0 / static_cast<double>(cache.output.size()));
  g.out_w.noalias() = d_out * cache.post_act.transpose();
  g.out_b = d_out.rowwise().sum();
  Matrix d_post = (w.out_w.transpose() * d_out).cwiseProduct(
      (cache.post_act.array() > Scalar(0)).template cast<Scalar>().matrix());
  const Matrix skip_act = detail::relu<Scalar>(cache.skip_sum);
  g.post_w.noalias() = d_post * skip_act.transpose();
  g.post_b = d_post.rowwise().sum();
  const Matrix d_skip = (w.post_w.transpose() * d_post)
                            .cwiseProduct((cache.skip_sum.array() > Scalar(0)).template cast<Scalar>().matrix());

  // Gradient flowing into the residual stream after the current block.
  Matrix dx = Matrix::Zero(r, cache.output.cols());
  for (std::size_t i = w.blocks.size(); i-- > 0;) {
    const auto& b = w.blocks[i];
    const auto& c = cache.blocks[i];
    auto& gb = g.blocks[i];
    gb.skip_w.noalias() = d_skip * c.z.transpose();
    gb.skip_b = d_skip.rowwise().sum();
    gb.residual_w.noalias() = dx * c.z.transpose();
    gb.residual_b = dx.rowwise().sum();
    Matrix dz = b.skip_w.transpose() * d_skip;
    dz.noalias() += b.residual_w.transpose() * dx;

    Matrix da(2 * r, dz.cols());
    da.topRows(r) = dz.cwiseProduct(c.gate).cwiseProduct(
        (Scalar(1) - c.filter.array().square()).matrix());
    da.bottomRows(r) = dz.cwiseProduct(c.filter).cwiseProduct(
        (c.gate.array() * (Scalar(1) - c.gate.array())).matrix());
    gb.dilated_w.noalias() = da * c.columns.transpose();
    gb.dilated_b = da.rowwise().sum();
    const Matrix dcol = b.dilated_w.transpose() * da;
    detail::scatter_columns(dcol, cfg.kernel_width, cfg.dilations[i], layout, dx);
  }
  g.input_w.noalias() = dx * cache.input.transpose();
  g.input_b = dx.rowwise().sum();
  return g;
}

template <typename Scalar>
void adam_step(MapperWeights<Scalar>& w, const MapperWeights<Scalar>& grad,
               AdamState<Scalar>& state, const TrainConfig& cfg) {
  using Matrix = MatrixX<Scalar>;
  ++state.step;
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  const auto b1 = static_cast<Scalar>(cfg.beta1);
  const auto b2 = static_cast<Scalar>(cfg.beta2);
  const auto lr = static_cast<Scalar>(cfg.learning_rate);
  const auto eps = static_cast<Scalar>(cfg.epsilon);
  const auto inv_c1 = static_cast<Scalar>(1.0 / c1);
  const auto inv_c2 = static_cast<Scalar>(1.0 / c2);

  std::vector<Matrix*> ws, ms, vs;
  std::vector<const Matrix*> gs;
  w.visit([&](const std::string&, Matrix& m) { ws.push_back(&m); });
  state.m.visit([&](const std::string&, Matrix& m) { ms.push_back(&m); });
  state.v.visit([&](const std::string&, Matrix& m) { vs.push_back(&m); });
  grad.visit([&](const std::string&, const Matrix& m) { gs.push_back(&m); });
  for (std::size_t i = 0; i < ws.size(); ++i) {
    auto m = ms[i]->array();
    auto v = vs[i]->array();
    const auto g = gs[i]->array();
    m = b1 * m + (Scalar(1) - b1) * g;
    v = b2 * v + (Scalar(1) - b2) * g.square();
    ws[i]->array() -= lr * (m * inv_c1) / ((v * inv_c2).sqrt() + eps);
  }
}

template <typename Scalar>
std::pair<double, MapperWeights<Scalar>> loss_and_gradient(const MapperWeights<Scalar>& w,
                                                           const MapperConfig& cfg,
                                                           const MatrixX<Scalar>& input,
                                                           const MatrixX<Scalar>& target,
                                                           const PackedLayout& layout) {
  ForwardCache<Scalar> cache;
  const MatrixX<Scalar> out = forward(w, cfg, input, layout, &cache);
  const double l = loss(out, target);
  if (!std::isfinite(l)) throw numeric_error("mapper loss is not finite");
  return {l, backward(w, cfg, layout, cache, target)};
}

}  // namespace neuform
