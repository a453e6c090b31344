#include "neuform/vocoder.hpp"
#include "neuform/error.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/QR>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>

namespace neuform {
namespace {

constexpr char kMelMagic[6] = {'N', 'F', 'M', 'E', 'L', '1'};
constexpr std::size_t kMelHeader = 6 + 4 * 4;

void put32(std::ostream& os, std::uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v & 0xFF), static_cast<unsigned char>((v >> 8) & 0xFF),
                              static_cast<unsigned char>((v >> 16) & 0xFF),
                              static_cast<unsigned char>((v >> 24) & 0xFF)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

Eigen::MatrixXcd impose_magnitude(const Eigen::MatrixXd& magnitude, const Eigen::MatrixXcd& x) {
  Eigen::MatrixXcd out(x.rows(), x.cols());
  for (Eigen::Index j = 0; j < x.cols(); ++j)
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      const double a = std::abs(x(i, j));
      out(i, j) = a > 1e-12 ? x(i, j) * (magnitude(i, j) / a) : std::complex<double>(magnitude(i, j), 0.0);
    }
  return out;
}

double convergence_of(const Eigen::MatrixXd& magnitude, const Eigen::MatrixXcd& spectrum, double norm) {
  if (norm <= 0.0) return 0.0;
  return (spectrum.cwiseAbs() - magnitude).norm() / norm;
}

}  // namespace

void GriffinLimConfig::validate() const {
  if (n_iters < 1) throw usage_error("Griffin-Lim needs at least one iteration");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw usage_error("Griffin-Lim momentum must lie in [0, 1)");
}

MagnitudeSpectrogram mel_to_linear(const MelSpectrogram& mel, const MelBasis& basis, int iterations) {
  if (mel.values.rows() > 0 && mel.values.cols() != basis.weights.rows())
    throw usage_error("mel_to_linear: basis has " + std::to_string(basis.weights.rows()) +
                      " bands, mel has " + std::to_string(mel.values.cols()));
  const Eigen::MatrixXd pinv = basis.weights.completeOrthogonalDecomposition().pseudoInverse();
  const double log_floor = std::log(static_cast<double>(kMelFloor));

  Eigen::MatrixXd energies(mel.values.rows(), mel.values.cols());
  for (Eigen::Index j = 0; j < energies.cols(); ++j)
    for (Eigen::Index i = 0; i < energies.rows(); ++i) {
      const double v = mel.values(i, j);
      energies(i, j) = v > log_floor + 1e-6 ? std::exp(v) : 0.0;
    }

  MagnitudeSpectrogram out;
  out.grid = mel.grid;
  out.grid.n_frames = mel.values.rows();
  out.values = (energies * pinv.transpose()).cwiseMax(0.0);
  if (iterations <= 0 || out.values.rows() == 0) return out;

  // Accelerated projected gradient on 0.5 * ||m B^T - e||^2 subject to m >= 0,
  // started from the clipped pseudo-inverse solution.
  const Eigen::MatrixXd& b = basis.weights;
  const Eigen::MatrixXd gram = b.transpose() * b;
  const double lipschitz = Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(gram, Eigen::EigenvaluesOnly)
                               .eigenvalues()
                               .maxCoeff();
  if (!(lipschitz > 0.0)) return out;
  const Eigen::MatrixXd target = energies * b;  // e B, the constant part of the gradient
  Eigen::MatrixXd x = out.values;
  Eigen::MatrixXd y = x;
  double t = 1.0;
  for (int it = 0; it < iterations; ++it) {
    const Eigen::MatrixXd next = (y - (y * gram - target) / lipschitz).cwiseMax(0.0);
    const double t_next = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t * t));
    y = next + ((t - 1.0) / t_next) * (next - x);
    x = next;
    t = t_next;
  }
  out.values = x;
  return out;
}

double spectral_convergence(const MagnitudeSpectrogram& magnitude, const Eigen::VectorXd& signal) {
  const Eigen::MatrixXcd spec = stft(signal, magnitude.grid);
  if (spec.rows() != magnitude.values.rows())
    throw usage_error("spectral_convergence: signal does not span the magnitude's frames");
  return convergence_of(magnitude.values, spec, magnitude.values.norm());
}

Waveform griffin_lim(const MagnitudeSpectrogram& magnitude, const GriffinLimConfig& cfg,
                     std::vector<double>* convergence) {
  cfg.validate();
  const FrameGrid& grid = magnitude.grid;
  Waveform out;
  out.sample_rate = grid.sample_rate;
  if (convergence) convergence->clear();
  if (magnitude.values.rows() == 0) return out;
  if (magnitude.values.cols() != grid.n_bins())
    throw usage_error("griffin_lim: magnitude width does not match n_fft");

  const Eigen::MatrixXd& target = magnitude.values;
  const double norm = target.norm();
  Eigen::MatrixXcd previous = target.cast<std::complex<double>>();
  Eigen::MatrixXcd accelerated = previous;
  for (int it = 0; it < cfg.n_iters; ++it) {
    const Eigen::VectorXd x = istft(impose_magnitude(target, accelerated), grid);
    const Eigen::MatrixXcd current = stft(x, grid);
    if (convergence) convergence->push_back(convergence_of(target, current, norm));
    accelerated = current + cfg.momentum * (current - previous);
    previous = current;
  }
  out.samples = istft(impose_magnitude(target, accelerated), grid);
  if (convergence) convergence->push_back(convergence_of(target, stft(out.samples, grid), norm));

  const double peak = out.samples.cwiseAbs().maxCoeff();
  if (cfg.peak > 0.0 && peak > 0.0) out.samples *= cfg.peak / peak;
  return out;
}

Waveform match_energy(const Waveform& waveform, const Eigen::Ref<const Eigen::VectorXd>& target_energy,
                      const FrameGrid& grid) {
  const Eigen::MatrixXd frames = frame_signal(waveform, grid);
  if (frames.rows() != target_energy.size())
    throw usage_error("match_energy: target has " + std::to_string(target_energy.size()) +
                      " frames, waveform has " + std::to_string(frames.rows()));
  Waveform out = waveform;
  const Eigen::Index n_frames = frames.rows();
  if (n_frames == 0) return out;

  Eigen::VectorXd gain(n_frames);
  for (Eigen::Index t = 0; t < n_frames; ++t) {
    const double extracted = frame_energy(frames.row(t).transpose());
    gain[t] = std::clamp(std::sqrt(std::max(target_energy[t], 0.0) / std::max(extracted, 1e-12)), 0.125, 8.0);
  }
  for (Eigen::Index i = 0; i < out.samples.size(); ++i) {
    const double pos = (static_cast<double>(i) - 0.5 * grid.win_length) / grid.hop_length;
    double g;
    if (pos <= 0.0) {
      g = gain[0];
    } else if (pos >= static_cast<double>(n_frames - 1)) {
      g = gain[n_frames - 1];
    } else {
      const auto t = static_cast<Eigen::Index>(pos);
      const double w = pos - static_cast<double>(t);
      g = (1.0 - w) * gain[t] + w * gain[t + 1];
    }
    out.samples[i] *= g;
  }
  return out;
}

void export_mel(const std::filesystem::path& path, const MelSpectrogram& mel) {
  static_assert(std::endian::native == std::endian::little, "NFMEL1 writer assumes little-endian host");
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw data_error("cannot write mel file '" + path.string() + "'");
  os.write(kMelMagic, sizeof kMelMagic);
  put32(os, static_cast<std::uint32_t>(mel.values.rows()));
  put32(os, static_cast<std::uint32_t>(mel.values.cols()));
  put32(os, static_cast<std::uint32_t>(mel.grid.sample_rate));
  put32(os, static_cast<std::uint32_t>(mel.grid.hop_length));
  // Frame-major: all bands of frame 0, then frame 1, ...
  const Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rows = mel.values;
  os.write(reinterpret_cast<const char*>(rows.data()),
           static_cast<std::streamsize>(rows.size() * sizeof(float)));
  if (!os) throw data_error("write failed for mel file '" + path.string() + "'");
}

MelSpectrogram import_mel(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw data_error("cannot open mel file '" + path.string() + "'");
  const std::vector<char> bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  if (bytes.size() < sizeof kMelMagic || std::memcmp(bytes.data(), kMelMagic, sizeof kMelMagic) != 0)
    throw data_error("mel file '" + path.string() + "': bad magic (expected NFMEL1)");
  if (bytes.size() < kMelHeader) throw data_error("mel file '" + path.string() + "': truncated header");
  const auto* u = reinterpret_cast<const unsigned char*>(bytes.data());
  const std::uint32_t n_frames = get32(u + 6);
  const std::uint32_t n_mels = get32(u + 10);
  MelSpectrogram mel;
  mel.grid.sample_rate = static_cast<int>(get32(u + 14));
  mel.grid.hop_length = static_cast<int>(get32(u + 18));
  mel.grid.n_frames = n_frames;
  const std::size_t expected = static_cast<std::size_t>(n_frames) * n_mels * sizeof(float);
  if (bytes.size() - kMelHeader < expected)
    throw data_error("mel file '" + path.string() + "': truncated payload (" +
                     std::to_string(bytes.size() - kMelHeader) + " of " + std::to_string(expected) + " bytes)");
  if (bytes.size() - kMelHeader > expected)
    throw data_error("mel file '" + path.string() + "': trailing bytes after payload");
  Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rows(n_frames, n_mels);
  if (expected > 0) std::memcpy(rows.data(), u + kMelHeader, expected);
  mel.values = rows;
  return mel;
}

}  // namespace neuform
