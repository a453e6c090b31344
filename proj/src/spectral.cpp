#include "neuform/spectral.hpp"

#include "neuform/error.hpp"

#include <unsupported/Eigen/FFT>

#include <algorithm>
#include <cmath>
#include <complex>
#include <numbers>
#include <vector>

namespace neuform {
namespace {

class RealFft {
public:
  explicit RealFft(int n) : n_(n), time_(static_cast<std::size_t>(n)) {
    fft_.SetFlag(Eigen::FFT<double>::HalfSpectrum);
  }

  const std::vector<std::complex<double>>& forward(const Eigen::Ref<const Eigen::VectorXd>& x) {
    for (int i = 0; i < n_; ++i) time_[static_cast<std::size_t>(i)] = x[i];
    fft_.fwd(freq_, time_);
    return freq_;
  }

  const std::vector<double>& inverse(const Eigen::Ref<const Eigen::VectorXcd>& spectrum) {
    freq_.assign(spectrum.data(), spectrum.data() + spectrum.size());
    fft_.inv(time_, freq_, n_);
    return time_;
  }

private:
  int n_;
  Eigen::FFT<double> fft_;
  std::vector<double> time_;
  std::vector<std::complex<double>> freq_;
};

}  // namespace

Eigen::Index FrameGrid::count_frames(Eigen::Index n_samples, int win_length, int hop_length) {
  if (win_length <= 0 || hop_length <= 0 || hop_length > win_length)
    throw usage_error("frame grid requires win_length >= hop_length > 0");
  if (n_samples < win_length) return 0;
  return 1 + (n_samples - win_length) / hop_length;
}

FrameGrid FrameGrid::for_waveform(const Waveform& waveform, int win_length, int hop_length) {
  FrameGrid grid;
  grid.win_length = win_length;
  grid.hop_length = hop_length;
  grid.sample_rate = waveform.sample_rate;
  grid.n_frames = count_frames(waveform.samples.size(), win_length, hop_length);
  return grid;
}

Eigen::MatrixXd frame_signal(const Waveform& waveform, const FrameGrid& grid) {
  const Eigen::Index n = FrameGrid::count_frames(waveform.samples.size(), grid.win_length,
                                                 grid.hop_length);
  Eigen::MatrixXd frames(n, grid.win_length);
  for (Eigen::Index t = 0; t < n; ++t)
    frames.row(t) = waveform.samples.segment(grid.frame_start(t), grid.win_length).transpose();
  return frames;
}

Eigen::VectorXd hann_periodic(Eigen::Index length) {
  Eigen::VectorXd w(length);
  for (Eigen::Index i = 0; i < length; ++i)
    w[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) /
                                static_cast<double>(length));
  return w;
}

Eigen::VectorXd hann_symmetric(Eigen::Index length) {
  Eigen::VectorXd w(length);
  if (length == 1) {
    w[0] = 1.0;
    return w;
  }
  for (Eigen::Index i = 0; i < length; ++i)
    w[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) /
                                static_cast<double>(length - 1));
  return w;
}

Eigen::MatrixXcd stft(const Eigen::VectorXd& signal, const FrameGrid& grid) {
  const Eigen::Index n = FrameGrid::count_frames(signal.size(), grid.win_length, grid.hop_length);
  const Eigen::VectorXd window = hann_periodic(grid.win_length);
  RealFft fft(grid.win_length);
  Eigen::MatrixXcd out(n, grid.n_bins());
  Eigen::VectorXd frame(grid.win_length);
  for (Eigen::Index t = 0; t < n; ++t) {
    frame = signal.segment(grid.frame_start(t), grid.win_length).cwiseProduct(window);
    const auto& spec = fft.forward(frame);
    for (Eigen::Index k = 0; k < out.cols(); ++k) out(t, k) = spec[static_cast<std::size_t>(k)];
  }
  return out;
}

Eigen::VectorXd istft(const Eigen::MatrixXcd& spectrum, const FrameGrid& grid) {
  const Eigen::Index n_frames = spectrum.rows();
  if (n_frames == 0) return {};
  const Eigen::Index length = (n_frames - 1) * grid.hop_length + grid.win_length;
  const Eigen::VectorXd window = hann_periodic(grid.win_length);
  Eigen::VectorXd out = Eigen::VectorXd::Zero(length);
  Eigen::VectorXd norm = Eigen::VectorXd::Zero(length);
  RealFft fft(grid.win_length);
  for (Eigen::Index t = 0; t < n_frames; ++t) {
    const auto& frame = fft.inverse(spectrum.row(t).transpose());
    const Eigen::Index start = grid.frame_start(t);
    for (Eigen::Index i = 0; i < grid.win_length; ++i) {
      out[start + i] += window[i] * frame[static_cast<std::size_t>(i)];
      norm[start + i] += window[i] * window[i];
    }
  }
  // The first and last samples are covered only by window tails; flooring the
  // normalizer keeps inconsistent spectra from blowing up there.
  const double floor = 0.1 * norm.maxCoeff();
  for (Eigen::Index i = 0; i < length; ++i) out[i] /= std::max(norm[i], floor);
  return out;
}

MagnitudeSpectrogram stft_magnitude(const Eigen::MatrixXd& frames, const FrameGrid& grid) {
  if (frames.rows() > 0 && frames.cols() != grid.win_length)
    throw usage_error("stft_magnitude: frame length must equal n_fft");
  const Eigen::VectorXd window = hann_periodic(grid.win_length);
  RealFft fft(grid.win_length);
  MagnitudeSpectrogram out;
  out.grid = grid;
  out.grid.n_frames = frames.rows();
  out.values.resize(frames.rows(), grid.n_bins());
  Eigen::VectorXd frame(grid.win_length);
  for (Eigen::Index t = 0; t < frames.rows(); ++t) {
    frame = frames.row(t).transpose().cwiseProduct(window);
    const auto& spec = fft.forward(frame);
    for (Eigen::Index k = 0; k < out.values.cols(); ++k)
      out.values(t, k) = std::abs(spec[static_cast<std::size_t>(k)]);
  }
  return out;
}

MagnitudeSpectrogram stft_magnitude(const Waveform& waveform, const FrameGrid& grid) {
  return stft_magnitude(frame_signal(waveform, grid), grid);
}

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }

double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

MelBasis mel_filterbank(int n_fft, int n_mels, double f_min, double f_max, int sample_rate) {
  if (!(f_min >= 0.0 && f_min < f_max && f_max <= 0.5 * sample_rate))
    throw usage_error("mel_filterbank: require 0 <= f_min < f_max <= sample_rate / 2");
  if (n_fft <= 0 || n_mels <= 0) throw usage_error("mel_filterbank: sizes must be positive");

  const int n_bins = n_fft / 2 + 1;
  const double mel_lo = hz_to_mel(f_min);
  const double mel_hi = hz_to_mel(f_max);
  std::vector<double> edges(static_cast<std::size_t>(n_mels) + 2);
  for (std::size_t i = 0; i < edges.size(); ++i)
    edges[i] = mel_to_hz(mel_lo + (mel_hi - mel_lo) * static_cast<double>(i) /
                                      static_cast<double>(n_mels + 1));

  MelBasis basis;
  basis.n_fft = n_fft;
  basis.n_mels = n_mels;
  basis.f_min = f_min;
  basis.f_max = f_max;
  basis.sample_rate = sample_rate;
  basis.weights = Eigen::MatrixXd::Zero(n_mels, n_bins);
  for (int m = 0; m < n_mels; ++m) {
    const double lo = edges[static_cast<std::size_t>(m)];
    const double mid = edges[static_cast<std::size_t>(m) + 1];
    const double hi = edges[static_cast<std::size_t>(m) + 2];
    const double enorm = 2.0 / (hi - lo);
    for (int k = 0; k < n_bins; ++k) {
      const double f = static_cast<double>(k) * sample_rate / n_fft;
      const double rising = (f - lo) / (mid - lo);
      const double falling = (hi - f) / (hi - mid);
      basis.weights(m, k) = enorm * std::max(0.0, std::min(rising, falling));
    }
  }
  return basis;
}

MelSpectrogram mel_spectrogram(const MagnitudeSpectrogram& spec, const MelBasis& basis) {
  if (spec.values.rows() > 0 && spec.values.cols() != basis.weights.cols())
    throw usage_error("mel_spectrogram: basis has " + std::to_string(basis.weights.cols()) +
                      " bins, spectrogram has " + std::to_string(spec.values.cols()));
  MelSpectrogram mel;
  mel.grid = spec.grid;
  const Eigen::MatrixXd energies = spec.values * basis.weights.transpose();
  mel.values = energies.cwiseMax(static_cast<double>(kMelFloor)).array().log().cast<float>();
  return mel;
}

double spectral_tilt(const Eigen::Ref<const Eigen::VectorXd>& magnitude, int sample_rate,
                     TiltScale scale) {
  const Eigen::Index n = magnitude.size();
  if (n < 2) return 0.0;
  const double n_fft = 2.0 * static_cast<double>(n - 1);
  double mean_f = 0.0;
  double mean_y = 0.0;
  Eigen::VectorXd y(n);
  for (Eigen::Index k = 0; k < n; ++k) {
    y[k] = scale == TiltScale::Decibel ? 20.0 * std::log10(std::max(magnitude[k], 1e-5))
                                       : magnitude[k];
    mean_f += static_cast<double>(k) * sample_rate / n_fft;
    mean_y += y[k];
  }
  mean_f /= static_cast<double>(n);
  mean_y /= static_cast<double>(n);
  double sxy = 0.0;
  double sxx = 0.0;
  for (Eigen::Index k = 0; k < n; ++k) {
    const double df = static_cast<double>(k) * sample_rate / n_fft - mean_f;
    sxy += df * (y[k] - mean_y);
    sxx += df * df;
  }
  return sxy / sxx;
}

double spectral_centroid(const Eigen::Ref<const Eigen::VectorXd>& magnitude, int sample_rate) {
  const Eigen::Index n = magnitude.size();
  if (n < 2) return 0.0;
  const double n_fft = 2.0 * static_cast<double>(n - 1);
  double num = 0.0;
  double den = 0.0;
  for (Eigen::Index k = 0; k < n; ++k) {
    num += static_cast<double>(k) * sample_rate / n_fft * magnitude[k];
    den += magnitude[k];
  }
  return den > 0.0 ? num / den : 0.0;
}

double frame_energy(const Eigen::Ref<const Eigen::VectorXd>& frame) { return frame.squaredNorm(); }

}  // namespace neuform
