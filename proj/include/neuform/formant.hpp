#pragma once

#include "neuform/audio_io.hpp"
#include "neuform/error.hpp"
#include "neuform/spectral.hpp"

#include <Eigen/Core>
#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <complex>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

namespace neuform {

struct LpcFrameConfig {
  int order = 10;
  double window_ms = 25.0;
  double pre_emphasis_from = 50.0;  // Hz
  double ceiling = 5000.0;          // Hz
  int max_formants = 5;
  double max_bandwidth = 700.0;     // Hz; wider poles are not admitted as formants
  double min_frequency = 50.0;      // Hz
  bool mask_unvoiced = true;        // treat unvoiced frames as missing before interpolation

  void validate(int sample_rate) const;
};

struct FormantCandidate {
  double frequency = 0.0;  // Hz
  double bandwidth = 0.0;  // Hz
};

inline constexpr int kTrackedFormants = 4;

/// F1..F4 per frame (columns), plus the frames where each value was filled in.
struct FormantTracks {
  Eigen::MatrixXd values;   // n_frames x 4, Hz
  Eigen::MatrixXi missing;  // n_frames x 4, 1 where the value was interpolated

  Eigen::Index size() const { return values.rows(); }
  auto f(int i) const { return values.col(i - 1); }  // 1-based, f(1) is F1
};

template <typename Scalar>
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

template <typename Scalar>
struct LpcFit {
  VectorX<Scalar> coefficients;  // a[1..order] of A(z) = 1 + sum a_k z^-k
  VectorX<Scalar> reflection;    // k[1..order]
  Scalar error = 0;              // final mean-square prediction error
};

/// First-order pre-emphasis y[n] = x[n] - a x[n-1], a = exp(-2 pi from_hz / sr),
/// with y[0] = (1 - a) x[0].
template <typename Derived>
VectorX<typename Derived::Scalar> pre_emphasis(const Eigen::MatrixBase<Derived>& frame,
                                               int sample_rate, double from_hz = 50.0) {
  using Scalar = typename Derived::Scalar;
  const Scalar a = static_cast<Scalar>(std::exp(-2.0 * std::numbers::pi * from_hz / sample_rate));
  VectorX<Scalar> y(frame.size());
  if (frame.size() == 0) return y;
  y[0] = frame[0] * (Scalar(1) - a);
  for (Eigen::Index n = 1; n < frame.size(); ++n) y[n] = frame[n] - a * frame[n - 1];
  return y;
}

/// Burg's method: reflection coefficients minimizing the summed forward and
/// backward prediction error. Returns nullopt for a frame with no energy.
template <typename Derived>
std::optional<LpcFit<typename Derived::Scalar>> burg_lpc(const Eigen::MatrixBase<Derived>& frame,
                                                         int order) {
  using Scalar = typename Derived::Scalar;
  const Eigen::Index n = frame.size();
  if (order < 1 || n <= order) throw usage_error("burg_lpc: frame must be longer than the order");

  Eigen::VectorXd fwd = frame.template cast<double>();
  Eigen::VectorXd bwd = fwd;
  double err = fwd.squaredNorm() / static_cast<double>(n);
  if (!(err > 0.0)) return std::nullopt;

  Eigen::VectorXd a = Eigen::VectorXd::Zero(order + 1);
  a[0] = 1.0;
  Eigen::VectorXd prev(order + 1);
  LpcFit<Scalar> fit;
  fit.reflection.resize(order);

  for (int m = 1; m <= order; ++m) {
    // Forward error f[t] for t >= m pairs with backward error b[t - 1].
    const Eigen::Index len = n - m;
    const auto f = fwd.segment(m, len);
    const auto b = bwd.segment(m - 1, len);
    const double num = -2.0 * f.dot(b);
    const double den = f.squaredNorm() + b.squaredNorm();
    if (!(den > 0.0)) return std::nullopt;
    const double k = num / den;

    prev = a;
    for (int i = 1; i < m; ++i) a[i] = prev[i] + k * prev[m - i];
    a[m] = k;
    err *= 1.0 - k * k;
    fit.reflection[m - 1] = static_cast<Scalar>(k);

    for (Eigen::Index t = n - 1; t >= m; --t) {
      const double ft = fwd[t];
      fwd[t] = ft + k * bwd[t - 1];
      bwd[t] = bwd[t - 1] + k * ft;
    }
  }
  fit.coefficients = a.tail(order).cast<Scalar>();
  fit.error = static_cast<Scalar>(err);
  return fit;
}

/// All roots of z^p + a1 z^(p-1) + ... + ap from the companion matrix
/// eigenvalues, refined by Newton steps on the polynomial.
template <typename Derived>
std::vector<std::complex<double>> lpc_roots(const Eigen::MatrixBase<Derived>& coefficients,
                                            long frame_index = -1) {
  const Eigen::Index p = coefficients.size();
  if (p < 1) throw usage_error("lpc_roots: order must be at least 1");
  const Eigen::VectorXd a = coefficients.template cast<double>();

  Eigen::MatrixXd companion = Eigen::MatrixXd::Zero(p, p);
  companion.row(0) = -a.transpose();
  if (p > 1) companion.diagonal(-1).setOnes();

  Eigen::EigenSolver<Eigen::MatrixXd> solver(companion, /*computeEigenvectors=*/false);
  if (solver.info() != Eigen::Success)
    throw numeric_error("lpc_roots: QR iteration did not converge" +
                        (frame_index >= 0 ? " at frame " + std::to_string(frame_index) : ""));

  auto eval = [&](std::complex<double> z, std::complex<double>& deriv) {
    std::complex<double> v = 1.0;
    deriv = 0.0;
    for (Eigen::Index i = 0; i < p; ++i) {
      deriv = deriv * z + v;
      v = v * z + a[i];
    }
    return v;
  };

  std::vector<std::complex<double>> roots(static_cast<std::size_t>(p));
  for (Eigen::Index i = 0; i < p; ++i) {
    std::complex<double> z = solver.eigenvalues()[i];
    for (int it = 0; it < 3; ++it) {
      std::complex<double> d;
      const std::complex<double> v = eval(z, d);
      if (std::abs(d) < 1e-14) break;
      const std::complex<double> step = v / d;
      if (!std::isfinite(step.real()) || !std::isfinite(step.imag()) || std::abs(step) > 1e-3) break;
      z -= step;
    }
    roots[static_cast<std::size_t>(i)] = z;
  }
  return roots;
}

/// Converts poles with positive imaginary part to (frequency, bandwidth), keeping
/// min_frequency < F < ceiling and 0 < B < max_bandwidth, sorted by frequency.
std::vector<FormantCandidate> roots_to_formants(const std::vector<std::complex<double>>& roots,
                                                int sample_rate, double ceiling,
                                                double max_bandwidth = 700.0,
                                                double min_frequency = 50.0);

/// Inverse of the pole-to-formant formulas: r = exp(-pi B / sr) exp(i 2 pi F / sr).
std::complex<double> formant_to_pole(double frequency, double bandwidth, int sample_rate);

/// Per-frame candidate lists for every frame of `grid`, analysed at the frame centres.
/// An empty list marks a degenerate (silent) frame.
std::vector<std::vector<FormantCandidate>> formant_candidates(const Waveform& waveform,
                                                              const LpcFrameConfig& cfg,
                                                              const FrameGrid& grid);

/// Rank-order assignment of the lowest four candidates with gap interpolation.
/// Throws neuform::Error (Data) if some formant is missing in every frame.
FormantTracks track_formants(const std::vector<std::vector<FormantCandidate>>& candidates,
                             const Eigen::Ref<const Eigen::VectorXi>& vuv, const FrameGrid& grid,
                             bool mask_unvoiced = true);

/// Convenience: candidates + tracking in one call.
FormantTracks estimate_formants(const Waveform& waveform, const LpcFrameConfig& cfg,
                                const FrameGrid& grid, const Eigen::Ref<const Eigen::VectorXi>& vuv);

/// |1 / A(e^{jw})|^2 in dB at the given frequencies (Hz), scaled by the prediction error.
Eigen::VectorXd lpc_envelope_db(const Eigen::Ref<const Eigen::VectorXd>& coefficients, double gain,
                                const Eigen::Ref<const Eigen::VectorXd>& frequencies, int sample_rate);

}  // namespace neuform
