#include "neuform/pitch.hpp"

#include "neuform/error.hpp"

#include <unsupported/Eigen/FFT>

#include <algorithm>
#include <cmath>
#include <complex>
#include <limits>
#include <numbers>
#include <vector>

namespace neuform {
namespace {

constexpr double kWideMin = 60.0;
constexpr double kWideMax = 600.0;
constexpr double kPresetSplitHz = 165.0;

int next_pow2(Eigen::Index n) {
  int p = 1;
  while (p < n) p <<= 1;
  return p;
}

constexpr Eigen::Index kSincDepth = 16;

// Windowed-sinc interpolation of an even sequence (r(-k) = r(k)).
double sinc_interpolate(const Eigen::VectorXd& r, double x) {
  const auto centre = static_cast<Eigen::Index>(std::floor(x));
  double acc = 0.0;
  for (Eigen::Index k = centre - kSincDepth + 1; k <= centre + kSincDepth; ++k) {
    const Eigen::Index idx = std::abs(k);
    if (idx >= r.size()) continue;
    const double d = x - static_cast<double>(k);
    const double s = std::abs(d) < 1e-12 ? 1.0 : std::sin(std::numbers::pi * d) / (std::numbers::pi * d);
    const double w = 0.5 + 0.5 * std::cos(std::numbers::pi * d / static_cast<double>(kSincDepth));
    acc += r[idx] * s * w;
  }
  return acc;
}

struct Candidate {
  double lag = 0.0;  // samples
  double strength = 0.0;
};

class Autocorrelator {
public:
  explicit Autocorrelator(Eigen::Index window_length)
      : length_(window_length), nfft_(next_pow2(2 * window_length)),
        window_(hann_symmetric(window_length)), time_(static_cast<std::size_t>(nfft_), 0.0) {
    window_ac_ = raw(window_);
  }

  /// Normalized autocorrelation of the windowed, mean-removed segment divided
  /// by the window's own normalized autocorrelation. Empty if the segment is silent.
  Eigen::VectorXd normalized(const Eigen::VectorXd& segment, Eigen::Index max_lag) {
    const Eigen::VectorXd centered =
        (segment.array() - segment.mean()).matrix().cwiseProduct(window_);
    const Eigen::VectorXd ac = raw(centered);
    if (ac[0] <= 0.0) return {};
    const Eigen::Index n = std::min<Eigen::Index>(max_lag + 1, length_);
    Eigen::VectorXd r(n);
    for (Eigen::Index lag = 0; lag < n; ++lag)
      r[lag] = (ac[lag] / ac[0]) / (window_ac_[lag] / window_ac_[0]);
    return r;
  }

private:
  Eigen::VectorXd raw(const Eigen::VectorXd& x) {
    std::fill(time_.begin(), time_.end(), 0.0);
    for (Eigen::Index i = 0; i < x.size(); ++i) time_[static_cast<std::size_t>(i)] = x[i];
    fft_.fwd(freq_, time_);
    for (auto& c : freq_) c = std::norm(c);
    fft_.inv(back_, freq_);
    Eigen::VectorXd ac(length_);
    for (Eigen::Index i = 0; i < length_; ++i) ac[i] = back_[static_cast<std::size_t>(i)].real();
    return ac;
  }

  Eigen::Index length_;
  int nfft_;
  Eigen::VectorXd window_;
  Eigen::VectorXd window_ac_;
  Eigen::FFT<double> fft_;
  std::vector<double> time_;
  std::vector<std::complex<double>> freq_;
  std::vector<std::complex<double>> back_;
};

}  // namespace

void F0Config::validate(int sample_rate) const {
  if (!(f_min > 0.0 && f_min < f_max && f_max < 0.5 * sample_rate))
    throw usage_error("F0 range must satisfy 0 < f_min < f_max < sample_rate / 2");
}

VoicePreset low_voice_preset() {
  VoicePreset p;
  p.name = "low";
  p.f0.f_min = 75.0;
  p.f0.f_max = 300.0;
  p.formant_ceiling = 5000.0;
  return p;
}

VoicePreset high_voice_preset() {
  VoicePreset p;
  p.name = "high";
  p.f0.f_min = 100.0;
  p.f0.f_max = 500.0;
  p.formant_ceiling = 5500.0;
  return p;
}

PitchTrack estimate_f0(const Waveform& waveform, const F0Config& cfg, const FrameGrid& grid) {
  cfg.validate(waveform.sample_rate);
  const double sr = waveform.sample_rate;
  const Eigen::Index n_frames = grid.n_frames;
  const Eigen::Index n = waveform.samples.size();

  PitchTrack track;
  track.log_f0 = Eigen::VectorXd::Constant(n_frames, std::numeric_limits<double>::quiet_NaN());
  track.vuv = Eigen::VectorXi::Zero(n_frames);
  track.strength = Eigen::VectorXd::Zero(n_frames);

  const auto window_length = static_cast<Eigen::Index>(std::ceil(3.0 * sr / cfg.f_min));
  if (n < window_length || n_frames == 0) return track;

  const double min_lag = sr / cfg.f_max;
  const double max_lag = sr / cfg.f_min;
  const auto search_hi = static_cast<Eigen::Index>(std::ceil(max_lag)) + 1;
  const Eigen::Index r_len = search_hi + kSincDepth + 1;
  const auto search_lo = std::max<Eigen::Index>(2, static_cast<Eigen::Index>(std::floor(min_lag)));

  Autocorrelator autocorrelator(window_length);
  std::vector<Eigen::VectorXd> segments(static_cast<std::size_t>(n_frames));
  Eigen::VectorXd rms(n_frames);
  for (Eigen::Index t = 0; t < n_frames; ++t) {
    const auto begin = static_cast<Eigen::Index>(std::llround(grid.frame_center(t))) - window_length / 2;
    Eigen::VectorXd seg = Eigen::VectorXd::Zero(window_length);
    const Eigen::Index lo = std::max<Eigen::Index>(0, begin);
    const Eigen::Index hi = std::min<Eigen::Index>(n, begin + window_length);
    if (hi > lo) seg.segment(lo - begin, hi - lo) = waveform.samples.segment(lo, hi - lo);
    rms[t] = std::sqrt(seg.squaredNorm() / static_cast<double>(window_length));
    segments[static_cast<std::size_t>(t)] = std::move(seg);
  }
  const double peak_rms = rms.maxCoeff();

  Eigen::VectorXd raw_f0 = Eigen::VectorXd::Zero(n_frames);
  for (Eigen::Index t = 0; t < n_frames; ++t) {
    if (peak_rms <= 0.0) break;
    const Eigen::VectorXd r = autocorrelator.normalized(segments[static_cast<std::size_t>(t)], r_len);
    if (r.size() == 0) continue;

    Candidate best;
    double best_score = -std::numeric_limits<double>::infinity();
    for (Eigen::Index lag = search_lo; lag + 1 < r.size() && lag <= search_hi - 1; ++lag) {
      if (!(r[lag] > r[lag - 1] && r[lag] >= r[lag + 1])) continue;
      // Refine on a fine grid of the sinc interpolant, then fit a parabola.
      constexpr int kSteps = 20;
      constexpr double kStep = 1.0 / kSteps;
      double best_x = static_cast<double>(lag);
      double best_v = r[lag];
      for (int s = -kSteps; s <= kSteps; ++s) {
        const double x = static_cast<double>(lag) + s * kStep;
        const double v = sinc_interpolate(r, x);
        if (v > best_v) {
          best_v = v;
          best_x = x;
        }
      }
      const double lo = sinc_interpolate(r, best_x - kStep);
      const double hi = sinc_interpolate(r, best_x + kStep);
      const double denom = lo - 2.0 * best_v + hi;
      const double shift = denom < 0.0 ? std::clamp(0.5 * (lo - hi) / denom, -1.0, 1.0) : 0.0;
      Candidate c;
      c.lag = best_x + shift * kStep;
      c.strength = best_v - 0.25 * (lo - hi) * shift;
      if (c.lag < min_lag * 0.98 || c.lag > max_lag * 1.02) continue;
      const double score = c.strength - cfg.octave_cost * std::log2(cfg.f_min * c.lag / sr);
      if (score > best_score) {
        best_score = score;
        best = c;
      }
    }
    if (best.lag <= 0.0) continue;
    track.strength[t] = best.strength;
    if (best.strength > cfg.voicing_threshold && rms[t] > cfg.silence_threshold * peak_rms) {
      track.vuv[t] = 1;
      raw_f0[t] = sr / best.lag;
    }
  }

  // 3-frame median over runs of voiced frames.
  for (Eigen::Index t = 0; t < n_frames; ++t) {
    if (!track.vuv[t]) continue;
    double f0 = raw_f0[t];
    if (t > 0 && t + 1 < n_frames && track.vuv[t - 1] && track.vuv[t + 1]) {
      double a = raw_f0[t - 1], b = raw_f0[t], c = raw_f0[t + 1];
      f0 = std::max(std::min(a, b), std::min(std::max(a, b), c));
    }
    track.log_f0[t] = std::log(std::clamp(f0, cfg.f_min, cfg.f_max));
  }
  return track;
}

bool interpolate_gaps(Eigen::Ref<Eigen::VectorXd> values, const Eigen::Ref<const Eigen::VectorXi>& valid) {
  const Eigen::Index n = values.size();
  Eigen::Index prev = -1;
  for (Eigen::Index t = 0; t < n; ++t) {
    if (!valid[t]) continue;
    if (prev < 0) {
      for (Eigen::Index s = 0; s < t; ++s) values[s] = values[t];
    } else if (t - prev > 1) {
      const double a = values[prev];
      const double b = values[t];
      for (Eigen::Index s = prev + 1; s < t; ++s) {
        const double w = static_cast<double>(s - prev) / static_cast<double>(t - prev);
        values[s] = a + w * (b - a);
      }
    }
    prev = t;
  }
  if (prev < 0) return false;
  for (Eigen::Index s = prev + 1; s < n; ++s) values[s] = values[prev];
  return true;
}

PitchTrack interpolate_unvoiced(const PitchTrack& track) {
  PitchTrack out = track;
  if (!interpolate_gaps(out.log_f0, out.vuv)) throw data_error("no voiced frames");
  return out;
}

VoicePreset auto_voice_preset(const Waveform& waveform) {
  F0Config wide;
  wide.f_min = kWideMin;
  wide.f_max = kWideMax;
  const FrameGrid grid = FrameGrid::for_waveform(waveform);
  const PitchTrack track = estimate_f0(waveform, wide, grid);

  std::vector<double> voiced;
  for (Eigen::Index t = 0; t < track.size(); ++t)
    if (track.vuv[t]) voiced.push_back(std::exp(track.log_f0[t]));
  if (voiced.empty()) {
    VoicePreset p = low_voice_preset();
    p.warning = true;
    return p;
  }
  const auto mid = voiced.begin() + static_cast<std::ptrdiff_t>(voiced.size() / 2);
  std::nth_element(voiced.begin(), mid, voiced.end());
  double median = *mid;
  if (voiced.size() % 2 == 0) {
    const double lower = *std::max_element(voiced.begin(), mid);
    median = 0.5 * (median + lower);
  }
  return median < kPresetSplitHz ? low_voice_preset() : high_voice_preset();
}

}  // namespace neuform
