#include "neuform/formant.hpp"

#include "neuform/pitch.hpp"

#include <algorithm>
#include <cmath>

namespace neuform {

void LpcFrameConfig::validate(int sample_rate) const {
  if (order != 2 * max_formants) throw usage_error("LPC order must equal 2 * max_formants");
  if (!(ceiling > 0.0 && ceiling <= 0.5 * sample_rate))
    throw usage_error("formant ceiling must lie in (0, sample_rate / 2]");
  if (!(window_ms > 0.0)) throw usage_error("formant window must be positive");
}

std::vector<FormantCandidate> roots_to_formants(const std::vector<std::complex<double>>& roots,
                                                int sample_rate, double ceiling,
                                                double max_bandwidth, double min_frequency) {
  std::vector<FormantCandidate> out;
  const double sr = sample_rate;
  for (const auto& r : roots) {
    if (!(r.imag() > 0.0)) continue;
    const double radius = std::abs(r);
    if (!(radius > 0.0)) continue;
    FormantCandidate c;
    c.frequency = std::arg(r) * sr / (2.0 * std::numbers::pi);
    c.bandwidth = -std::log(radius) * sr / std::numbers::pi;
    if (c.frequency > min_frequency && c.frequency < ceiling && c.bandwidth > 0.0 &&
        c.bandwidth < max_bandwidth)
      out.push_back(c);
  }
  std::sort(out.begin(), out.end(),
            [](const FormantCandidate& x, const FormantCandidate& y) { return x.frequency < y.frequency; });
  return out;
}

std::complex<double> formant_to_pole(double frequency, double bandwidth, int sample_rate) {
  const double radius = std::exp(-std::numbers::pi * bandwidth / sample_rate);
  return std::polar(radius, 2.0 * std::numbers::pi * frequency / sample_rate);
}

std::vector<std::vector<FormantCandidate>> formant_candidates(const Waveform& waveform,
                                                              const LpcFrameConfig& cfg,
                                                              const FrameGrid& grid) {
  cfg.validate(waveform.sample_rate);
  // Analyse at twice the ceiling so the pole budget covers 0..ceiling only.
  const int analysis_rate = static_cast<int>(std::lround(2.0 * cfg.ceiling));
  const Waveform analysis = analysis_rate < waveform.sample_rate ? resample(waveform, analysis_rate)
                                                                 : waveform;
  const int sr = analysis.sample_rate;
  const Eigen::VectorXd emphasized = pre_emphasis(analysis.samples, sr, cfg.pre_emphasis_from);

  const auto length = static_cast<Eigen::Index>(std::lround(cfg.window_ms * 1e-3 * sr));
  const Eigen::VectorXd window = hann_symmetric(length);
  const double rate_ratio = static_cast<double>(sr) / waveform.sample_rate;
  const Eigen::Index n = emphasized.size();

  std::vector<std::vector<FormantCandidate>> out(static_cast<std::size_t>(grid.n_frames));
  Eigen::VectorXd frame(length);
  for (Eigen::Index t = 0; t < grid.n_frames; ++t) {
    const auto centre = static_cast<Eigen::Index>(std::llround(grid.frame_center(t) * rate_ratio));
    const Eigen::Index begin = centre - length / 2;
    frame.setZero();
    const Eigen::Index lo = std::max<Eigen::Index>(0, begin);
    const Eigen::Index hi = std::min<Eigen::Index>(n, begin + length);
    if (hi > lo) frame.segment(lo - begin, hi - lo) = emphasized.segment(lo, hi - lo);
    frame.array() *= window.array();

    const auto fit = burg_lpc(frame, cfg.order);
    if (!fit) continue;
    const auto roots = lpc_roots(fit->coefficients, static_cast<long>(t));
    out[static_cast<std::size_t>(t)] =
        roots_to_formants(roots, sr, cfg.ceiling, cfg.max_bandwidth, cfg.min_frequency);
  }
  return out;
}

FormantTracks track_formants(const std::vector<std::vector<FormantCandidate>>& candidates,
                             const Eigen::Ref<const Eigen::VectorXi>& vuv, const FrameGrid& grid,
                             bool mask_unvoiced) {
  const auto n = static_cast<Eigen::Index>(candidates.size());
  if (n != grid.n_frames || vuv.size() != n)
    throw usage_error("track_formants: candidate lists must align with the frame grid");

  FormantTracks tracks;
  tracks.values = Eigen::MatrixXd::Zero(n, kTrackedFormants);
  tracks.missing = Eigen::MatrixXi::Ones(n, kTrackedFormants);
  for (Eigen::Index t = 0; t < n; ++t) {
    if (mask_unvoiced && !vuv[t]) continue;
    const auto& list = candidates[static_cast<std::size_t>(t)];
    for (int i = 0; i < kTrackedFormants && i < static_cast<int>(list.size()); ++i) {
      tracks.values(t, i) = list[static_cast<std::size_t>(i)].frequency;
      tracks.missing(t, i) = 0;
    }
  }

  for (int i = 0; i < kTrackedFormants; ++i) {
    const Eigen::VectorXi valid = (1 - tracks.missing.col(i).array()).matrix();
    Eigen::VectorXd col = tracks.values.col(i);
    if (!interpolate_gaps(col, valid))
      throw data_error("formant F" + std::to_string(i + 1) + " is missing in every frame");
    tracks.values.col(i) = col;
  }
  for (Eigen::Index t = 0; t < n; ++t) {
    Eigen::RowVectorXd row = tracks.values.row(t);
    std::sort(row.data(), row.data() + row.size());
    tracks.values.row(t) = row;
  }
  return tracks;
}

FormantTracks estimate_formants(const Waveform& waveform, const LpcFrameConfig& cfg,
                                const FrameGrid& grid, const Eigen::Ref<const Eigen::VectorXi>& vuv) {
  return track_formants(formant_candidates(waveform, cfg, grid), vuv, grid, cfg.mask_unvoiced);
}

Eigen::VectorXd lpc_envelope_db(const Eigen::Ref<const Eigen::VectorXd>& coefficients, double gain,
                                const Eigen::Ref<const Eigen::VectorXd>& frequencies, int sample_rate) {
  Eigen::VectorXd out(frequencies.size());
  for (Eigen::Index j = 0; j < frequencies.size(); ++j) {
    const double w = 2.0 * std::numbers::pi * frequencies[j] / sample_rate;
    std::complex<double> a = 1.0;
    for (Eigen::Index k = 0; k < coefficients.size(); ++k)
      a += coefficients[k] * std::polar(1.0, -w * static_cast<double>(k + 1));
    out[j] = 10.0 * std::log10(gain / std::norm(a));
  }
  return out;
}

}  // namespace neuform
