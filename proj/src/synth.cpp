#include "neuform/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace neuform::synth {
namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

// Reference vowel qualities (F1..F4, Hz).
constexpr std::array<std::array<double, 4>, 7> kVowels{{
    {280.0, 2250.0, 2900.0, 3600.0},
    {400.0, 2000.0, 2600.0, 3500.0},
    {700.0, 1200.0, 2600.0, 3400.0},
    {450.0, 850.0, 2500.0, 3400.0},
    {320.0, 900.0, 2300.0, 3300.0},
    {650.0, 1700.0, 2500.0, 3500.0},
    {500.0, 1400.0, 2450.0, 3450.0},
}};

struct Resonator {
  double y1 = 0.0;
  double y2 = 0.0;

  double step(double x, double freq, double bw, double sr) {
    const double c = -std::exp(-kTwoPi * bw / sr);
    const double b = 2.0 * std::exp(-std::numbers::pi * bw / sr) * std::cos(kTwoPi * freq / sr);
    const double a = 1.0 - b - c;
    const double y = a * x + b * y1 + c * y2;
    y2 = y1;
    y1 = y;
    return y;
  }
};

void normalize_peak(Waveform& w, double peak) {
  const double m = w.samples.cwiseAbs().maxCoeff();
  if (m > 0.0) w.samples *= peak / m;
}

}  // namespace

Waveform vowel(const VowelSpec& spec) {
  const double sr = spec.sample_rate;
  const auto n = static_cast<Eigen::Index>(std::lround(spec.duration * sr));
  Waveform out;
  out.sample_rate = spec.sample_rate;
  out.samples.setZero(n);
  if (n == 0) return out;

  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::array<Resonator, 4> cascade{};
  std::vector<Resonator> upper(spec.upper_formants.size());
  const double nyquist = 0.5 * sr;
  const double fade = std::max(1.0, spec.fade_ms * 1e-3 * sr);
  const auto n_targets = static_cast<double>(spec.formants.size());

  double phase = 0.0;
  double lowpass = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const double u = n > 1 ? static_cast<double>(i) / static_cast<double>(n - 1) : 0.0;
    const double time = static_cast<double>(i) / sr;
    double f0 = spec.f0_start * std::pow(spec.f0_end / spec.f0_start, u);
    f0 *= 1.0 + spec.f0_vibrato_depth * std::sin(kTwoPi * spec.f0_vibrato_hz * time);

    // Band-limited pulse: sum_k g_k cos(k phase), tapering harmonics above 0.8 Nyquist.
    const double c1 = std::cos(phase);
    double prev = 1.0;
    double cur = c1;
    double src = 0.0;
    const int harmonics = static_cast<int>(nyquist / f0);
    for (int k = 1; k <= harmonics; ++k) {
      const double fk = k * f0;
      const double rel = fk / nyquist;
      const double g = rel < 0.8 ? 1.0 : 0.5 + 0.5 * std::cos(std::numbers::pi * (rel - 0.8) / 0.2);
      src += g * cur;
      const double next = 2.0 * c1 * cur - prev;
      prev = cur;
      cur = next;
    }
    src /= std::max(1, harmonics);
    phase = std::fmod(phase + kTwoPi * f0 / sr, kTwoPi);

    lowpass = (1.0 - spec.source_lowpass) * src + spec.source_lowpass * lowpass;
    double x = lowpass + spec.noise_level * 0.01 * gauss(rng);

    // Formant trajectory: piecewise linear through the targets.
    std::array<double, 4> fm = spec.formants.front();
    if (spec.formants.size() > 1) {
      const double pos = u * (n_targets - 1.0);
      const auto k = std::min(static_cast<std::size_t>(pos), spec.formants.size() - 2);
      const double w = pos - static_cast<double>(k);
      for (int j = 0; j < 4; ++j)
        fm[static_cast<std::size_t>(j)] = (1.0 - w) * spec.formants[k][static_cast<std::size_t>(j)] +
                                          w * spec.formants[k + 1][static_cast<std::size_t>(j)];
    }
    for (std::size_t j = 0; j < 4; ++j) x = cascade[j].step(x, fm[j], spec.bandwidths[j], sr);
    for (std::size_t j = 0; j < spec.upper_formants.size(); ++j)
      x = upper[j].step(x, spec.upper_formants[j][0], spec.upper_formants[j][1], sr);

    double env = 1.0 + spec.tremolo_depth * std::sin(kTwoPi * spec.tremolo_hz * time);
    const double di = static_cast<double>(i);
    const double edge = std::min(di, static_cast<double>(n - 1) - di);
    if (edge < fade) env *= 0.5 - 0.5 * std::cos(std::numbers::pi * edge / fade);
    out.samples[i] = x * env;
  }
  normalize_peak(out, spec.peak);
  return out;
}

Waveform pulse_train(double f0, double duration, int sample_rate, double peak) {
  VowelSpec spec;
  spec.duration = duration;
  spec.f0_start = spec.f0_end = f0;
  spec.sample_rate = sample_rate;
  spec.fade_ms = 0.0;
  spec.peak = peak;
  // Bypass the resonators: a pulse train is the raw source.
  const double sr = sample_rate;
  const auto n = static_cast<Eigen::Index>(std::lround(duration * sr));
  Waveform out;
  out.sample_rate = sample_rate;
  out.samples.setZero(n);
  const int harmonics = static_cast<int>(0.5 * sr / f0);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double phase = kTwoPi * f0 * static_cast<double>(i) / sr;
    const double c1 = std::cos(phase);
    double prev = 1.0, cur = c1, s = 0.0;
    for (int k = 1; k <= harmonics; ++k) {
      const double rel = k * f0 / (0.5 * sr);
      const double g = rel < 0.8 ? 1.0 : 0.5 + 0.5 * std::cos(std::numbers::pi * (rel - 0.8) / 0.2);
      s += g * cur;
      const double next = 2.0 * c1 * cur - prev;
      prev = cur;
      cur = next;
    }
    out.samples[i] = s;
  }
  normalize_peak(out, spec.peak);
  return out;
}

Waveform sine(double frequency, double duration, double amplitude, int sample_rate) {
  const auto n = static_cast<Eigen::Index>(std::lround(duration * sample_rate));
  Waveform out;
  out.sample_rate = sample_rate;
  out.samples.resize(n);
  for (Eigen::Index i = 0; i < n; ++i)
    out.samples[i] = amplitude * std::sin(kTwoPi * frequency * static_cast<double>(i) / sample_rate);
  return out;
}

Waveform white_noise(double duration, double amplitude, std::uint64_t seed, int sample_rate) {
  const auto n = static_cast<Eigen::Index>(std::lround(duration * sample_rate));
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(-amplitude, amplitude);
  Waveform out;
  out.sample_rate = sample_rate;
  out.samples.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) out.samples[i] = dist(rng);
  return out;
}

VowelSpec random_vowel(std::mt19937_64& rng, double f0_low, double f0_high) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * unit(rng); };
  std::uniform_int_distribution<std::size_t> pick(0, kVowels.size() - 1);

  VowelSpec spec;
  spec.duration = uniform(0.6, 1.2);
  spec.f0_start = std::exp(uniform(std::log(f0_low), std::log(f0_high)));
  spec.f0_end = std::clamp(spec.f0_start * uniform(0.8, 1.2), f0_low, f0_high);
  spec.f0_vibrato_hz = uniform(2.0, 6.0);
  spec.f0_vibrato_depth = uniform(0.0, 0.03);
  const int n_targets = 1 + static_cast<int>(uniform(0.0, 3.0));
  spec.formants.clear();
  for (int i = 0; i < n_targets; ++i) {
    auto f = kVowels[pick(rng)];
    for (auto& v : f) v *= uniform(0.85, 1.15);
    for (std::size_t j = 1; j < f.size(); ++j) f[j] = std::max(f[j], f[j - 1] + 250.0);
    spec.formants.push_back(f);
  }
  spec.bandwidths = {uniform(60.0, 110.0), uniform(70.0, 130.0), uniform(90.0, 160.0),
                     uniform(110.0, 200.0)};
  spec.upper_formants = {{uniform(4100.0, 4600.0), uniform(200.0, 300.0)}};
  spec.source_lowpass = uniform(0.93, 0.985);
  spec.peak = uniform(0.2, 0.8);
  spec.fade_ms = uniform(20.0, 60.0);
  spec.tremolo_hz = uniform(1.0, 4.0);
  spec.tremolo_depth = uniform(0.0, 0.3);
  spec.seed = rng();
  return spec;
}

VowelSpec random_steady_vowel(std::mt19937_64& rng, double f0_low, double f0_high) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * unit(rng); };
  VowelSpec spec;
  spec.duration = 1.0;
  spec.f0_start = spec.f0_end = uniform(f0_low, f0_high);
  const double f1 = uniform(300.0, 800.0);
  const double f2 = uniform(std::max(900.0, f1 + 350.0), 2200.0);
  const double f3 = uniform(std::max(2300.0, f2 + 400.0), 3000.0);
  const double f4 = uniform(std::max(3300.0, f3 + 400.0), 4000.0);
  spec.formants = {{f1, f2, f3, f4}};
  spec.bandwidths = {80.0, 90.0, 120.0, 150.0};
  spec.fade_ms = 20.0;
  spec.seed = rng();
  return spec;
}

}  // namespace neuform::synth
