// Acceptance run: one PASS/FAIL line per criterion.
#include "neuform/audio_io.hpp"
#include "neuform/eval.hpp"
#include "neuform/formant.hpp"
#include "neuform/mapper.hpp"
#include "neuform/params.hpp"
#include "neuform/pipeline.hpp"
#include "neuform/pitch.hpp"
#include "neuform/synth.hpp"
#include "neuform/vocoder.hpp"
#include "support.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <complex>
#include <cstdio>
#include <cstring>
#include <functional>
#include <numbers>
#include <random>
#include <sstream>
#include <string>
#include <vector>

using namespace neuform;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double median(std::vector<double> v) {
  if (v.empty()) return std::nan("");
  const auto mid = v.begin() + static_cast<std::ptrdiff_t>(v.size() / 2);
  std::nth_element(v.begin(), mid, v.end());
  if (v.size() % 2) return *mid;
  return 0.5 * (*mid + *std::max_element(v.begin(), mid));
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// 1 -----------------------------------------------------------------------------

Outcome formant_oracle() {
  const auto t0 = std::chrono::steady_clock::now();
  std::mt19937_64 rng(2024);
  std::array<std::vector<double>, 4> err;
  for (int i = 0; i < 50; ++i) {
    const synth::VowelSpec spec = synth::random_steady_vowel(rng);
    const Analysis a = analyze(synth::vowel(spec));
    for (int k = 0; k < 4; ++k) {
      const double truth = spec.formants.front()[static_cast<std::size_t>(k)];
      const auto col = a.params.col(static_cast<Param>(index(Param::F1) + k));
      for (Eigen::Index t = 0; t < col.size(); ++t) {
        if (a.params.values(t, index(Param::Vuv)) < 0.5) continue;
        err[static_cast<std::size_t>(k)].push_back(std::abs(col[t] / truth - 1.0));
      }
    }
  }
  const double elapsed = seconds_since(t0);
  double m[4];
  bool ok = elapsed < 30.0;
  for (int k = 0; k < 4; ++k) {
    m[k] = median(err[static_cast<std::size_t>(k)]);
    ok = ok && m[k] <= (k < 3 ? 0.05 : 0.08);
  }
  return {ok, fmt("median rel err F1 %.4f F2 %.4f F3 %.4f F4 %.4f; %.1f s", m[0], m[1], m[2], m[3], elapsed)};
}

// 2 -----------------------------------------------------------------------------

Outcome f0_oracle() {
  long within = 0, total = 0;
  for (double f0 : {75.0, 90.0, 110.0, 150.0, 200.0, 250.0, 300.0, 350.0, 420.0, 500.0}) {
    for (int kind = 0; kind < 2; ++kind) {
      const Waveform w = kind == 0 ? synth::pulse_train(f0, 1.0) : synth::sine(f0, 1.0);
      const FrameGrid g = FrameGrid::for_waveform(w);
      const PitchTrack p = estimate_f0(w, auto_voice_preset(w).f0, g);
      for (Eigen::Index t = 0; t < p.size(); ++t) {
        ++total;
        if (p.vuv[t] && std::abs(std::exp(p.log_f0[t]) / f0 - 1.0) <= 0.02) ++within;
      }
    }
  }
  const double share = static_cast<double>(within) / static_cast<double>(total);

  // Alternating 250 ms voiced / noise segments. Frames whose window straddles a
  // boundary have no single true label and are not scored.
  long correct = 0, scored = 0;
  for (double f0 : {100.0, 180.0, 260.0}) {
    const int seg = kWorkingRate / 4;
    Waveform w;
    w.samples.resize(8 * seg);
    const Waveform voiced = synth::pulse_train(f0, 0.25);
    const Waveform noise = synth::white_noise(0.25, 0.3, static_cast<std::uint64_t>(f0));
    for (int s = 0; s < 8; ++s)
      w.samples.segment(s * seg, seg) = (s % 2 == 0 ? voiced : noise).samples.head(seg);
    const FrameGrid g = FrameGrid::for_waveform(w);
    const PitchTrack p = estimate_f0(w, auto_voice_preset(w).f0, g);
    for (Eigen::Index t = 0; t < p.size(); ++t) {
      const Eigen::Index start = t * g.hop_length, end = start + g.win_length;
      if (start / seg != (end - 1) / seg) continue;
      const int truth = (start / seg) % 2 == 0 ? 1 : 0;
      ++scored;
      if (p.vuv[t] == truth) ++correct;
    }
  }
  const double vuv = static_cast<double>(correct) / static_cast<double>(scored);
  return {share >= 0.95 && vuv >= 0.95,
          fmt("%.2f%% of frames within 2%% (75-500 Hz); VUV accuracy %.2f%% over %ld frames", 100.0 * share,
              100.0 * vuv, scored)};
}

// 3 -----------------------------------------------------------------------------

Eigen::VectorXd ar_process(const Eigen::VectorXd& a, Eigen::Index n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> e(0.0, 1.0);
  const Eigen::Index warm = 1000;
  Eigen::VectorXd x = Eigen::VectorXd::Zero(n + warm);
  for (Eigen::Index i = 0; i < n + warm; ++i) {
    double v = e(rng);
    for (Eigen::Index k = 0; k < a.size() && k < i; ++k) v -= a[k] * x[i - 1 - k];
    x[i] = v;
  }
  return x.tail(n);
}

// Autocorrelation method, independent of the library's Burg code.
Eigen::VectorXd levinson(const Eigen::VectorXd& x, int order, double& err) {
  Eigen::VectorXd r(order + 1);
  for (int k = 0; k <= order; ++k)
    r[k] = x.tail(x.size() - k).dot(x.head(x.size() - k)) / static_cast<double>(x.size());
  Eigen::VectorXd a = Eigen::VectorXd::Zero(order + 1);
  a[0] = 1.0;
  err = r[0];
  for (int m = 1; m <= order; ++m) {
    double acc = r[m];
    for (int i = 1; i < m; ++i) acc += a[i] * r[m - i];
    const double k = -acc / err;
    const Eigen::VectorXd prev = a;
    for (int i = 1; i < m; ++i) a[i] = prev[i] + k * prev[m - i];
    a[m] = k;
    err *= 1.0 - k * k;
  }
  return a.tail(order);
}

Outcome burg_correctness() {
  std::mt19937_64 rng(77);
  std::uniform_real_distribution<double> radius(0.85, 0.97), angle(0.15, 0.85);
  double worst_r = 0.0, worst_theta = 0.0, worst_db = 0.0;
  const int trials = 20;
  for (int trial = 0; trial < trials; ++trial) {
    // Two conjugate pairs with well separated angles.
    std::complex<double> poles[2];
    const double th1 = std::numbers::pi * angle(rng);
    double th2 = std::numbers::pi * angle(rng);
    while (std::abs(th2 - th1) < 0.2 * std::numbers::pi) th2 = std::numbers::pi * angle(rng);
    poles[0] = std::polar(radius(rng), th1);
    poles[1] = std::polar(radius(rng), th2);
    // A(z) = prod (1 - p z^-1)(1 - conj(p) z^-1)
    Eigen::VectorXd poly = Eigen::VectorXd::Zero(5);
    poly[0] = 1.0;
    for (const auto& p : poles) {
      const double c1 = -2.0 * p.real(), c2 = std::norm(p);
      Eigen::VectorXd next = poly;
      for (int i = 1; i <= 4; ++i) next[i] += c1 * poly[i - 1] + (i >= 2 ? c2 * poly[i - 2] : 0.0);
      poly = next;
    }
    const Eigen::VectorXd x = ar_process(poly.tail(4), 10000, 100 + static_cast<std::uint64_t>(trial));
    const auto fit = burg_lpc(x, 4);
    if (!fit) return {false, "Burg returned no fit"};
    const auto roots = lpc_roots(fit->coefficients);
    for (const auto& p : poles) {
      double best = 1e9;
      std::complex<double> match;
      for (const auto& r : roots)
        if (std::abs(r - p) < best) best = std::abs(r - p), match = r;
      worst_r = std::max(worst_r, std::abs(std::abs(match) / std::abs(p) - 1.0));
      worst_theta = std::max(worst_theta, std::abs(std::abs(std::arg(match)) / std::arg(p) - 1.0));
    }
    double ld_err = 0.0;
    const Eigen::VectorXd ld = levinson(x, 4, ld_err);
    const Eigen::VectorXd f = Eigen::VectorXd::LinSpaced(1024, 0.0, 11025.0);
    const Eigen::VectorXd eb = lpc_envelope_db(fit->coefficients.cast<double>(), fit->error, f, 22050);
    const Eigen::VectorXd el = lpc_envelope_db(ld, ld_err, f, 22050);
    worst_db = std::max(worst_db, (eb - el).cwiseAbs().maxCoeff());
  }
  return {worst_r <= 0.01 && worst_theta <= 0.01 && worst_db <= 3.0,
          fmt("%d AR(4) processes: worst radius err %.4f%%, angle err %.4f%%, envelope gap %.3f dB", trials,
              100.0 * worst_r, 100.0 * worst_theta, worst_db)};
}

// 4 -----------------------------------------------------------------------------

Outcome pole_round_trip() {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> freq(50.0, 10975.0), bw(10.0, 1500.0);
  double worst = 0.0;
  for (int i = 0; i < 1000; ++i) {
    const double f = freq(rng), b = bw(rng);
    const auto pole = formant_to_pole(f, b, 22050);
    const auto back = roots_to_formants({pole}, 22050, 11025.0, 1e9, 0.0);
    if (back.size() != 1) return {false, fmt("pair %d (%.3f Hz, %.3f Hz) was lost", i, f, b)};
    worst = std::max({worst, std::abs(back[0].frequency / f - 1.0), std::abs(back[0].bandwidth / b - 1.0)});
  }
  return {worst <= 1e-9, fmt("1000 pairs, worst relative error %.3g", worst)};
}

// 5 -----------------------------------------------------------------------------

template <typename Scalar>
std::vector<Scalar*> flat(MapperWeights<Scalar>& w) {
  std::vector<Scalar*> out;
  w.visit([&](const std::string&, MatrixX<Scalar>& m) {
    for (Eigen::Index i = 0; i < m.size(); ++i) out.push_back(m.data() + i);
  });
  return out;
}

Outcome mapper_gradients() {
  MapperConfig cfg;
  cfg.mel_channels = 6;
  cfg.residual_channels = cfg.skip_channels = cfg.post_channels = 4;
  cfg.dilations = {1, 2};
  std::mt19937_64 rng(5);
  std::normal_distribution<double> g(0.0, 1.0);

  auto m32 = init_model<float>(cfg, 5);
  auto w32 = flat(m32.weights);
  for (float* p : w32) *p += static_cast<float>(0.1 * g(rng));
  const PackedLayout layout = PackedLayout::uniform(2, 16);
  Eigen::MatrixXf x(9, layout.total()), target(cfg.mel_channels, layout.total());
  for (auto& v : x.reshaped()) v = static_cast<float>(g(rng));
  for (auto& v : target.reshaped()) v = static_cast<float>(g(rng));

  // Analytic gradient in float against central differences of the same weights in double.
  auto [l32, grad] = loss_and_gradient(m32.weights, cfg, x, target, layout);
  const auto g32 = flat(grad);
  auto m64 = init_model<double>(cfg, 5);
  auto w64 = flat(m64.weights);
  for (std::size_t i = 0; i < w64.size(); ++i) *w64[i] = static_cast<double>(*w32[i]);
  const Eigen::MatrixXd xd = x.cast<double>(), td = target.cast<double>();
  const double h = 1e-6;
  double worst = 0.0;
  for (std::size_t i = 0; i < w64.size(); ++i) {
    const double keep = *w64[i];
    *w64[i] = keep + h;
    const double up = loss(forward(m64.weights, cfg, xd, layout), td);
    *w64[i] = keep - h;
    const double down = loss(forward(m64.weights, cfg, xd, layout), td);
    *w64[i] = keep;
    const double fd = (up - down) / (2.0 * h), an = *g32[i];
    const double scale = std::max({std::abs(fd), std::abs(an), 1e-6});
    worst = std::max(worst, std::abs(fd - an) / scale);
  }

  // Locality on the desk layout.
  auto desk = init_model<float>(MapperConfig{}, 9);
  for (float* p : flat(desk.weights)) *p += static_cast<float>(0.05 * g(rng));
  Eigen::MatrixXf z(120, 9);
  for (auto& v : z.reshaped()) v = static_cast<float>(g(rng));
  const Eigen::MatrixXf y = forward(desk, z);
  double outside = 0.0, inside = 0.0;
  for (Eigen::Index at : {20, 60, 100}) {
    Eigen::MatrixXf zp = z;
    zp.row(at).array() += 1.0f;
    const Eigen::MatrixXf yp = forward(desk, zp);
    for (Eigen::Index t = 0; t < 120; ++t) {
      const double c = (yp.row(t) - y.row(t)).cwiseAbs().maxCoeff();
      if (std::abs(t - at) > 14) outside = std::max(outside, c);
      else inside = std::max(inside, c);
    }
  }
  return {worst <= 1e-2 && outside <= 1e-6 && inside > 0.0,
          fmt("%zu weights, max relative error %.3g (float analytic vs FD); change beyond +-14 frames %.3g", w64.size(),
              worst, outside)};
}

// Shared synthetic corpus for 6-8 ---------------------------------------------

struct Corpus {
  std::vector<Analysis> train;  // first 1000
  std::vector<Analysis> held;   // last 40
};

Corpus build_corpus() {
  std::mt19937_64 rng(1234);
  Corpus c;
  for (int i = 0; i < 1040; ++i) {
    Analysis a = analyze(synth::vowel(synth::random_vowel(rng)));
    (i < 1000 ? c.train : c.held).push_back(std::move(a));
  }
  return c;
}

TrainConfig desk_train(int updates) {
  TrainConfig t;
  t.learning_rate = 1e-3;
  t.max_updates = updates;
  return t;
}

MapperModel<float> fresh_model(const PreparedData& d) {
  MapperModel<float> m = init_model<float>(MapperConfig{}, 0);
  m.input_stats = d.input_stats;
  m.mel_stats = d.mel_stats;
  return m;
}

// 6 -----------------------------------------------------------------------------

Outcome desk_training(const Corpus& c) {
  const std::vector<Analysis> first(c.train.begin(), c.train.begin() + 200);
  const PreparedData d = prepare_training_data(first);
  const auto t0 = std::chrono::steady_clock::now();
  const TrainResult a = train(fresh_model(d), d.pairs, desk_train(5000));
  const double elapsed = seconds_since(t0);
  const TrainResult b = train(fresh_model(d), d.pairs, desk_train(5000));
  const bool same = a.losses.size() == b.losses.size() &&
                    std::memcmp(a.losses.data(), b.losses.data(), a.losses.size() * sizeof(double)) == 0;
  const double ratio = smooth(a.losses, 100).back() / a.losses.front();
  return {ratio <= 0.1 && elapsed < 1200.0 && same,
          fmt("200 utterances, 5000 updates: smoothed final / initial loss %.4f; %.0f s; rerun %s", ratio, elapsed,
              same ? "bitwise identical" : "DIFFERS")};
}

// 7 / 8 ---------------------------------------------------------------------------

struct Trained {
  MapperModel<float> model;
  std::vector<SweepUtterance> held;
};

Trained train_large(const Corpus& c) {
  const PreparedData d = prepare_training_data(c.train);
  Trained t{train(fresh_model(d), d.pairs, desk_train(10000)).model, {}};
  for (const auto& a : c.held) t.held.push_back({a});
  return t;
}

Outcome copy_synthesis(const Trained& t, ParamErrorReport& copy) {
  const Pipeline pipeline(t.model);
  copy = copy_synthesis_report(t.held, pipeline, t.model.input_stats);
  const double f0 = copy.mse_of(Param::LogF0), f1 = copy.mse_of(Param::F1), f2 = copy.mse_of(Param::F2);
  return {f0 <= 0.1 && f1 <= 0.1 && f2 <= 0.1,
          fmt("40 held-out vowels, Griffin-Lim: z-MSE log-F0 %.4f F1 %.4f F2 %.4f", f0, f1, f2)};
}

Outcome manipulation_tracking(const Trained& t, const ParamErrorReport& copy) {
  const Pipeline pipeline(t.model);
  SweepOptions opt;
  opt.params = {Param::LogF0, Param::F1};
  opt.factors = {0.9, 1.1};
  const SweepReport r = manipulation_sweep(t.held, pipeline, t.model.input_stats, opt);
  bool tracking = r.failures.empty();
  double worst_ratio = 0.0;
  std::string worst_name, lines;
  for (const auto& e : r.entries) {
    const double bound = e.param == Param::LogF0 ? 0.03 : 0.06;
    tracking = tracking && e.median_relative_error <= bound;
    lines += fmt(" %s x%.1f %.4f;", std::string(name(e.param)).c_str(), e.factor, e.median_relative_error);
    for (int k = 0; k < kNumContinuous; ++k) {
      const auto p = static_cast<Param>(k + 1);
      if (p == e.param) continue;
      const double ratio = e.errors.mse_of(p) / copy.mse_of(p);
      if (ratio > worst_ratio) {
        worst_ratio = ratio;
        worst_name = fmt("%s under %s x%.1f", std::string(name(p)).c_str(), std::string(name(e.param)).c_str(),
                         e.factor);
      }
    }
  }
  return {tracking && worst_ratio <= 2.0,
          fmt("median rel err:%s tracking %s; worst unmanipulated z-MSE ratio to copy %.2f (%s)", lines.c_str(),
              tracking ? "ok" : "FAILED", worst_ratio, worst_name.c_str())};
}

// 9 -----------------------------------------------------------------------------

Outcome format_round_trips() {
  test::TempDir dir("acceptance");
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::string bad;
  double worst_lsb = 0.0;
  for (int trial = 0; trial < 25; ++trial) {
    const auto n = static_cast<Eigen::Index>(rng() % 5000);
    Waveform w;
    w.samples.resize(n);
    for (auto& v : w.samples) v = u(rng);
    write_wav(dir / "a.wav", w);
    const Waveform r = read_wav(dir / "a.wav");
    if (r.size() != n) bad += " wav-length";
    else if (n) worst_lsb = std::max(worst_lsb, (r.samples - w.samples).cwiseAbs().maxCoeff() * 32768.0);
    write_wav(dir / "b.wav", r);
    if (test::read_bytes(dir / "a.wav") != test::read_bytes(dir / "b.wav")) bad += " wav-bytes";

    MelSpectrogram mel;
    mel.values.resize(static_cast<Eigen::Index>(rng() % 200), 80);
    for (auto& v : mel.values.reshaped()) v = static_cast<float>(12.0 * u(rng));
    export_mel(dir / "m.nfmel", mel);
    const MelSpectrogram mb = import_mel(dir / "m.nfmel");
    if (mb.values.rows() != mel.values.rows() ||
        std::memcmp(mb.values.data(), mel.values.data(), sizeof(float) * static_cast<std::size_t>(mel.values.size())))
      bad += " nfmel";

    SpeechParams p;
    p.grid.n_frames = static_cast<Eigen::Index>(1 + rng() % 100);
    p.values.resize(p.grid.n_frames, kNumParams);
    for (auto& v : p.values.reshaped()) v = 1000.0 * u(rng);
    for (Eigen::Index t = 0; t < p.n_frames(); ++t) p.values(t, 0) = rng() % 2 ? 1.0 : 0.0;
    std::stringstream s1, s2;
    write_params_csv(s1, p);
    const std::string text = s1.str();
    const SpeechParams pb = read_params_csv(s1);
    write_params_csv(s2, pb);
    if (s2.str() != text) bad += " params-csv";
    const SpeechParams pf = [&] {
      SpeechParams q = p;
      q.values = q.values.cast<float>().cast<double>();
      std::stringstream s;
      write_params_csv(s, q);
      return read_params_csv(s);
    }();
    if (pf.values.cast<float>() != p.values.cast<float>()) bad += " params-float";
  }

  MapperConfig small;
  small.residual_channels = small.skip_channels = small.post_channels = 8;
  auto model = init_model<float>(small, 3);
  for (float* v : flat(model.weights)) *v += static_cast<float>(0.01 * u(rng));
  model.input_stats.mean = Eigen::VectorXd::Random(kNumContinuous);
  model.input_stats.std = Eigen::VectorXd::Random(kNumContinuous).cwiseAbs().array() + 0.5;
  model.mel_stats.mean = Eigen::VectorXd::Random(80);
  model.mel_stats.std = Eigen::VectorXd::Random(80).cwiseAbs().array() + 0.5;
  save_checkpoint(dir / "a.ckpt", model);
  auto back = load_checkpoint(dir / "a.ckpt");
  save_checkpoint(dir / "b.ckpt", back);
  if (test::read_bytes(dir / "a.ckpt") != test::read_bytes(dir / "b.ckpt")) bad += " checkpoint-bytes";
  const auto wa = flat(model.weights), wb = flat(back.weights);
  if (wa.size() != wb.size()) bad += " checkpoint-size";
  else
    for (std::size_t i = 0; i < wa.size(); ++i)
      if (std::memcmp(wa[i], wb[i], sizeof(float))) {
        bad += " checkpoint-weights";
        break;
      }
  if (!(back.input_stats == model.input_stats) || !(back.mel_stats == model.mel_stats)) bad += " checkpoint-stats";

  ParamErrorReport er;
  for (int k = 0; k < kNumContinuous; ++k) {
    er.mse[static_cast<std::size_t>(k)] = std::abs(u(rng));
    er.median_se[static_cast<std::size_t>(k)] = std::abs(u(rng));
    er.frames[static_cast<std::size_t>(k)] = static_cast<long>(rng() % 1000);
  }
  er.mse[3] = std::nan("");
  er.vuv_disagreement = 0.01;
  er.total_frames = 1234;
  std::stringstream e1, e2;
  write_report(e1, er, ReportFormat::Csv);
  const std::string et = e1.str();
  write_report(e2, read_error_report_csv(e1), ReportFormat::Csv);
  if (e2.str() != et) bad += " error-report";

  SweepReport sr;
  for (double f : {0.9, 1.1})
    for (Param p : {Param::LogF0, Param::F1}) sr.entries.push_back({p, f, er, std::abs(u(rng)), 0});
  std::stringstream s1, s2;
  write_report(s1, sr, ReportFormat::Csv);
  const std::string st = s1.str();
  write_report(s2, read_sweep_report_csv(s1), ReportFormat::Csv);
  if (s2.str() != st) bad += " sweep-report";

  const bool ok = bad.empty() && worst_lsb <= 1.0;
  return {ok, fmt("WAV max error %.3f LSB; NFMEL1, checkpoint, params CSV, reports %s", worst_lsb,
                  bad.empty() ? "bitwise" : ("mismatch:" + bad).c_str())};
}

}  // namespace

int main() {
  int failures = 0;
  auto report = [&](int n, const std::function<Outcome()>& check) {
    Outcome o;
    try {
      o = check();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    if (!o.pass) ++failures;
    std::printf("criterion %d: %s  %s\n", n, o.pass ? "PASS" : "FAIL", o.detail.c_str());
    std::fflush(stdout);
  };

  report(1, formant_oracle);
  report(2, f0_oracle);
  report(3, burg_correctness);
  report(4, pole_round_trip);
  report(5, mapper_gradients);

  Corpus corpus;
  Trained trained;
  ParamErrorReport copy;
  bool corpus_ok = true;
  try {
    corpus = build_corpus();
  } catch (const std::exception& e) {
    corpus_ok = false;
    std::fprintf(stderr, "corpus analysis failed: %s\n", e.what());
  }
  report(6, [&] { return corpus_ok ? desk_training(corpus) : Outcome{false, "no corpus"}; });
  report(7, [&] {
    if (!corpus_ok) return Outcome{false, "no corpus"};
    trained = train_large(corpus);
    return copy_synthesis(trained, copy);
  });
  report(8, [&] {
    return trained.held.empty() ? Outcome{false, "no trained model"} : manipulation_tracking(trained, copy);
  });
  report(9, format_round_trips);
  return failures == 0 ? 0 : 1;
}
