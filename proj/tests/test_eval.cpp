#include "neuform/eval.hpp"
#include "neuform/error.hpp"
#include "neuform/synth.hpp"
#include "support.hpp"

#include <doctest.h>

#include <nlohmann/json.hpp>

#include <cmath>
#include <random>
#include <sstream>

using namespace neuform;

namespace {

SpeechParams random_params(Eigen::Index frames, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  SpeechParams p;
  p.grid.n_frames = frames;
  p.values.resize(frames, kNumParams);
  for (Eigen::Index t = 0; t < frames; ++t) {
    p.values(t, 0) = u(rng) < 0.75 ? 1.0 : 0.0;
    p.values(t, 1) = std::log(90.0 + 150.0 * u(rng));
    for (int f = 0; f < 4; ++f) p.values(t, 2 + f) = 500.0 + 900.0 * f + 300.0 * u(rng);
    p.values(t, 6) = -0.004 - 0.003 * u(rng);
    p.values(t, 7) = 800.0 + 1500.0 * u(rng);
    p.values(t, 8) = 0.1 + 20.0 * u(rng);
  }
  return p;
}

SpeechParams jittered(const SpeechParams& p, std::uint64_t seed, double amount = 0.05) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, amount);
  std::bernoulli_distribution flip(0.1);
  SpeechParams q = p;
  for (Eigen::Index t = 0; t < q.n_frames(); ++t) {
    if (flip(rng)) q.values(t, 0) = 1.0 - q.values(t, 0);
    for (int c = 1; c < kNumParams; ++c) q.values(t, c) *= 1.0 + g(rng);
  }
  return q;
}

}  // namespace

TEST_CASE("identical inputs give zero error") {
  const SpeechParams p = random_params(50, 1);
  const NormStats s = compute_norm_stats({p});
  const ParamErrorReport r = copy_synthesis_error(p, p, s);
  for (int i = 0; i < kNumContinuous; ++i) CHECK(r.mse[static_cast<std::size_t>(i)] == 0.0);
  CHECK(r.vuv_disagreement == 0.0);
  CHECK(r.total_frames == 50);
  CHECK_FALSE(r.truncated);
}

TEST_CASE("a one-std offset gives unit z-MSE") {
  const SpeechParams p = random_params(40, 2);
  const NormStats s = compute_norm_stats({p});
  SpeechParams q = p;
  q.col(Param::F1).array() += s.std[index(Param::F1) - 1];
  const ParamErrorReport r = copy_synthesis_error(p, q, s);
  CHECK(r.mse_of(Param::F1) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(r.median_of(Param::F1) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(r.mse_of(Param::F2) == 0.0);
}

TEST_CASE("three-frame pair against a hand accumulation") {
  SpeechParams a = random_params(3, 3);
  SpeechParams b = random_params(3, 4);
  a.col(Param::Vuv) << 1.0, 1.0, 0.0;
  b.col(Param::Vuv) << 1.0, 0.0, 0.0;
  const NormStats s = compute_norm_stats({a, b});
  const ParamErrorReport r = copy_synthesis_error(a, b, s);

  for (int c = 1; c < kNumParams; ++c) {
    const bool voiced_only = c <= index(Param::F4);
    double sum = 0.0;
    int n = 0;
    for (int t = 0; t < 3; ++t) {
      if (voiced_only && !(a.values(t, 0) == 1.0 && b.values(t, 0) == 1.0)) continue;
      const double za = (a.values(t, c) - s.mean[c - 1]) / s.std[c - 1];
      const double zb = (b.values(t, c) - s.mean[c - 1]) / s.std[c - 1];
      sum += (za - zb) * (za - zb);
      ++n;
    }
    const auto k = static_cast<std::size_t>(c - 1);
    CHECK(r.frames[k] == n);
    CHECK(r.mse[k] == doctest::Approx(sum / n).epsilon(1e-12));
  }
  CHECK(r.vuv_disagreement == doctest::Approx(1.0 / 3.0));
}

TEST_CASE("error report is symmetric and affine invariant") {
  const SpeechParams a = random_params(120, 5);
  const SpeechParams b = jittered(a, 6);
  const NormStats s = compute_norm_stats({a});
  const ParamErrorReport ab = copy_synthesis_error(a, b, s);
  const ParamErrorReport ba = copy_synthesis_error(b, a, s);
  for (std::size_t k = 0; k < kNumContinuous; ++k) CHECK(ab.mse[k] == ba.mse[k]);
  CHECK(ab.vuv_disagreement == ba.vuv_disagreement);

  SpeechParams a2 = a, b2 = b;
  for (int c = 1; c < kNumParams; ++c) {
    const double scale = -2.5 + 0.7 * c, shift = 31.0 * c;
    a2.values.col(c) = a.values.col(c) * scale + Eigen::VectorXd::Constant(120, shift);
    b2.values.col(c) = b.values.col(c) * scale + Eigen::VectorXd::Constant(120, shift);
  }
  const ParamErrorReport t = copy_synthesis_error(a2, b2, compute_norm_stats({a2}));
  for (std::size_t k = 0; k < kNumContinuous; ++k)
    CHECK(t.mse[k] == doctest::Approx(ab.mse[k]).epsilon(1e-9));
}

TEST_CASE("frame count tolerance") {
  const SpeechParams a = random_params(30, 7);
  const NormStats s = compute_norm_stats({a});
  SpeechParams b = a;
  b.values.conservativeResize(28, kNumParams);
  b.grid.n_frames = 28;
  const ParamErrorReport r = copy_synthesis_error(a, b, s);
  CHECK(r.truncated);
  CHECK(r.total_frames == 28);
  CHECK(r.mse_of(Param::Energy) == 0.0);

  b.values.conservativeResize(27, kNumParams);
  try {
    copy_synthesis_error(a, b, s);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Data);
  }
}

TEST_CASE("pooled accumulation over utterances") {
  const SpeechParams a = random_params(20, 8), b = random_params(35, 9);
  const SpeechParams ja = jittered(a, 10), jb = jittered(b, 11);
  const NormStats s = compute_norm_stats({a, b});
  ErrorAccumulator acc(s);
  acc.add(a, ja);
  acc.add(b, jb);
  const ParamErrorReport pooled = acc.report();
  const ParamErrorReport ra = copy_synthesis_error(a, ja, s);
  const ParamErrorReport rb = copy_synthesis_error(b, jb, s);
  for (std::size_t k = 0; k < kNumContinuous; ++k) {
    const double n = static_cast<double>(ra.frames[k] + rb.frames[k]);
    CHECK(pooled.frames[k] == ra.frames[k] + rb.frames[k]);
    CHECK(pooled.mse[k] == doctest::Approx((ra.mse[k] * ra.frames[k] + rb.mse[k] * rb.frames[k]) / n));
  }
  CHECK(pooled.total_frames == 55);
}

TEST_CASE("no mutually voiced frames gives NaN, not zero") {
  SpeechParams a = random_params(10, 12);
  SpeechParams b = a;
  a.col(Param::Vuv).setZero();
  const ParamErrorReport r = copy_synthesis_error(a, b, compute_norm_stats({b}));
  CHECK(std::isnan(r.mse_of(Param::F1)));
  CHECK(r.frames[1] == 0);
  CHECK(r.mse_of(Param::Energy) == 0.0);
}

TEST_CASE("widened_config") {
  const VoicePreset low = low_voice_preset();
  const AnalysisConfig f0 = widened_config({}, low, Param::LogF0, 1.3);
  CHECK(f0.f0_range_scale == 1.3);
  CHECK(f0.ceiling_scale == 1.0);
  REQUIRE(f0.preset);
  CHECK(f0.preset->name == "low");
  const AnalysisConfig f2 = widened_config({}, low, Param::F2, 0.7);
  CHECK(f2.ceiling_scale == 0.7);
  CHECK(f2.f0_range_scale == 1.0);
  const AnalysisConfig tilt = widened_config({}, low, Param::Tilt, 1.2);
  CHECK(tilt.ceiling_scale == 1.0);
  CHECK(tilt.f0_range_scale == 1.0);
}

TEST_CASE("sweep without synthesis is exactly zero") {
  // Parameter domain only: the pipeline is never invoked.
  const Pipeline pipeline(init_model<float>(MapperConfig{}, 1));
  std::vector<SweepUtterance> utts;
  for (int i = 0; i < 3; ++i) {
    SweepUtterance u;
    u.analysis.params = random_params(30, 20 + static_cast<std::uint64_t>(i));
    utts.push_back(u);
  }
  SweepOptions opt;
  opt.synthesize = false;
  const SweepReport r = manipulation_sweep(utts, pipeline, compute_norm_stats({utts[0].analysis.params}), opt);
  CHECK(r.entries.size() == 8 * 6);
  CHECK(r.failures.empty());
  for (const auto& e : r.entries) {
    CHECK(e.median_relative_error == 0.0);
    for (std::size_t k = 0; k < kNumContinuous; ++k) CHECK(e.errors.mse[k] == 0.0);
  }
  CHECK(r.entries.front().factor == 0.7);
  CHECK(r.entries.back().factor == 1.3);
  CHECK(kPaperFactors == std::vector<double>{0.7, 0.8, 0.9, 1.1, 1.2, 1.3});

  SweepOptions bad = opt;
  bad.params = {Param::Vuv};
  CHECK_THROWS_AS(manipulation_sweep(utts, pipeline, compute_norm_stats({utts[0].analysis.params}), bad), Error);
}

TEST_CASE("identity sweep reproduces the copy-synthesis report bitwise") {
  std::mt19937_64 rng(77);
  std::vector<Analysis> train_set;
  for (int i = 0; i < 8; ++i) train_set.push_back(analyze(synth::vowel(synth::random_vowel(rng))));
  const PreparedData prep = prepare_training_data(train_set);
  auto model = init_model<float>(MapperConfig{}, 3);
  model.input_stats = prep.input_stats;
  model.mel_stats = prep.mel_stats;
  TrainConfig tc;
  tc.max_updates = 300;
  tc.learning_rate = 1e-3;
  GriffinLimConfig gl;
  gl.n_iters = 20;
  const Pipeline pipeline(train(model, prep.pairs, tc).model, gl);

  std::vector<SweepUtterance> utts;
  for (int i = 0; i < 2; ++i) utts.push_back({train_set[static_cast<std::size_t>(i)]});
  const ParamErrorReport copy = copy_synthesis_report(utts, pipeline, prep.input_stats);
  SweepOptions opt;
  opt.params = {Param::LogF0, Param::F1, Param::Energy};
  opt.factors = {1.0};
  const SweepReport sweep = manipulation_sweep(utts, pipeline, prep.input_stats, opt);
  REQUIRE(sweep.entries.size() == 3);
  CHECK(sweep.failures.empty());
  for (const auto& e : sweep.entries) {
    for (std::size_t k = 0; k < kNumContinuous; ++k) {
      const double a = e.errors.mse[k], b = copy.mse[k];
      CHECK(((std::isnan(a) && std::isnan(b)) || std::memcmp(&a, &b, sizeof a) == 0));
    }
    CHECK(e.errors.vuv_disagreement == copy.vuv_disagreement);
    CHECK(e.errors.total_frames == copy.total_frames);
  }

  // Two workers give the same answer as one.
  const ParamErrorReport par = copy_synthesis_report(utts, pipeline, prep.input_stats, 2);
  CHECK(par.mse == copy.mse);
}

TEST_CASE("error report CSV and JSON") {
  ParamErrorReport r = copy_synthesis_error(random_params(60, 30), jittered(random_params(60, 30), 31),
                                            compute_norm_stats({random_params(60, 30)}));
  r.mse[7] = std::numeric_limits<double>::quiet_NaN();
  std::stringstream csv;
  write_report(csv, r, ReportFormat::Csv);
  const std::string text = csv.str();
  CHECK(text.rfind("parameter,mse,median_se,vuv_disagreement,frames\nlog_f0,", 0) == 0);
  CHECK(text.find("\nenergy,nan,") != std::string::npos);

  const ParamErrorReport back = read_error_report_csv(csv);
  std::stringstream again;
  write_report(again, back, ReportFormat::Csv);
  CHECK(again.str() == text);
  for (std::size_t k = 0; k < 7; ++k) CHECK(back.mse[k] == doctest::Approx(r.mse[k]).epsilon(1e-8));
  CHECK(std::isnan(back.mse[7]));
  CHECK(back.frames == r.frames);

  std::stringstream js;
  write_report(js, r, ReportFormat::Json);
  const auto j = nlohmann::json::parse(js.str());
  REQUIRE(j["parameters"].size() == 8);
  for (std::size_t k = 0; k < 7; ++k) {
    CHECK(j["parameters"][k]["parameter"] == std::string(kParamNames[k + 1]));
    CHECK(j["parameters"][k]["mse"].get<double>() == r.mse[k]);
    CHECK(j["parameters"][k]["frames"].get<long>() == r.frames[k]);
    CHECK(format_g9(j["parameters"][k]["mse"].get<double>()) == format_g9(back.mse[k]));
  }
  CHECK(j["parameters"][7]["mse"].is_null());
  CHECK(j["vuv_disagreement"].get<double>() == r.vuv_disagreement);

  std::stringstream junk("parameter,mse\n");
  CHECK_THROWS_AS(read_error_report_csv(junk), Error);
}

TEST_CASE("sweep report CSV and JSON") {
  SweepReport empty;
  std::stringstream e;
  write_report(e, empty, ReportFormat::Csv);
  CHECK(e.str() ==
        "parameter,factor,median_relative_error,log_f0_mse,f1_mse,f2_mse,f3_mse,f4_mse,tilt_mse,"
        "centroid_mse,energy_mse,vuv_disagreement,frames,failures\n");
  CHECK(read_sweep_report_csv(e).entries.empty());

  SweepReport r;
  for (Param p : {Param::LogF0, Param::F2}) {
    for (double f : {0.9, 1.1}) {
      SweepEntry entry;
      entry.param = p;
      entry.factor = f;
      entry.median_relative_error = 0.0123456789123 * f;
      entry.errors = copy_synthesis_error(random_params(40, 40), jittered(random_params(40, 40), 41),
                                          compute_norm_stats({random_params(40, 40)}));
      entry.failures = p == Param::F2 ? 1 : 0;
      r.entries.push_back(entry);
    }
  }
  r.failures.push_back({3, Param::F2, 0.9, "no voiced frames"});
  std::stringstream csv;
  write_report(csv, r, ReportFormat::Csv);
  const std::string text = csv.str();
  const SweepReport back = read_sweep_report_csv(csv);
  REQUIRE(back.entries.size() == 4);
  std::stringstream again;
  write_report(again, back, ReportFormat::Csv);
  CHECK(again.str() == text);
  CHECK(back.entries[2].param == Param::F2);
  CHECK(back.entries[2].failures == 1);

  std::stringstream js;
  write_report(js, r, ReportFormat::Json);
  const auto j = nlohmann::json::parse(js.str());
  REQUIRE(j["entries"].size() == 4);
  for (std::size_t i = 0; i < 4; ++i) {
    const auto& je = j["entries"][i];
    CHECK(je["parameter"] == std::string(name(r.entries[i].param)));
    CHECK(je["factor"].get<double>() == r.entries[i].factor);
    CHECK(format_g9(je["median_relative_error"].get<double>()) == format_g9(back.entries[i].median_relative_error));
    for (int k = 0; k < kNumContinuous; ++k)
      CHECK(format_g9(je[std::string(kParamNames[static_cast<std::size_t>(k + 1)]) + "_mse"].get<double>()) ==
            format_g9(back.entries[i].errors.mse[static_cast<std::size_t>(k)]));
    CHECK(je["frames"].get<long>() == back.entries[i].errors.total_frames);
  }
  CHECK(j["failures"][0]["message"] == "no voiced frames");

  test::TempDir dir("report");
  write_report(dir / "s.csv", r, ReportFormat::Csv);
  CHECK(std::string(test::read_bytes(dir / "s.csv").data(), text.size()) == text);
  CHECK_THROWS_AS(write_report(dir / "no/dir/s.csv", r, ReportFormat::Csv), Error);
}
