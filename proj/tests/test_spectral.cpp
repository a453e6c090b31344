#include "neuform/spectral.hpp"
#include "neuform/error.hpp"
#include "neuform/synth.hpp"

#include <doctest.h>

#include <cmath>
#include <numbers>

using namespace neuform;

namespace {

Waveform samples_of(Eigen::Index n, double value = 0.0) {
  Waveform w;
  w.samples = Eigen::VectorXd::Constant(n, value);
  return w;
}

Eigen::VectorXd bin_frequencies(int n_bins, int sr, int n_fft) {
  return Eigen::VectorXd::LinSpaced(n_bins, 0.0, (n_bins - 1) * static_cast<double>(sr) / n_fft);
}

}  // namespace

TEST_CASE("frame counts follow the no-padding rule") {
  CHECK(FrameGrid::count_frames(22050, 1024, 256) == 83);
  CHECK(FrameGrid::count_frames(1024, 1024, 256) == 1);
  CHECK(FrameGrid::count_frames(1023, 1024, 256) == 0);
  CHECK(FrameGrid::count_frames(0, 1024, 256) == 0);

  const Waveform w = synth::sine(100.0, 1.0);
  const FrameGrid g = FrameGrid::for_waveform(w);
  const Eigen::MatrixXd frames = frame_signal(w, g);
  CHECK(frames.rows() == 83);
  CHECK(frames.cols() == 1024);
  CHECK(frames.row(5).transpose() == w.samples.segment(5 * 256, 1024));
  CHECK(frame_signal(samples_of(1023), FrameGrid::for_waveform(samples_of(1023))).rows() == 0);
}

TEST_CASE("stft_magnitude: DC, zero and on-bin sine") {
  const FrameGrid g = FrameGrid::for_waveform(samples_of(1024));
  Eigen::MatrixXd dc = Eigen::MatrixXd::Ones(1, 1024);
  const auto s = stft_magnitude(dc, g).values;
  CHECK(s.cols() == 513);
  CHECK(s(0, 0) == doctest::Approx(hann_periodic(1024).sum()));
  CHECK(s(0, 0) == doctest::Approx(512.0));
  CHECK(s.row(0).tail(510).maxCoeff() < 1e-9);

  Eigen::MatrixXd zero = Eigen::MatrixXd::Zero(1, 1024);
  CHECK(stft_magnitude(zero, g).values.maxCoeff() == 0.0);

  Eigen::MatrixXd sine(1, 1024);
  for (int n = 0; n < 1024; ++n) sine(0, n) = std::sin(2.0 * std::numbers::pi * 32.0 * n / 1024.0);
  Eigen::Index peak;
  stft_magnitude(sine, g).values.row(0).maxCoeff(&peak);
  CHECK(peak == 32);
}

TEST_CASE("Parseval through the windowed FFT") {
  const Waveform w = synth::white_noise(0.1, 0.5, 4);
  const FrameGrid g = FrameGrid::for_waveform(w);
  const Eigen::MatrixXd frames = frame_signal(w, g);
  const Eigen::VectorXd win = hann_periodic(1024);
  const auto spec = stft_magnitude(frames, g).values;
  for (Eigen::Index t = 0; t < frames.rows(); ++t) {
    const double time = frames.row(t).transpose().cwiseProduct(win).squaredNorm();
    // One-sided spectrum: interior bins count twice.
    double freq = spec(t, 0) * spec(t, 0) + spec(t, 512) * spec(t, 512);
    freq += 2.0 * spec.row(t).segment(1, 511).squaredNorm();
    CHECK(freq / 1024.0 == doctest::Approx(time).epsilon(1e-9));
  }
}

TEST_CASE("hann windows") {
  const Eigen::VectorXd p = hann_periodic(8);
  CHECK(p[0] == 0.0);
  CHECK(p[4] == doctest::Approx(1.0));
  const Eigen::VectorXd s = hann_symmetric(9);
  CHECK(s[0] == doctest::Approx(0.0));
  CHECK(s[8] == doctest::Approx(0.0));
  CHECK(s[4] == doctest::Approx(1.0));
}

TEST_CASE("istft inverts stft away from the edges") {
  const Waveform w = synth::white_noise(0.5, 0.5, 11);
  const FrameGrid g = FrameGrid::for_waveform(w);
  const Eigen::VectorXd y = istft(stft(w.samples, g), g);
  REQUIRE(y.size() == g.span());
  const Eigen::Index a = 1024, n = g.span() - 2048;
  CHECK((y.segment(a, n) - w.samples.segment(a, n)).cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("mel scale and filterbank construction") {
  CHECK(hz_to_mel(0.0) == 0.0);
  CHECK(hz_to_mel(700.0) == doctest::Approx(2595.0 * std::log10(2.0)));
  CHECK(hz_to_mel(700.0) == doctest::Approx(781.17).epsilon(1e-5));
  CHECK(mel_to_hz(hz_to_mel(3210.0)) == doctest::Approx(3210.0));

  const MelBasis b = mel_filterbank();
  REQUIRE(b.weights.rows() == 80);
  REQUIRE(b.weights.cols() == 513);
  CHECK(b.weights.minCoeff() >= 0.0);
  Eigen::Index prev = -1;
  for (Eigen::Index m = 0; m < 80; ++m) {
    CHECK(b.weights.row(m).sum() > 0.0);
    Eigen::Index center;
    b.weights.row(m).maxCoeff(&center);
    CHECK(center >= prev);
    prev = center;
  }
  // Nothing above f_max.
  const Eigen::Index top = static_cast<Eigen::Index>(std::ceil(8000.0 * 1024 / 22050.0)) + 1;
  CHECK(b.weights.rightCols(513 - top).maxCoeff() == 0.0);

  CHECK_THROWS_AS(mel_filterbank(1024, 80, 100.0, 50.0), Error);
  CHECK_THROWS_AS(mel_filterbank(1024, 80, 0.0, 12000.0), Error);
}

TEST_CASE("mel_spectrogram: floor, log linearity and impulse support") {
  const MelBasis b = mel_filterbank();
  MagnitudeSpectrogram s;
  s.values = Eigen::MatrixXd::Zero(3, 513);
  const auto zero = mel_spectrogram(s, b).values;
  CHECK((zero.array() == std::log(kMelFloor)).all());
  CHECK(std::log(1e-5) == doctest::Approx(-11.5129).epsilon(1e-5));

  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0.5, 2.0);
  for (auto& v : s.values.reshaped()) v = u(rng);
  const auto a = mel_spectrogram(s, b).values;
  MagnitudeSpectrogram s10 = s;
  s10.values *= 10.0;
  const auto c = mel_spectrogram(s10, b).values;
  CHECK(((c - a).array() - static_cast<float>(std::log(10.0))).abs().maxCoeff() < 1e-5);

  MagnitudeSpectrogram imp;
  imp.values = Eigen::MatrixXd::Zero(1, 513);
  imp.values(0, 100) = 1.0;
  const auto m = mel_spectrogram(imp, b).values;
  for (Eigen::Index k = 0; k < 80; ++k) CHECK((m(0, k) > std::log(kMelFloor)) == (b.weights(k, 100) > 0.0));
  CHECK((m.array() > std::log(kMelFloor)).count() >= 1);
}

TEST_CASE("mel_spectrogram is monotone in every magnitude") {
  const MelBasis b = mel_filterbank();
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  MagnitudeSpectrogram s;
  s.values.resize(4, 513);
  for (auto& v : s.values.reshaped()) v = u(rng);
  MagnitudeSpectrogram t = s;
  for (auto& v : t.values.reshaped()) v += u(rng);
  CHECK(((mel_spectrogram(t, b).values - mel_spectrogram(s, b).values).array() >= 0.0f).all());
}

TEST_CASE("spectral_tilt") {
  const int sr = 22050;
  CHECK(spectral_tilt(Eigen::VectorXd::Constant(513, 3.0), sr) == doctest::Approx(0.0));
  CHECK(spectral_tilt(Eigen::VectorXd::Zero(513), sr) == 0.0);

  const Eigen::VectorXd f = bin_frequencies(513, sr, 1024);
  const Eigen::VectorXd mag = (-0.006 * f / 20.0).unaryExpr([](double db) { return std::pow(10.0, db); });
  CHECK(spectral_tilt(mag, sr) == doctest::Approx(-0.006).epsilon(1e-9));
}

TEST_CASE("spectral_centroid") {
  const int sr = 22050;
  Eigen::VectorXd m = Eigen::VectorXd::Zero(513);
  m[46] = 2.0;
  CHECK(spectral_centroid(m, sr) == doctest::Approx(46.0 * sr / 1024.0));
  CHECK(spectral_centroid(m, sr) == doctest::Approx(990.5).epsilon(1e-4));

  // Bins whose centres are a symmetric pair around 2000 Hz.
  const double df = static_cast<double>(sr) / 1024.0;
  Eigen::VectorXd pair = Eigen::VectorXd::Zero(513);
  pair[40] = 1.0;
  pair[146] = 1.0;
  CHECK(spectral_centroid(pair, sr) == doctest::Approx(93.0 * df));

  CHECK(spectral_centroid(Eigen::VectorXd::Zero(513), sr) == 0.0);
}

TEST_CASE("frame_energy") {
  CHECK(frame_energy(Eigen::VectorXd::Zero(1024)) == 0.0);
  CHECK(frame_energy(Eigen::VectorXd::Constant(1024, 0.5)) == 256.0);
  Eigen::VectorXd s(1024);
  for (int n = 0; n < 1024; ++n) s[n] = std::sin(2.0 * std::numbers::pi * 8.0 * n / 1024.0);
  CHECK(frame_energy(s) == doctest::Approx(512.0));
}
