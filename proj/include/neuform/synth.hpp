#pragma once

#include "neuform/audio_io.hpp"

#include <array>
#include <cstdint>
#include <random>
#include <vector>

namespace neuform::synth {

/// Constructed source-filter vowel: band-limited pulse train through a cascade
/// of four second-order resonators. Formants move linearly between targets.
struct VowelSpec {
  double duration = 1.0;  // seconds
  double f0_start = 120.0;
  double f0_end = 120.0;
  double f0_vibrato_hz = 0.0;     // slow sinusoidal F0 modulation rate
  double f0_vibrato_depth = 0.0;  // relative depth
  std::vector<std::array<double, 4>> formants{{600.0, 1200.0, 2500.0, 3400.0}};
  std::array<double, 4> bandwidths{80.0, 90.0, 120.0, 150.0};
  // Fixed higher resonances after the four moving formants, as (Hz, bandwidth).
  std::vector<std::array<double, 2>> upper_formants;
  double source_lowpass = 0.97;  // one-pole glottal/radiation lowpass, -6 dB/oct above ~100 Hz
  double peak = 0.5;
  double fade_ms = 20.0;
  double tremolo_hz = 0.0;
  double tremolo_depth = 0.0;
  double noise_level = 0.0;  // additive aspiration noise relative to the peak
  std::uint64_t seed = 0;
  int sample_rate = kWorkingRate;
};

Waveform vowel(const VowelSpec& spec);

/// Band-limited pulse train (sum of equal-amplitude cosine harmonics) at constant F0.
Waveform pulse_train(double f0, double duration, int sample_rate = kWorkingRate, double peak = 0.5);

Waveform sine(double frequency, double duration, double amplitude = 0.5,
              int sample_rate = kWorkingRate);

Waveform white_noise(double duration, double amplitude, std::uint64_t seed,
                     int sample_rate = kWorkingRate);

/// Randomized vowel with a gliding F0, moving formants, a fixed fifth formant
/// and an amplitude envelope, used for desk-scale training corpora.
VowelSpec random_vowel(std::mt19937_64& rng, double f0_low = 90.0, double f0_high = 220.0);

/// Vowel with constant F0 and formants drawn from typical adult ranges.
VowelSpec random_steady_vowel(std::mt19937_64& rng, double f0_low = 90.0, double f0_high = 220.0);

}  // namespace neuform::synth
