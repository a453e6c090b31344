#pragma once

#include "neuform/audio_io.hpp"

#include <Eigen/Core>

namespace neuform {

/// Analysis frame layout shared by every per-frame trajectory.
struct FrameGrid {
  int win_length = 1024;
  int hop_length = 256;
  int sample_rate = kWorkingRate;
  Eigen::Index n_frames = 0;

  /// Frame count for a signal of n_samples with no padding.
  static Eigen::Index count_frames(Eigen::Index n_samples, int win_length, int hop_length);

  /// Grid with the default geometry sized for the given waveform.
  static FrameGrid for_waveform(const Waveform& waveform, int win_length = 1024,
                                int hop_length = 256);

  Eigen::Index frame_start(Eigen::Index t) const { return t * hop_length; }
  double frame_center(Eigen::Index t) const {
    return static_cast<double>(t * hop_length) + 0.5 * win_length;
  }
  /// Number of samples spanned by the grid: (n_frames - 1) * hop + win.
  Eigen::Index span() const {
    return n_frames == 0 ? 0 : (n_frames - 1) * hop_length + win_length;
  }
  int n_fft() const { return win_length; }
  int n_bins() const { return win_length / 2 + 1; }

  friend bool operator==(const FrameGrid&, const FrameGrid&) = default;
};

/// Magnitude STFT, one row per frame, n_fft/2 + 1 columns.
struct MagnitudeSpectrogram {
  Eigen::MatrixXd values;
  FrameGrid grid;
};

struct MelBasis {
  Eigen::MatrixXd weights;  // n_mels x (n_fft/2 + 1)
  int n_fft = 1024;
  int n_mels = 80;
  double f_min = 0.0;
  double f_max = 8000.0;
  int sample_rate = kWorkingRate;
};

inline constexpr float kMelFloor = 1e-5f;

/// Natural-log mel energies, one row per frame.
struct MelSpectrogram {
  Eigen::MatrixXf values;  // n_frames x n_mels
  FrameGrid grid;

  Eigen::Index n_frames() const { return values.rows(); }
  Eigen::Index n_mels() const { return values.cols(); }
};

enum class TiltScale { Decibel, Linear };

/// Rows are frames of win_length samples starting at t * hop_length.
Eigen::MatrixXd frame_signal(const Waveform& waveform, const FrameGrid& grid);

/// Periodic Hann window of the given length.
Eigen::VectorXd hann_periodic(Eigen::Index length);
/// Symmetric Hann window (zero at both ends).
Eigen::VectorXd hann_symmetric(Eigen::Index length);

/// Complex STFT of Hann-windowed frames, one row per frame.
Eigen::MatrixXcd stft(const Eigen::VectorXd& signal, const FrameGrid& grid);

/// Least-squares inverse of stft(): windowed overlap-add divided by the summed
/// squared window (floored at a tenth of its maximum near the edges).
/// Output length is grid.span().
Eigen::VectorXd istft(const Eigen::MatrixXcd& spectrum, const FrameGrid& grid);

MagnitudeSpectrogram stft_magnitude(const Eigen::MatrixXd& frames, const FrameGrid& grid);
MagnitudeSpectrogram stft_magnitude(const Waveform& waveform, const FrameGrid& grid);

double hz_to_mel(double hz);
double mel_to_hz(double mel);

/// HTK-scale triangular filters with Slaney area normalization.
MelBasis mel_filterbank(int n_fft = 1024, int n_mels = 80, double f_min = 0.0,
                        double f_max = 8000.0, int sample_rate = kWorkingRate);

MelSpectrogram mel_spectrogram(const MagnitudeSpectrogram& spec, const MelBasis& basis);

/// Least-squares slope of the log (or linear) magnitude against frequency in Hz.
double spectral_tilt(const Eigen::Ref<const Eigen::VectorXd>& magnitude, int sample_rate,
                     TiltScale scale = TiltScale::Decibel);

double spectral_centroid(const Eigen::Ref<const Eigen::VectorXd>& magnitude, int sample_rate);

/// Sum of squared (unwindowed) samples.
double frame_energy(const Eigen::Ref<const Eigen::VectorXd>& frame);

}  // namespace neuform
