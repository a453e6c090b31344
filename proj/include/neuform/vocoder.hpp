#pragma once

#include "neuform/audio_io.hpp"
#include "neuform/spectral.hpp"

#include <Eigen/Core>

#include <filesystem>
#include <vector>

namespace neuform {

struct GriffinLimConfig {
  int n_iters = 60;
  double momentum = 0.99;  // 0 gives the classic algorithm
  double peak = 0.95;      // output peak after normalization; <= 0 disables it

  void validate() const;
};

/// Non-negative least-squares inversion of the mel projection: the clipped
/// filterbank pseudo-inverse solution refined by `iterations` steps of
/// accelerated projected gradient. Entries sitting at the log floor are
/// treated as carrying no energy.
MagnitudeSpectrogram mel_to_linear(const MelSpectrogram& mel, const MelBasis& basis, int iterations = 0);

/// Phase reconstruction by alternating projections (fast Griffin-Lim with
/// momentum), starting from zero phase. If `convergence` is given it receives
/// the spectral convergence of every iterate followed by that of the output
/// (before peak normalization).
Waveform griffin_lim(const MagnitudeSpectrogram& magnitude, const GriffinLimConfig& cfg = {},
                     std::vector<double>* convergence = nullptr);

/// || |STFT(x)| - S ||_F / ||S||_F on the magnitude's grid.
double spectral_convergence(const MagnitudeSpectrogram& magnitude, const Eigen::VectorXd& signal);

/// Per-frame gain towards a target energy trajectory, sqrt(target / extracted)
/// clamped to [1/8, 8] and interpolated linearly between frame centres.
Waveform match_energy(const Waveform& waveform, const Eigen::Ref<const Eigen::VectorXd>& target_energy,
                      const FrameGrid& grid);

/// NFMEL1: "NFMEL1", u32 n_frames, u32 n_mels, u32 sample_rate, u32 hop_length
/// (all little-endian), then n_frames * n_mels float32 LE values, frame-major.
void export_mel(const std::filesystem::path& path, const MelSpectrogram& mel);
MelSpectrogram import_mel(const std::filesystem::path& path);

}  // namespace neuform
