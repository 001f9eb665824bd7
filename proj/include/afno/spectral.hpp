#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "afno/tensor.hpp"

namespace afno::spectral {

/// In-place unnormalized DFT of any length (radix-2, or Bluestein for other
/// lengths). `inverse` flips the exponent sign without scaling.
void fft(std::span<cdouble> data, bool inverse = false);

constexpr std::size_t half_width(std::size_t w) { return w / 2 + 1; }

/// Half-plane spectrum of a real token grid: data is complex
/// [..., height, full_width/2 + 1, d].
struct Spectrum {
  std::size_t height = 0;
  std::size_t full_width = 0;
  Tensor data;
};

/// Unnormalized 2D real FFT over axes (-3, -2) of a real [..., h, w, d]
/// tensor, applied independently per channel and leading index.
Spectrum rfft2(const Tensor& x);

/// Inverse of rfft2 with 1/(h*w) scaling. Columns are read with the usual
/// complex-to-real convention: the half spectrum is extended by Hermitian
/// symmetry along the width axis and the imaginary parts of the DC (and, for
/// even w, Nyquist) columns are dropped after the height-axis transform, so
/// the output is real for any input spectrum.
Tensor irfft2(const Spectrum& s);
Tensor irfft2(const Tensor& half_spectrum, std::size_t full_width);

/// Direct O((hw)^2) full-plane DFT of a real or complex [..., h, w, d] tensor.
/// Not differentiable; used as an independent reference.
Tensor naive_dft2(const Tensor& x);
/// Direct inverse of naive_dft2, including the 1/(h*w) factor.
Tensor naive_idft2(const Tensor& x);

/// Signed frequency of index i on an axis of length n (DFT wrap-around).
inline long signed_frequency(std::size_t i, std::size_t n) {
  return i <= n / 2 ? static_cast<long>(i) : static_cast<long>(i) - static_cast<long>(n);
}

/// Low-frequency bins kept by hard mode truncation.
struct ModeSelection {
  std::size_t height = 0;
  std::size_t full_width = 0;
  std::vector<std::size_t> rows;  // ascending half-spectrum row indices
  std::size_t cols = 0;           // columns 0..cols-1 of the half spectrum

  std::size_t kept() const { return rows.size() * cols; }
  std::size_t total() const { return height * half_width(full_width); }
};

/// Rows whose wrapped distance to DC is below ceil(keep*h) (so a row and its
/// negative-frequency partner are kept together) and the lowest
/// ceil(keep*(w/2+1)) half-spectrum columns.
ModeSelection select_modes(std::size_t h, std::size_t w, double keep_fraction);

struct ReducedSpectrum {
  ModeSelection modes;
  Tensor data;  // complex [..., rows.size(), cols, d]
};

ReducedSpectrum truncate_modes(const Spectrum& s, double keep_fraction);
ReducedSpectrum truncate_modes(const Spectrum& s, const ModeSelection& modes);
/// Scatters the kept bins back into a zero [..., h, w/2+1, d] spectrum.
Spectrum pad_modes(const ReducedSpectrum& reduced);
Spectrum pad_modes(const ReducedSpectrum& reduced, std::size_t h, std::size_t w);

/// Band-limited resampling of a real [..., h, w, d] grid to new_h x new_w by
/// zero-padding (or cropping) its spectrum. Nyquist bins of even source axes
/// are dropped. Not differentiable.
Tensor fourier_resample(const Tensor& x, std::size_t new_h, std::size_t new_w);

}  // namespace afno::spectral
