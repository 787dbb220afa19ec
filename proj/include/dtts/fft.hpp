// Thin thread-safe wrapper over FFTW real transforms. Plans are created once
// per size under a lock and executed with the new-array interface.
#pragma once

#include <complex>
#include <span>
#include <vector>

namespace dtts {

class RealFft {
 public:
  explicit RealFft(int size);

  int size() const { return size_; }
  int bins() const { return size_ / 2 + 1; }
  /// in.size() == size(), out.size() == bins().
  void forward(std::span<const double> in, std::span<std::complex<double>> out) const;
  /// Unnormalized inverse: forward followed by inverse scales by size().
  void inverse(std::span<const std::complex<double>> in, std::span<double> out) const;

 private:
  int size_;
  void* forward_plan_;
  void* inverse_plan_;
};

/// Magnitude spectrum of a whole signal, zero-padded to `size` when larger.
std::vector<double> magnitude_spectrum(std::span<const double> signal, int size);

}  // namespace dtts
