#include "dtts/fft.hpp"

#include <fftw3.h>

#include <algorithm>
#include <map>
#include <mutex>
#include <stdexcept>
#include <utility>

namespace dtts {
namespace {

struct Plans {
  fftw_plan forward;
  fftw_plan inverse;
};

std::mutex& plan_mutex() {
  static std::mutex m;
  return m;
}

// Plans live for the process lifetime.
Plans plans_for(int n) {
  static std::map<int, Plans> cache;
  std::lock_guard<std::mutex> lock(plan_mutex());
  auto it = cache.find(n);
  if (it != cache.end()) return it->second;
  std::vector<double> real(static_cast<std::size_t>(n));
  std::vector<std::complex<double>> spec(static_cast<std::size_t>(n / 2 + 1));
  const unsigned flags = FFTW_ESTIMATE | FFTW_UNALIGNED;
  Plans p{
      fftw_plan_dft_r2c_1d(n, real.data(), reinterpret_cast<fftw_complex*>(spec.data()), flags),
      fftw_plan_dft_c2r_1d(n, reinterpret_cast<fftw_complex*>(spec.data()), real.data(), flags)};
  if (p.forward == nullptr || p.inverse == nullptr) {
    throw std::runtime_error("FFTW plan creation failed");
  }
  cache.emplace(n, p);
  return p;
}

}  // namespace

RealFft::RealFft(int size) : size_(size) {
  if (size <= 0) throw std::invalid_argument("FFT size must be positive");
  Plans p = plans_for(size);
  forward_plan_ = p.forward;
  inverse_plan_ = p.inverse;
}

void RealFft::forward(std::span<const double> in,
                      std::span<std::complex<double>> out) const {
  if (static_cast<int>(in.size()) != size_ || static_cast<int>(out.size()) != bins()) {
    throw std::invalid_argument("RealFft::forward: buffer size mismatch");
  }
  // r2c does not modify its input.
  fftw_execute_dft_r2c(static_cast<fftw_plan>(forward_plan_),
                       const_cast<double*>(in.data()),
                       reinterpret_cast<fftw_complex*>(out.data()));
}

void RealFft::inverse(std::span<const std::complex<double>> in,
                      std::span<double> out) const {
  if (static_cast<int>(out.size()) != size_ || static_cast<int>(in.size()) != bins()) {
    throw std::invalid_argument("RealFft::inverse: buffer size mismatch");
  }
  // c2r destroys its input, so work on a copy.
  std::vector<std::complex<double>> scratch(in.begin(), in.end());
  fftw_execute_dft_c2r(static_cast<fftw_plan>(inverse_plan_),
                       reinterpret_cast<fftw_complex*>(scratch.data()), out.data());
}

std::vector<double> magnitude_spectrum(std::span<const double> signal, int size) {
  if (static_cast<int>(signal.size()) > size) {
    throw std::invalid_argument("magnitude_spectrum: signal longer than FFT");
  }
  RealFft fft(size);
  std::vector<double> buf(static_cast<std::size_t>(size), 0.0);
  std::copy(signal.begin(), signal.end(), buf.begin());
  std::vector<std::complex<double>> spec(static_cast<std::size_t>(fft.bins()));
  fft.forward(buf, spec);
  std::vector<double> mag(spec.size());
  for (std::size_t i = 0; i < spec.size(); ++i) mag[i] = std::abs(spec[i]);
  return mag;
}

}  // namespace dtts
