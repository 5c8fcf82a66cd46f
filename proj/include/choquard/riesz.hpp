#pragma once

#include <fftw3.h>

#include <array>
#include <cmath>
#include <complex>
#include <cstring>
#include <memory>
#include <mutex>
#include <span>
#include <string>
#include <vector>

#include "choquard/error.hpp"
#include "choquard/grid.hpp"
#include "choquard/numeric.hpp"

namespace choquard {

namespace detail {

// The FFTW planner is not thread-safe; plan execution on fresh arrays is.
inline std::mutex& fftw_planner_mutex() {
  static std::mutex m;
  return m;
}

template <class T>
struct FftwBuffer {
  explicit FftwBuffer(std::size_t n) : size(n), data(static_cast<T*>(fftw_malloc(sizeof(T) * (n ? n : 1)))) {
    if (!data) throw ComputeError("fftw_malloc failed");
    std::memset(static_cast<void*>(data), 0, sizeof(T) * n);
  }
  ~FftwBuffer() { fftw_free(data); }
  FftwBuffer(const FftwBuffer&) = delete;
  FftwBuffer& operator=(const FftwBuffer&) = delete;
  std::size_t size;
  T* data;
};

inline bool fft_friendly(int m) {
  for (int f : {2, 3, 5, 7})
    while (m % f == 0) m /= f;
  return m == 1;
}

inline int fft_size_at_least(int m) {
  while (!fft_friendly(m)) ++m;
  return m;
}

} // namespace detail

/// Average of |x|^{-mu} over the centered box with side lengths `h` (first
/// `dim` entries). Uses the divergence identity div(x |x|^{-mu}) = (n - mu)|x|^{-mu},
/// which turns the singular volume integral into smooth face integrals.
inline double singular_cell_average(int dim, std::array<double, 3> h, double mu, int q = 48) {
  const auto& rule = gauss_legendre(q);
  double volume = 1.0;
  for (int a = 0; a < dim; ++a) volume *= h[a];
  double flux = 0.0;
  for (int a = 0; a < dim; ++a) {
    const double d = 0.5 * h[a];
    // face x_a = +d (the -d face contributes equally)
    std::array<int, 2> others{};
    int m = 0;
    for (int b = 0; b < dim; ++b)
      if (b != a) others[m++] = b;
    double face = 0.0;
    if (dim == 2) {
      const double hb = 0.5 * h[others[0]];
      for (std::size_t i = 0; i < rule.nodes.size(); ++i) {
        const double y = hb * rule.nodes[i];
        face += rule.weights[i] * hb * std::pow(d * d + y * y, -0.5 * mu);
      }
    } else {
      const double hb = 0.5 * h[others[0]], hc = 0.5 * h[others[1]];
      for (std::size_t i = 0; i < rule.nodes.size(); ++i)
        for (std::size_t j = 0; j < rule.nodes.size(); ++j) {
          const double y = hb * rule.nodes[i], z = hc * rule.nodes[j];
          face += rule.weights[i] * rule.weights[j] * hb * hc * std::pow(d * d + y * y + z * z, -0.5 * mu);
        }
    }
    flux += 2.0 * d * face;
  }
  return flux / ((dim - mu) * volume);
}

struct KernelOptions {
  /// Test hook: replace the singular cell value by zero.
  bool zero_singular_cell = false;
};

/// |x|^{-mu} tabulated on every lattice offset of a grid, with the offset-0
/// entry replaced by the cell average. Immutable and cheap to copy (shared).
class RieszKernel {
public:
  RieszKernel() = default;

  [[nodiscard]] double mu() const { return impl_->mu; }
  [[nodiscard]] const GridPtr& grid() const { return impl_->grid; }
  [[nodiscard]] const std::array<int, 3>& padded_shape() const { return impl_->padded; }
  [[nodiscard]] double singular_cell() const { return impl_->table[impl_->table_index({0, 0, 0})]; }

  /// Kernel value at a lattice offset; |offset_a| < shape_a.
  [[nodiscard]] double value(std::array<int, 3> offset) const { return impl_->table[impl_->table_index(offset)]; }

  friend RieszKernel build_kernel(GridPtr grid, double mu, KernelOptions options);
  friend void convolve_fft_compact(const RieszKernel& kernel, std::span<const double> f, std::span<double> out);

private:
  struct Impl {
    GridPtr grid;
    double mu = 0.0;
    std::array<int, 3> shape{1, 1, 1};
    std::array<int, 3> table_shape{1, 1, 1};
    std::array<int, 3> padded{1, 1, 1};
    std::vector<double> table;
    std::vector<std::complex<double>> spectrum;
    std::size_t padded_real = 0;
    std::size_t padded_complex = 0;
    fftw_plan forward = nullptr;
    fftw_plan backward = nullptr;

    [[nodiscard]] std::size_t table_index(std::array<int, 3> o) const {
      return (static_cast<std::size_t>(o[0] + shape[0] - 1) * table_shape[1] + (o[1] + shape[1] - 1)) *
                 table_shape[2] +
             (o[2] + shape[2] - 1);
    }
    ~Impl() {
      std::lock_guard lock(detail::fftw_planner_mutex());
      if (forward) fftw_destroy_plan(forward);
      if (backward) fftw_destroy_plan(backward);
    }
  };
  std::shared_ptr<const Impl> impl_;
};

inline RieszKernel build_kernel(GridPtr grid, double mu, KernelOptions options = {}) {
  const int dim = grid->dim();
  if (!(mu > 0.0 && mu < dim))
    throw ParameterError("mu must lie in (0, n) with n = " + std::to_string(dim) + ", got " + std::to_string(mu));
  auto impl = std::make_shared<RieszKernel::Impl>();
  impl->grid = grid;
  impl->mu = mu;
  impl->shape = grid->shape();
  for (int a = 0; a < 3; ++a) {
    impl->table_shape[a] = 2 * impl->shape[a] - 1;
    impl->padded[a] = a < dim ? detail::fft_size_at_least(2 * impl->shape[a] - 1) : 1;
  }
  const auto& h = grid->h();
  const auto& ts = impl->table_shape;
  impl->table.assign(static_cast<std::size_t>(ts[0]) * ts[1] * ts[2], 0.0);
  const double cell = options.zero_singular_cell ? 0.0 : singular_cell_average(dim, h, mu);
  for (int i = 0; i < ts[0]; ++i)
    for (int j = 0; j < ts[1]; ++j)
      for (int k = 0; k < ts[2]; ++k) {
        const std::array<int, 3> o{i - impl->shape[0] + 1, j - impl->shape[1] + 1, k - impl->shape[2] + 1};
        double r2 = 0.0;
        for (int a = 0; a < dim; ++a) r2 += (o[a] * h[a]) * (o[a] * h[a]);
        impl->table[impl->table_index(o)] = r2 == 0.0 ? cell : std::pow(r2, -0.5 * mu);
      }

  const auto& P = impl->padded;
  const int last = P[dim - 1];
  impl->padded_real = static_cast<std::size_t>(P[0]) * P[1] * P[2];
  impl->padded_complex = impl->padded_real / last * (last / 2 + 1);
  detail::FftwBuffer<double> real(impl->padded_real);
  detail::FftwBuffer<fftw_complex> cplx(impl->padded_complex);
  const int dims[3] = {P[0], P[1], P[2]};
  {
    std::lock_guard lock(detail::fftw_planner_mutex());
    impl->forward = fftw_plan_dft_r2c(dim, dims, real.data, cplx.data, FFTW_ESTIMATE);
    impl->backward = fftw_plan_dft_c2r(dim, dims, cplx.data, real.data, FFTW_ESTIMATE);
  }
  if (!impl->forward || !impl->backward) throw ComputeError("FFTW planning failed");

  // Wrap offsets into the cyclic padded array.
  std::memset(real.data, 0, sizeof(double) * impl->padded_real);
  for (int i = 0; i < ts[0]; ++i)
    for (int j = 0; j < ts[1]; ++j)
      for (int k = 0; k < ts[2]; ++k) {
        const std::array<int, 3> o{i - impl->shape[0] + 1, j - impl->shape[1] + 1, k - impl->shape[2] + 1};
        std::array<int, 3> w{};
        for (int a = 0; a < 3; ++a) w[a] = (o[a] % P[a] + P[a]) % P[a];
        real.data[(static_cast<std::size_t>(w[0]) * P[1] + w[1]) * P[2] + w[2]] = impl->table[impl->table_index(o)];
      }
  fftw_execute_dft_r2c(impl->forward, real.data, cplx.data);
  impl->spectrum.resize(impl->padded_complex);
  for (std::size_t n = 0; n < impl->padded_complex; ++n) impl->spectrum[n] = {cplx.data[n][0], cplx.data[n][1]};

  RieszKernel kernel;
  kernel.impl_ = std::move(impl);
  return kernel;
}

/// g = prod(h) * sum_j K(x_i - x_j) f_j on compact interior arrays, via
/// zero-padded cyclic convolution (exact linear convolution).
inline void convolve_fft_compact(const RieszKernel& kernel, std::span<const double> f, std::span<double> out) {
  const auto& impl = *kernel.impl_;
  const Grid& g = *impl.grid;
  const auto& P = impl.padded;
  detail::FftwBuffer<double> real(impl.padded_real);
  detail::FftwBuffer<fftw_complex> cplx(impl.padded_complex);
  auto padded_index = [&](std::size_t node) {
    const auto ijk = g.multi_index(node);
    return (static_cast<std::size_t>(ijk[0]) * P[1] + ijk[1]) * P[2] + ijk[2];
  };
  for (std::size_t c = 0; c < f.size(); ++c) real.data[padded_index(g.interior()[c])] = f[c];
  fftw_execute_dft_r2c(impl.forward, real.data, cplx.data);
  for (std::size_t n = 0; n < impl.padded_complex; ++n) {
    const std::complex<double> z(cplx.data[n][0], cplx.data[n][1]);
    const std::complex<double> y = z * impl.spectrum[n];
    cplx.data[n][0] = y.real();
    cplx.data[n][1] = y.imag();
  }
  fftw_execute_dft_c2r(impl.backward, cplx.data, real.data);
  const double scale = g.cell_volume() / static_cast<double>(impl.padded_real);
  for (std::size_t c = 0; c < out.size(); ++c) out[c] = scale * real.data[padded_index(g.interior()[c])];
}

inline Field convolve_fft(const RieszKernel& kernel, const Field& f) {
  if (f.grid()->size() != kernel.grid()->size()) throw ConfigError("kernel and field grids differ");
  std::vector<double> out(f.size());
  convolve_fft_compact(kernel, f.values(), out);
  return Field(f.grid(), std::move(out));
}

inline constexpr std::size_t direct_convolution_node_limit = 100000;

/// O(M^2) reference: compensated double loop over interior node pairs.
inline Field convolve_direct(const RieszKernel& kernel, const Field& f) {
  const Grid& g = *f.grid();
  if (g.size() > direct_convolution_node_limit)
    throw ConfigError("convolve_direct refuses grids with more than " +
                      std::to_string(direct_convolution_node_limit) + " nodes (got " + std::to_string(g.size()) +
                      "); use convolve_fft or a coarser grid");
  std::vector<std::array<int, 3>> ijk(f.size());
  for (std::size_t c = 0; c < f.size(); ++c) ijk[c] = g.multi_index(g.interior()[c]);
  std::vector<double> out(f.size());
  for (std::size_t i = 0; i < f.size(); ++i) {
    CompensatedSum s;
    for (std::size_t j = 0; j < f.size(); ++j) {
      if (f[j] == 0.0) continue;
      s.add(kernel.value({ijk[i][0] - ijk[j][0], ijk[i][1] - ijk[j][1], ijk[i][2] - ijk[j][2]}) * f[j]);
    }
    out[i] = g.cell_volume() * s.value();
  }
  return Field(f.grid(), std::move(out));
}

} // namespace choquard
