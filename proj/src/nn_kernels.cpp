#include <algorithm>
#include <cmath>
#include <string>

#include "ctf/nn.hpp"

namespace ctf::nn {
namespace {

constexpr int kRowTile = 16;
constexpr int kSampleTile = 64;

void check_input(const Mlp& net, const Matrix& x) {
  if (x.cols != net.shape.input) {
    throw ContractError("forward_batch: expected input width " + std::to_string(net.shape.input) + ", got " +
                        std::to_string(x.cols));
  }
}

void check_layer_finite(const Matrix& m, int layer) {
  bool ok = true;
#pragma omp parallel for reduction(&& : ok) schedule(static)
  for (std::size_t k = 0; k < m.data.size(); ++k) ok = ok && std::isfinite(m.data[k]);
  if (!ok) throw NumericError("non-finite activation in layer " + std::to_string(layer));
}

// z = b + a W for one sample; identical arithmetic to forward().
inline void dense_row(const double* a, int in, const double* w, const double* b, int out, double* z) {
  for (int j = 0; j < out; ++j) z[j] = b[j];
  for (int i = 0; i < in; ++i) {
    const double ai = a[i];
    if (ai == 0.0) continue;
    const double* wi = w + static_cast<std::size_t>(i) * out;
    for (int j = 0; j < out; ++j) z[j] += ai * wi[j];
  }
}

void prepare(const Mlp& net, const Matrix& x, BatchCache& cache) {
  check_input(net, x);
  cache.acts.resize(net.num_layers() + 1);
  cache.acts[0] = x;
  for (int l = 0; l < net.num_layers(); ++l) {
    Matrix& z = cache.acts[l + 1];
    if (z.rows != x.rows || z.cols != net.layer_out(l)) z = Matrix(x.rows, net.layer_out(l));
  }
}

}  // namespace

void forward_batch(const Mlp& net, const Matrix& x, BatchCache& cache) {
  prepare(net, x, cache);
  const int n = x.rows;
  for (int l = 0; l < net.num_layers(); ++l) {
    const int in = net.layer_in(l);
    const int out = net.layer_out(l);
    const double* w = net.params.data() + net.weight_offset(l);
    const double* b = net.params.data() + net.bias_offset(l);
    const bool hidden = l + 1 < net.num_layers();
    const Matrix& a = cache.acts[l];
    Matrix& z = cache.acts[l + 1];
#pragma omp parallel for schedule(static)
    for (int r = 0; r < n; ++r) dense_row(a.row(r), in, w, b, out, z.row(r));
    check_layer_finite(z, l);
    if (hidden) {
#pragma omp parallel for schedule(static)
      for (std::size_t k = 0; k < z.data.size(); ++k) z.data[k] = std::tanh(z.data[k]);
    }
  }
}

void forward_batch_serial(const Mlp& net, const Matrix& x, BatchCache& cache) {
  prepare(net, x, cache);
  ForwardCache single;
  for (int r = 0; r < x.rows; ++r) {
    forward(net, x.row_span(r), single);
    for (int l = 0; l < net.num_layers(); ++l) {
      std::copy(single.acts[l + 1].begin(), single.acts[l + 1].end(), cache.acts[l + 1].row(r));
    }
  }
}

void backward_batch(const Mlp& net, const BatchCache& cache, const Matrix& d_out, std::span<double> grad) {
  if (grad.size() != net.params.size()) throw ContractError("backward_batch: gradient size mismatch");
  const int n = d_out.rows;
  if (d_out.cols != net.shape.output || cache.acts.empty() || cache.acts[0].rows != n) {
    throw ContractError("backward_batch: d_out shape mismatch");
  }
  Matrix dz = d_out;
  Matrix da;
  for (int l = net.num_layers() - 1; l >= 0; --l) {
    const int in = net.layer_in(l);
    const int out = net.layer_out(l);
    const double* w = net.params.data() + net.weight_offset(l);
    double* gw = grad.data() + net.weight_offset(l);
    double* gb = grad.data() + net.bias_offset(l);
    const Matrix& a = cache.acts[l];

    // Each weight row accumulates samples in ascending order, matching the
    // per-sample reference exactly. Tiles keep a block of dz rows in cache
    // while a block of weight rows is updated.
    const int row_blocks = (in + kRowTile - 1) / kRowTile;
#pragma omp parallel for schedule(static)
    for (int ib = 0; ib < row_blocks; ++ib) {
      const int i_end = std::min(in, (ib + 1) * kRowTile);
      for (int r0 = 0; r0 < n; r0 += kSampleTile) {
        const int r_end = std::min(n, r0 + kSampleTile);
        for (int i = ib * kRowTile; i < i_end; ++i) {
          double* gwi = gw + static_cast<std::size_t>(i) * out;
          for (int r = r0; r < r_end; ++r) {
            const double ai = a(r, i);
            if (ai == 0.0) continue;
            const double* dzr = dz.row(r);
            for (int j = 0; j < out; ++j) gwi[j] += ai * dzr[j];
          }
        }
      }
    }
    for (int r = 0; r < n; ++r) {
      const double* dzr = dz.row(r);
      for (int j = 0; j < out; ++j) gb[j] += dzr[j];
    }
    if (l == 0) break;

    da = Matrix(n, in);
#pragma omp parallel for schedule(static)
    for (int r = 0; r < n; ++r) {
      const double* dzr = dz.row(r);
      const double* ar = a.row(r);
      double* dar = da.row(r);
      for (int i = 0; i < in; ++i) {
        const double* wi = w + static_cast<std::size_t>(i) * out;
        double s = 0.0;
        for (int j = 0; j < out; ++j) s += wi[j] * dzr[j];
        dar[i] = s * (1.0 - ar[i] * ar[i]);
      }
    }
    check_layer_finite(da, l - 1);
    std::swap(dz, da);
  }
}

void backward_batch_serial(const Mlp& net, const BatchCache& cache, const Matrix& d_out, std::span<double> grad) {
  ForwardCache single;
  single.acts.resize(net.num_layers() + 1);
  for (int r = 0; r < d_out.rows; ++r) {
    for (int l = 0; l <= net.num_layers(); ++l) {
      const Matrix& m = cache.acts[l];
      single.acts[l].assign(m.row(r), m.row(r) + m.cols);
    }
    backward(net, single, d_out.row_span(r), grad);
  }
}

}  // namespace ctf::nn
