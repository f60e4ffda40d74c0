#include "ltcm/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "ltcm/error.hpp"

namespace ltcm::ad {

using detail::attach;
using detail::make_output;

namespace {

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + a.shape_string() + " vs " +
                         b.shape_string());
  }
}

Node& in(Node& self, std::size_t i) { return *self.inputs[i]; }

double stable_sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// log(1 + exp(x)) without overflow.
double softplus(double x) {
  if (x > 0) return x + std::log1p(std::exp(-x));
  return std::log1p(std::exp(x));
}

template <class F>
Tensor unary(const Tensor& a, F f) {
  Tensor out = make_output(a.rows(), a.cols(), {a});
  auto av = a.value();
  auto ov = out.value();
  for (std::size_t i = 0; i < av.size(); ++i) ov[i] = f(av[i]);
  return out;
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.rows()) {
    throw DimensionError("matmul: inner dimensions disagree " + a.shape_string() + " x " +
                         b.shape_string());
  }
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  Tensor out = make_output(m, n, {a, b});
  const double* A = a.value().data();
  const double* B = b.value().data();
  double* C = out.value().data();
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = C + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = A[i * k + p];
      if (aip == 0.0) continue;
      const double* brow = B + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += aip * brow[j];
    }
  }
  attach(out, [m, k, n](Node& self) {
    Node& na = in(self, 0);
    Node& nb = in(self, 1);
    const double* G = self.grad.data();
    if (na.requires_grad) {
      // dA = G * B^T
      for (std::size_t i = 0; i < m; ++i) {
        const double* grow = G + i * n;
        for (std::size_t p = 0; p < k; ++p) {
          const double* brow = nb.value.data() + p * n;
          double s = 0.0;
          for (std::size_t j = 0; j < n; ++j) s += grow[j] * brow[j];
          na.grad[i * k + p] += s;
        }
      }
    }
    if (nb.requires_grad) {
      // dB = A^T * G
      for (std::size_t i = 0; i < m; ++i) {
        const double* grow = G + i * n;
        for (std::size_t p = 0; p < k; ++p) {
          const double aip = na.value[i * k + p];
          if (aip == 0.0) continue;
          double* bg = nb.grad.data() + p * n;
          for (std::size_t j = 0; j < n; ++j) bg[j] += aip * grow[j];
        }
      }
    }
  });
  return out;
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.cols()) {
    throw DimensionError("matmul_nt: inner dimensions disagree " + a.shape_string() + " x " +
                         b.shape_string() + "^T");
  }
  const std::size_t m = a.rows(), k = a.cols(), n = b.rows();
  Tensor out = make_output(m, n, {a, b});
  const double* A = a.value().data();
  const double* B = b.value().data();
  double* C = out.value().data();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += A[i * k + p] * B[j * k + p];
      C[i * n + j] = s;
    }
  }
  attach(out, [m, k, n](Node& self) {
    Node& na = in(self, 0);
    Node& nb = in(self, 1);
    const double* G = self.grad.data();
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        const double g = G[i * n + j];
        if (g == 0.0) continue;
        if (na.requires_grad) {
          for (std::size_t p = 0; p < k; ++p) na.grad[i * k + p] += g * nb.value[j * k + p];
        }
        if (nb.requires_grad) {
          for (std::size_t p = 0; p < k; ++p) nb.grad[j * k + p] += g * na.value[i * k + p];
        }
      }
    }
  });
  return out;
}

Tensor transpose(const Tensor& a) {
  const std::size_t m = a.rows(), n = a.cols();
  Tensor out = make_output(n, m, {a});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out.value()[j * m + i] = a.value()[i * n + j];
  attach(out, [m, n](Node& self) {
    Node& na = in(self, 0);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) na.grad[i * n + j] += self.grad[j * m + i];
  });
  return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  Tensor out = make_output(a.rows(), a.cols(), {a, b});
  for (std::size_t i = 0; i < a.size(); ++i) out.value()[i] = a.value()[i] + b.value()[i];
  attach(out, [](Node& self) {
    for (std::size_t k = 0; k < 2; ++k) {
      Node& n = in(self, k);
      if (!n.requires_grad) continue;
      for (std::size_t i = 0; i < self.grad.size(); ++i) n.grad[i] += self.grad[i];
    }
  });
  return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  Tensor out = make_output(a.rows(), a.cols(), {a, b});
  for (std::size_t i = 0; i < a.size(); ++i) out.value()[i] = a.value()[i] - b.value()[i];
  attach(out, [](Node& self) {
    Node& na = in(self, 0);
    Node& nb = in(self, 1);
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      if (na.requires_grad) na.grad[i] += self.grad[i];
      if (nb.requires_grad) nb.grad[i] -= self.grad[i];
    }
  });
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  Tensor out = make_output(a.rows(), a.cols(), {a, b});
  for (std::size_t i = 0; i < a.size(); ++i) out.value()[i] = a.value()[i] * b.value()[i];
  attach(out, [](Node& self) {
    Node& na = in(self, 0);
    Node& nb = in(self, 1);
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      if (na.requires_grad) na.grad[i] += self.grad[i] * nb.value[i];
      if (nb.requires_grad) nb.grad[i] += self.grad[i] * na.value[i];
    }
  });
  return out;
}

Tensor scale(const Tensor& a, double c) {
  Tensor out = unary(a, [c](double x) { return c * x; });
  attach(out, [c](Node& self) {
    Node& na = in(self, 0);
    for (std::size_t i = 0; i < self.grad.size(); ++i) na.grad[i] += c * self.grad[i];
  });
  return out;
}

Tensor add_scalar(const Tensor& a, double c) {
  Tensor out = unary(a, [c](double x) { return x + c; });
  attach(out, [](Node& self) {
    Node& na = in(self, 0);
    for (std::size_t i = 0; i < self.grad.size(); ++i) na.grad[i] += self.grad[i];
  });
  return out;
}

Tensor add_row(const Tensor& a, const Tensor& bias) {
  if (bias.rows() != 1 || bias.cols() != a.cols()) {
    throw DimensionError("add_row: bias " + bias.shape_string() + " does not broadcast over " +
                         a.shape_string());
  }
  const std::size_t m = a.rows(), n = a.cols();
  Tensor out = make_output(m, n, {a, bias});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out.value()[i * n + j] = a.value()[i * n + j] + bias.value()[j];
  attach(out, [m, n](Node& self) {
    Node& na = in(self, 0);
    Node& nb = in(self, 1);
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        const double g = self.grad[i * n + j];
        if (na.requires_grad) na.grad[i * n + j] += g;
        if (nb.requires_grad) nb.grad[j] += g;
      }
    }
  });
  return out;
}

Tensor sigmoid(const Tensor& a) {
  Tensor out = unary(a, stable_sigmoid);
  attach(out, [](Node& self) {
    Node& na = in(self, 0);
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      const double y = self.value[i];
      na.grad[i] += self.grad[i] * y * (1.0 - y);
    }
  });
  return out;
}

Tensor tanh(const Tensor& a) {
  Tensor out = unary(a, [](double x) { return std::tanh(x); });
  attach(out, [](Node& self) {
    Node& na = in(self, 0);
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      const double y = self.value[i];
      na.grad[i] += self.grad[i] * (1.0 - y * y);
    }
  });
  return out;
}

Tensor exp(const Tensor& a) {
  Tensor out = unary(a, [](double x) { return std::exp(x); });
  attach(out, [](Node& self) {
    Node& na = in(self, 0);
    for (std::size_t i = 0; i < self.grad.size(); ++i) na.grad[i] += self.grad[i] * self.value[i];
  });
  return out;
}

Tensor log(const Tensor& a) {
  Tensor out = unary(a, [](double x) { return std::log(x); });
  attach(out, [](Node& self) {
    Node& na = in(self, 0);
    for (std::size_t i = 0; i < self.grad.size(); ++i) na.grad[i] += self.grad[i] / na.value[i];
  });
  return out;
}

Tensor square(const Tensor& a) {
  Tensor out = unary(a, [](double x) { return x * x; });
  attach(out, [](Node& self) {
    Node& na = in(self, 0);
    for (std::size_t i = 0; i < self.grad.size(); ++i) na.grad[i] += 2.0 * self.grad[i] * na.value[i];
  });
  return out;
}

Tensor sum(const Tensor& a) {
  Tensor out = make_output(1, 1, {a});
  double s = 0.0;
  for (double v : a.value()) s += v;
  out.value()[0] = s;
  attach(out, [](Node& self) {
    Node& na = in(self, 0);
    const double g = self.grad[0];
    for (double& x : na.grad) x += g;
  });
  return out;
}

Tensor sum_rows(const Tensor& a) {
  const std::size_t m = a.rows(), n = a.cols();
  Tensor out = make_output(m, 1, {a});
  for (std::size_t i = 0; i < m; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) s += a.value()[i * n + j];
    out.value()[i] = s;
  }
  attach(out, [m, n](Node& self) {
    Node& na = in(self, 0);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) na.grad[i * n + j] += self.grad[i];
  });
  return out;
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw DimensionError("concat_cols: no inputs");
  const std::size_t m = parts[0].rows();
  std::size_t n = 0;
  for (const auto& p : parts) {
    if (p.rows() != m) {
      throw DimensionError("concat_cols: row mismatch " + parts[0].shape_string() + " vs " +
                           p.shape_string());
    }
    n += p.cols();
  }
  Tensor out = make_output(m, n, parts);
  std::size_t offset = 0;
  std::vector<std::size_t> widths;
  for (const auto& p : parts) {
    const std::size_t w = p.cols();
    for (std::size_t i = 0; i < m; ++i)
      std::copy_n(p.value().data() + i * w, w, out.value().data() + i * n + offset);
    offset += w;
    widths.push_back(w);
  }
  attach(out, [m, n, widths](Node& self) {
    std::size_t off = 0;
    for (std::size_t k = 0; k < widths.size(); ++k) {
      Node& np = in(self, k);
      const std::size_t w = widths[k];
      if (np.requires_grad) {
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < w; ++j) np.grad[i * w + j] += self.grad[i * n + off + j];
      }
      off += w;
    }
  });
  return out;
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw DimensionError("concat_rows: no inputs");
  const std::size_t n = parts[0].cols();
  std::size_t m = 0;
  for (const auto& p : parts) {
    if (p.cols() != n) {
      throw DimensionError("concat_rows: column mismatch " + parts[0].shape_string() + " vs " +
                           p.shape_string());
    }
    m += p.rows();
  }
  Tensor out = make_output(m, n, parts);
  std::size_t offset = 0;
  for (const auto& p : parts) {
    std::copy(p.value().begin(), p.value().end(), out.value().begin() + offset);
    offset += p.size();
  }
  attach(out, [](Node& self) {
    std::size_t off = 0;
    for (std::size_t k = 0; k < self.inputs.size(); ++k) {
      Node& np = in(self, k);
      if (np.requires_grad) {
        for (std::size_t i = 0; i < np.grad.size(); ++i) np.grad[i] += self.grad[off + i];
      }
      off += np.value.size();
    }
  });
  return out;
}

Tensor slice_cols(const Tensor& a, std::size_t begin, std::size_t end) {
  if (begin > end || end > a.cols()) {
    throw DimensionError("slice_cols: [" + std::to_string(begin) + ", " + std::to_string(end) +
                         ") out of range for " + a.shape_string());
  }
  const std::size_t m = a.rows(), n = a.cols(), w = end - begin;
  Tensor out = make_output(m, w, {a});
  for (std::size_t i = 0; i < m; ++i)
    std::copy_n(a.value().data() + i * n + begin, w, out.value().data() + i * w);
  attach(out, [m, n, w, begin](Node& self) {
    Node& na = in(self, 0);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < w; ++j) na.grad[i * n + begin + j] += self.grad[i * w + j];
  });
  return out;
}

Tensor tile_rows(const Tensor& a, std::size_t times) {
  const std::size_t m = a.rows(), n = a.cols();
  Tensor out = make_output(m * times, n, {a});
  for (std::size_t t = 0; t < times; ++t)
    std::copy(a.value().begin(), a.value().end(), out.value().begin() + t * m * n);
  attach(out, [m, n, times](Node& self) {
    Node& na = in(self, 0);
    for (std::size_t t = 0; t < times; ++t)
      for (std::size_t i = 0; i < m * n; ++i) na.grad[i] += self.grad[t * m * n + i];
  });
  return out;
}

Tensor gather_rows(const Tensor& table, std::span<const int> ids) {
  const std::size_t n = table.cols();
  const std::size_t m = ids.size();
  for (int id : ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= table.rows()) {
      throw DimensionError("gather_rows: id " + std::to_string(id) + " out of range for " +
                           table.shape_string());
    }
  }
  Tensor out = make_output(m, n, {table});
  for (std::size_t i = 0; i < m; ++i)
    std::copy_n(table.value().data() + static_cast<std::size_t>(ids[i]) * n, n,
                out.value().data() + i * n);
  std::vector<int> idx(ids.begin(), ids.end());
  attach(out, [n, idx = std::move(idx)](Node& self) {
    Node& nt = in(self, 0);
    for (std::size_t i = 0; i < idx.size(); ++i) {
      double* dst = nt.grad.data() + static_cast<std::size_t>(idx[i]) * n;
      for (std::size_t j = 0; j < n; ++j) dst[j] += self.grad[i * n + j];
    }
  });
  return out;
}

Tensor softmax_rows(const Tensor& a) {
  const std::size_t m = a.rows(), n = a.cols();
  if (n == 0) throw DimensionError("softmax over an empty row");
  Tensor out = make_output(m, n, {a});
  for (std::size_t i = 0; i < m; ++i) {
    const double* x = a.value().data() + i * n;
    double* y = out.value().data() + i * n;
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < n; ++j) {
      if (std::isnan(x[j])) throw NumericError("softmax: NaN input");
      mx = std::max(mx, x[j]);
    }
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) z += (y[j] = std::exp(x[j] - mx));
    for (std::size_t j = 0; j < n; ++j) y[j] /= z;
  }
  attach(out, [m, n](Node& self) {
    Node& na = in(self, 0);
    for (std::size_t i = 0; i < m; ++i) {
      const double* y = self.value.data() + i * n;
      const double* g = self.grad.data() + i * n;
      double dot = 0.0;
      for (std::size_t j = 0; j < n; ++j) dot += g[j] * y[j];
      for (std::size_t j = 0; j < n; ++j) na.grad[i * n + j] += y[j] * (g[j] - dot);
    }
  });
  return out;
}

Tensor log_softmax_rows(const Tensor& a) {
  const std::size_t m = a.rows(), n = a.cols();
  if (n == 0) throw DimensionError("log_softmax over an empty row");
  Tensor out = make_output(m, n, {a});
  for (std::size_t i = 0; i < m; ++i) {
    const double* x = a.value().data() + i * n;
    double* y = out.value().data() + i * n;
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < n; ++j) {
      if (std::isnan(x[j])) throw NumericError("log_softmax: NaN input");
      mx = std::max(mx, x[j]);
    }
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) z += std::exp(x[j] - mx);
    const double lz = mx + std::log(z);
    for (std::size_t j = 0; j < n; ++j) y[j] = x[j] - lz;
  }
  attach(out, [m, n](Node& self) {
    Node& na = in(self, 0);
    for (std::size_t i = 0; i < m; ++i) {
      const double* y = self.value.data() + i * n;
      const double* g = self.grad.data() + i * n;
      double gs = 0.0;
      for (std::size_t j = 0; j < n; ++j) gs += g[j];
      for (std::size_t j = 0; j < n; ++j) na.grad[i * n + j] += g[j] - std::exp(y[j]) * gs;
    }
  });
  return out;
}

Tensor softmax_cols(const Tensor& a) { return transpose(softmax_rows(transpose(a))); }

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, std::size_t groups,
                  double eps) {
  const std::size_t m = x.rows(), n = x.cols();
  if (groups == 0 || n % groups != 0) {
    throw DimensionError("layer_norm: " + std::to_string(n) + " columns not divisible into " +
                         std::to_string(groups) + " groups");
  }
  const std::size_t w = n / groups;
  if (w < 2) throw DimensionError("layer_norm: needs at least 2 entries per group");
  if (gain.rows() != 1 || gain.cols() != n || bias.rows() != 1 || bias.cols() != n) {
    throw DimensionError("layer_norm: gain/bias " + gain.shape_string() + "/" + bias.shape_string() +
                         " do not match " + x.shape_string());
  }
  Tensor out = make_output(m, n, {x, gain, bias});
  // normalised values and inverse std per (row, group), kept for backward
  std::vector<double> xhat(m * n);
  std::vector<double> inv_std(m * groups);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t g = 0; g < groups; ++g) {
      const double* xv = x.value().data() + i * n + g * w;
      double mean = 0.0;
      for (std::size_t j = 0; j < w; ++j) mean += xv[j];
      mean /= static_cast<double>(w);
      double var = 0.0;
      for (std::size_t j = 0; j < w; ++j) var += (xv[j] - mean) * (xv[j] - mean);
      var /= static_cast<double>(w);
      const double is = 1.0 / std::sqrt(var + eps);
      inv_std[i * groups + g] = is;
      for (std::size_t j = 0; j < w; ++j) {
        const std::size_t k = i * n + g * w + j;
        xhat[k] = (xv[j] - mean) * is;
        out.value()[k] = xhat[k] * gain.value()[g * w + j] + bias.value()[g * w + j];
      }
    }
  }
  attach(out, [m, n, w, groups, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node& self) {
    Node& nx = in(self, 0);
    Node& ng = in(self, 1);
    Node& nb = in(self, 2);
    const double wd = static_cast<double>(w);
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t g = 0; g < groups; ++g) {
        const std::size_t base = i * n + g * w;
        double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
        for (std::size_t j = 0; j < w; ++j) {
          const double gy = self.grad[base + j];
          if (ng.requires_grad) ng.grad[g * w + j] += gy * xhat[base + j];
          if (nb.requires_grad) nb.grad[g * w + j] += gy;
          const double dxh = gy * ng.value[g * w + j];
          sum_dxhat += dxh;
          sum_dxhat_xhat += dxh * xhat[base + j];
        }
        if (!nx.requires_grad) continue;
        const double is = inv_std[i * groups + g];
        for (std::size_t j = 0; j < w; ++j) {
          const double dxh = self.grad[base + j] * ng.value[g * w + j];
          nx.grad[base + j] += is / wd * (wd * dxh - sum_dxhat - xhat[base + j] * sum_dxhat_xhat);
        }
      }
    }
  });
  return out;
}

Tensor dropout(const Tensor& x, double rate, bool training, Rng& rng) {
  if (!(rate >= 0.0 && rate < 1.0)) {
    throw ConfigError("dropout rate must lie in [0, 1), got " + std::to_string(rate));
  }
  if (!training || rate == 0.0) return x;
  const double keep_scale = 1.0 / (1.0 - rate);
  std::vector<double> mask(x.size());
  for (double& v : mask) v = uniform01(rng) < rate ? 0.0 : keep_scale;
  Tensor out = make_output(x.rows(), x.cols(), {x});
  for (std::size_t i = 0; i < x.size(); ++i) out.value()[i] = x.value()[i] * mask[i];
  attach(out, [mask = std::move(mask)](Node& self) {
    Node& nx = in(self, 0);
    for (std::size_t i = 0; i < mask.size(); ++i) nx.grad[i] += self.grad[i] * mask[i];
  });
  return out;
}

Tensor blend_rows(const Tensor& fresh, const Tensor& old, std::span<const double> mask) {
  require_same_shape(fresh, old, "blend_rows");
  if (mask.size() != fresh.rows()) {
    throw DimensionError("blend_rows: mask length " + std::to_string(mask.size()) + " for " +
                         fresh.shape_string());
  }
  const std::size_t m = fresh.rows(), n = fresh.cols();
  Tensor out = make_output(m, n, {fresh, old});
  for (std::size_t i = 0; i < m; ++i) {
    const auto& src = mask[i] != 0.0 ? fresh : old;
    std::copy_n(src.value().data() + i * n, n, out.value().data() + i * n);
  }
  std::vector<double> mk(mask.begin(), mask.end());
  attach(out, [m, n, mk = std::move(mk)](Node& self) {
    Node& nf = in(self, 0);
    Node& no = in(self, 1);
    for (std::size_t i = 0; i < m; ++i) {
      Node& dst = mk[i] != 0.0 ? nf : no;
      if (!dst.requires_grad) continue;
      for (std::size_t j = 0; j < n; ++j) dst.grad[i * n + j] += self.grad[i * n + j];
    }
  });
  return out;
}

Tensor lstm_activations(const Tensor& pre) {
  const std::size_t m = pre.rows(), n = pre.cols();
  if (n % 4 != 0) throw DimensionError("lstm_activations: width " + std::to_string(n) + " not 4d");
  const std::size_t d = n / 4;
  Tensor out = make_output(m, n, {pre});
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      const double x = pre.value()[i * n + j];
      out.value()[i * n + j] = j < 3 * d ? stable_sigmoid(x) : std::tanh(x);
    }
  }
  attach(out, [m, n, d](Node& self) {
    Node& np = in(self, 0);
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        const double y = self.value[i * n + j];
        const double dy = j < 3 * d ? y * (1.0 - y) : 1.0 - y * y;
        np.grad[i * n + j] += self.grad[i * n + j] * dy;
      }
    }
  });
  return out;
}

Tensor lstm_cell_state(const Tensor& act, const Tensor& c_prev) {
  const std::size_t m = c_prev.rows(), d = c_prev.cols();
  if (act.rows() != m || act.cols() != 4 * d) {
    throw DimensionError("lstm_cell_state: activations " + act.shape_string() + " vs state " +
                         c_prev.shape_string());
  }
  Tensor out = make_output(m, d, {act, c_prev});
  for (std::size_t i = 0; i < m; ++i) {
    const double* a = act.value().data() + i * 4 * d;
    for (std::size_t j = 0; j < d; ++j) {
      out.value()[i * d + j] = a[d + j] * c_prev.value()[i * d + j] + a[j] * a[3 * d + j];
    }
  }
  attach(out, [m, d](Node& self) {
    Node& na = in(self, 0);
    Node& nc = in(self, 1);
    for (std::size_t i = 0; i < m; ++i) {
      const double* a = na.value.data() + i * 4 * d;
      for (std::size_t j = 0; j < d; ++j) {
        const double g = self.grad[i * d + j];
        if (na.requires_grad) {
          double* ga = na.grad.data() + i * 4 * d;
          ga[j] += g * a[3 * d + j];
          ga[d + j] += g * nc.value[i * d + j];
          ga[3 * d + j] += g * a[j];
        }
        if (nc.requires_grad) nc.grad[i * d + j] += g * a[d + j];
      }
    }
  });
  return out;
}

Tensor lstm_hidden(const Tensor& act, const Tensor& c) {
  const std::size_t m = c.rows(), d = c.cols();
  if (act.rows() != m || act.cols() != 4 * d) {
    throw DimensionError("lstm_hidden: activations " + act.shape_string() + " vs state " +
                         c.shape_string());
  }
  Tensor out = make_output(m, d, {act, c});
  std::vector<double> tc(m * d);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < d; ++j) {
      tc[i * d + j] = std::tanh(c.value()[i * d + j]);
      out.value()[i * d + j] = act.value()[i * 4 * d + 2 * d + j] * tc[i * d + j];
    }
  }
  attach(out, [m, d, tc = std::move(tc)](Node& self) {
    Node& na = in(self, 0);
    Node& nc = in(self, 1);
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < d; ++j) {
        const double g = self.grad[i * d + j];
        const double t = tc[i * d + j];
        const double o = na.value[i * 4 * d + 2 * d + j];
        if (na.requires_grad) na.grad[i * 4 * d + 2 * d + j] += g * t;
        if (nc.requires_grad) nc.grad[i * d + j] += g * o * (1.0 - t * t);
      }
    }
  });
  return out;
}

Tensor gated_add(const Tensor& base, const Tensor& topic, std::span<const double> row_gate,
                 std::span<const double> col_mask) {
  require_same_shape(base, topic, "gated_add");
  const std::size_t m = base.rows(), n = base.cols();
  if (row_gate.size() != m || col_mask.size() != n) {
    throw DimensionError("gated_add: gate/mask lengths do not match " + base.shape_string());
  }
  Tensor out = make_output(m, n, {base, topic});
  std::copy(base.value().begin(), base.value().end(), out.value().begin());
  for (std::size_t i = 0; i < m; ++i) {
    if (row_gate[i] == 0.0) continue;
    for (std::size_t j = 0; j < n; ++j) {
      if (col_mask[j] != 0.0) out.value()[i * n + j] += row_gate[i] * topic.value()[i * n + j];
    }
  }
  std::vector<double> gate(row_gate.begin(), row_gate.end());
  std::vector<double> cmask(col_mask.begin(), col_mask.end());
  attach(out, [m, n, gate = std::move(gate), cmask = std::move(cmask)](Node& self) {
    Node& nb = in(self, 0);
    Node& nt = in(self, 1);
    if (nb.requires_grad) {
      for (std::size_t i = 0; i < m * n; ++i) nb.grad[i] += self.grad[i];
    }
    if (!nt.requires_grad) return;
    for (std::size_t i = 0; i < m; ++i) {
      if (gate[i] == 0.0) continue;
      for (std::size_t j = 0; j < n; ++j) {
        if (cmask[j] != 0.0) nt.grad[i * n + j] += gate[i] * self.grad[i * n + j];
      }
    }
  });
  return out;
}

Tensor masked_cross_entropy(const Tensor& logits, std::span<const int> targets,
                            std::span<const double> mask) {
  const std::size_t m = logits.rows(), n = logits.cols();
  if (targets.size() != m || mask.size() != m) {
    throw DimensionError("masked_cross_entropy: " + std::to_string(targets.size()) +
                         " targets for logits " + logits.shape_string());
  }
  Tensor out = make_output(1, 1, {logits});
  std::vector<double> probs(m * n);
  double total = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    if (mask[i] == 0.0) continue;
    const int y = targets[i];
    if (y < 0 || static_cast<std::size_t>(y) >= n) {
      throw DimensionError("masked_cross_entropy: target " + std::to_string(y) + " out of range");
    }
    const double* x = logits.value().data() + i * n;
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < n; ++j) {
      if (std::isnan(x[j])) throw NumericError("masked_cross_entropy: NaN logit");
      mx = std::max(mx, x[j]);
    }
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) z += (probs[i * n + j] = std::exp(x[j] - mx));
    for (std::size_t j = 0; j < n; ++j) probs[i * n + j] /= z;
    total += mask[i] * (mx + std::log(z) - x[y]);
  }
  out.value()[0] = total;
  std::vector<int> tg(targets.begin(), targets.end());
  std::vector<double> mk(mask.begin(), mask.end());
  attach(out, [m, n, probs = std::move(probs), tg = std::move(tg), mk = std::move(mk)](Node& self) {
    Node& nl = in(self, 0);
    const double g = self.grad[0];
    for (std::size_t i = 0; i < m; ++i) {
      if (mk[i] == 0.0) continue;
      const double s = g * mk[i];
      for (std::size_t j = 0; j < n; ++j) nl.grad[i * n + j] += s * probs[i * n + j];
      nl.grad[i * n + static_cast<std::size_t>(tg[i])] -= s;
    }
  });
  return out;
}

Tensor bernoulli_log_likelihood(const Tensor& logits, std::span<const double> labels,
                                std::span<const double> mask) {
  const std::size_t m = logits.rows();
  if (logits.cols() != 1 || labels.size() != m || mask.size() != m) {
    throw DimensionError("bernoulli_log_likelihood: expects [m x 1] logits with m labels, got " +
                         logits.shape_string());
  }
  Tensor out = make_output(1, 1, {logits});
  double total = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    if (mask[i] == 0.0) continue;
    const double z = logits.value()[i];
    // log sigmoid(z) = -softplus(-z); log(1 - sigmoid(z)) = -softplus(z)
    total += mask[i] * (labels[i] * -softplus(-z) + (1.0 - labels[i]) * -softplus(z));
  }
  out.value()[0] = total;
  std::vector<double> lb(labels.begin(), labels.end());
  std::vector<double> mk(mask.begin(), mask.end());
  attach(out, [m, lb = std::move(lb), mk = std::move(mk)](Node& self) {
    Node& nl = in(self, 0);
    const double g = self.grad[0];
    for (std::size_t i = 0; i < m; ++i) {
      if (mk[i] == 0.0) continue;
      nl.grad[i] += g * mk[i] * (lb[i] - stable_sigmoid(nl.value[i]));
    }
  });
  return out;
}

Tensor weighted_log_sum(const Tensor& p, std::span<const double> weights) {
  if (weights.size() != p.size()) {
    throw DimensionError("weighted_log_sum: " + std::to_string(weights.size()) +
                         " weights for " + p.shape_string());
  }
  Tensor out = make_output(1, 1, {p});
  double total = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (weights[i] != 0.0) total += weights[i] * std::log(p.value()[i]);
  }
  out.value()[0] = total;
  std::vector<double> w(weights.begin(), weights.end());
  attach(out, [w = std::move(w)](Node& self) {
    Node& np = in(self, 0);
    const double g = self.grad[0];
    for (std::size_t i = 0; i < w.size(); ++i) {
      if (w[i] != 0.0) np.grad[i] += g * w[i] / np.value[i];
    }
  });
  return out;
}

}  // namespace ltcm::ad
